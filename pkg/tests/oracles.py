"""Independent oracles for the test suite.

Everything here is deliberately written *without* the package's vectorized
Liouvillian machinery: optical Bloch equations integrated with a high-order
explicit Runge-Kutta method, plus textbook closed forms.  Agreement between
these and the package is what the unit tests assert.
"""

import numpy as np
from scipy.integrate import solve_ivp


def bloch_rhs(t, y, omega, gamma, gamma_pd, delta):
    """Optical Bloch equations for (p_x, Re rho_xg, Im rho_xg).

    rho_xg = <x|rho|g> is the expectation value of the lowering operator.
    Coherence decays at gamma/2 + gamma_pd; populations at gamma.
    """
    p, re, im = y
    g2tot = 0.5 * gamma + gamma_pd
    dp = -gamma * p - omega * im
    dre = -g2tot * re + delta * im
    dim = -g2tot * im - delta * re + 0.5 * omega * (2 * p - 1)
    return [dp, dre, dim]


def integrate_bloch(y0, taus, omega, gamma, gamma_pd=0.0, delta=0.0):
    """Integrate the Bloch equations from y0, sampled at taus (sorted, >=0)."""
    taus = np.asarray(taus, float)
    sol = solve_ivp(
        bloch_rhs,
        (0.0, float(taus.max()) if taus.size else 0.0),
        y0,
        t_eval=taus,
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        args=(omega, gamma, gamma_pd, delta),
    )
    assert sol.success
    return sol.y


def steady_bloch(omega, gamma, gamma_pd=0.0):
    """Resonant steady state: (p_x, rho_xg) closed form."""
    g2tot = 0.5 * gamma + gamma_pd
    p = omega**2 / (2.0 * (gamma * g2tot + omega**2))
    coh = -1j * 0.5 * omega * (1.0 - 2.0 * p) / g2tot
    return p, coh


def g2_bare_oracle(taus, omega, gamma, gamma_pd=0.0):
    """g2 of bare emission, resonant drive: p_x(tau | start in g) / p_x(ss).

    After a detection the emitter is projected to |g>; the conditional excited
    population re-grows according to the Bloch equations.
    """
    p_ss, _ = steady_bloch(omega, gamma, gamma_pd)
    y = integrate_bloch([0.0, 0.0, 0.0], taus, omega, gamma, gamma_pd)
    return y[0] / p_ss


def g2_bare_analytic(taus, omega, gamma):
    """Closed form for the transform-limited resonant case (omega > gamma/4)."""
    taus = np.asarray(taus, float)
    mu = np.sqrt(omega**2 - gamma**2 / 16.0)
    return 1.0 - np.exp(-0.75 * gamma * taus) * (
        np.cos(mu * taus) + (0.75 * gamma / mu) * np.sin(mu * taus)
    )


def displaced_intensity(f_mix, phase, omega, gamma, gamma_pd=0.0):
    """Mean count rate (per Gamma) of the self-homodyned detector.

    With beta = f * <sigma>_ss * e^{i phi}:
    <s^dag s> = p_x + 2 f M^2 cos(phi) + f^2 M^2, M = |<sigma>_ss|.
    """
    p, coh = steady_bloch(omega, gamma, gamma_pd)
    m2 = abs(coh) ** 2
    return p + 2.0 * f_mix * m2 * np.cos(phase) + f_mix**2 * m2


def gn_zero_oracle(n, f_mix, phase, omega, gamma, gamma_pd=0.0):
    """Normalized zero-delay n-photon coincidence of the mixed detector.

    Uses sigma^2 = 0: s^n = beta^n + n beta^(n-1) sigma, so
    G(n)(0) = |b|^2n + n^2 |b|^(2n-2) p + 2 n |b|^(2n-1) M cos(phi)
    with b = f M (modulus) and the phase entering through cos(phi).
    """
    p, coh = steady_bloch(omega, gamma, gamma_pd)
    m = abs(coh)
    b = f_mix * m
    raw = (
        b ** (2 * n)
        + n * n * b ** (2 * n - 2) * p
        + 2.0 * n * b ** (2 * n - 1) * m * np.cos(phase)
    )
    return raw / displaced_intensity(f_mix, phase, omega, gamma, gamma_pd) ** n


def gaussian_convolve_oracle(taus, values, fwhm):
    """Direct quadrature Gaussian smoothing on a uniform grid (edge-padded)."""
    taus = np.asarray(taus, float)
    values = np.asarray(values, float)
    dt = taus[1] - taus[0]
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    radius = int(np.ceil(4.0 * sigma / dt))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets * dt / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.concatenate(
        [np.full(radius, values[0]), values, np.full(radius, values[-1])]
    )
    return np.convolve(padded, kernel, mode="valid")
