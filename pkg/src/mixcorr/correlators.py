"""Correlation functions of mixed emission via the quantum regression theorem.

All correlators share one bookkeeping rule set:

* two-sided:  <O1(t) X(t+tau) O3(t)> = Tr[X e^{L tau}(O3 rho O1)]
* one-sided:  <X(t+tau) B(t)> = Tr[X e^{L tau}(B rho)]
              <B(t) X(t+tau)> = Tr[X e^{L tau}(rho B)]

Detection through the mixing interferometer replaces the bare lowering
operator sigma with the displaced operator s = sigma + beta*1, where
beta = f_mix * <sigma>_ss * e^{i phase} is tied to the steady-state
coherence at the *current* parameters (never cached across parameter
changes).  Negative delays are always obtained by swapping which detector
fires first — never by backward propagation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from .dynamics import (
    IDENT2,
    SIGMA,
    SIGMA_DAG,
    DensityMatrix,
    Superoperator,
    SystemParams,
    build_liouvillian,
    evolve_state,
    steady_state,
    two_time_values,
)

__all__ = [
    "CorrelatorError",
    "MixConfig",
    "DetectorRole",
    "CorrelationCurve",
    "CorrelationMap3",
    "qrt_sandwich",
    "intensity",
    "g1",
    "g2",
    "g2_terms_crossco",
    "g2_terms_coco",
    "g3_map",
    "gn_zero_delay",
    "irf_convolve",
    "default_delay_grid",
]

TAIL_QUENCH_MESSAGE = (
    "destructive interference quenched the tail; "
    "use intensity-product normalization"
)

#: fraction of the maximum |delay| that defines the tail-averaging window
TAIL_FRACTION = 0.9


class CorrelatorError(RuntimeError):
    pass


@dataclass(frozen=True)
class MixConfig:
    """Interferometric mixing of the emission with the driving laser.

    ``f_mix`` scales the laser amplitude relative to the steady-state
    coherence; ``phase`` is the relative phase in radians.
    """

    f_mix: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if self.f_mix < 0:
            raise ValueError("f_mix must be non-negative")

    def beta(self, sigma_ss: complex) -> complex:
        """Laser amplitude in emitter units for a given steady-state coherence."""
        return self.f_mix * sigma_ss * np.exp(1j * self.phase)


class DetectorRole(Enum):
    """What a detector sees: bare emission (Cross) or emission + laser (Co)."""

    CROSS = "cross"
    CO = "co"

    def operator(self, beta: complex) -> np.ndarray:
        if self is DetectorRole.CROSS:
            return SIGMA
        return SIGMA + beta * IDENT2


@lru_cache(maxsize=128)
def _context(params: SystemParams):
    """(Liouvillian, steady state, steady coherence) for a parameter set."""
    lv = build_liouvillian(params)
    rho = steady_state(lv)
    return lv, rho.elements, rho.coherence


def _real(values: np.ndarray, what: str) -> np.ndarray:
    """Drop a numerically tiny imaginary part, loudly if it is not tiny."""
    scale = max(1.0, float(np.abs(values.real).max(initial=0.0)))
    worst = float(np.abs(values.imag).max(initial=0.0))
    if worst > 1e-9 * scale:
        raise CorrelatorError(
            f"{what} came out non-real (imag up to {worst:.3e}); "
            "this indicates an operator-ordering bug"
        )
    return values.real.copy()


def qrt_sandwich(
    liouvillian: Superoperator,
    rho_in: np.ndarray | DensityMatrix,
    left: np.ndarray,
    right: np.ndarray,
) -> np.ndarray:
    """Conditional operator right . rho . left fed to the next propagation.

    Pure algebra — the generator argument is accepted only so call sites
    read like the propagate/sandwich/propagate chain they implement.
    """
    if isinstance(rho_in, DensityMatrix):
        rho_in = rho_in.elements
    return right @ rho_in @ left


def intensity(params: SystemParams, mix: MixConfig, role: DetectorRole) -> float:
    """Steady-state count rate <O^dag O> of one detector (dimensionless)."""
    _, rho, coh = _context(params)
    op = role.operator(mix.beta(coh))
    return float(np.trace(op.conj().T @ op @ rho).real)


def default_delay_grid(
    span: float = 5.0, points: int = 2001, two_sided: bool = True
) -> np.ndarray:
    """Uniform delay grid in ns, exactly negation-symmetric when two-sided.

    Built by mirroring the positive half so that grid[::-1] == -grid bit for
    bit (odd point count required two-sided); this is what makes the
    role-swap symmetry of two-detector curves exact in floating point.
    """
    if not two_sided:
        return np.linspace(0.0, span, points)
    if points % 2 == 0:
        raise ValueError("two-sided delay grids need an odd point count")
    positive = np.linspace(0.0, span, (points + 1) // 2)
    return np.concatenate([-positive[:0:-1], positive])


# --------------------------------------------------------------------------
# result containers


@dataclass
class CorrelationCurve:
    """A correlation function sampled on a delay grid.

    ``raw`` holds the unnormalized correlator; ``normalization`` the constant
    dividing it (None when mode is "none").  ``terms`` optionally carries the
    named decomposition channels, in raw units, summing to ``raw``.
    """

    delays: np.ndarray
    raw: np.ndarray
    normalization: float | None
    mode: str
    terms: dict[str, np.ndarray] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        if self.normalization is None:
            raise CorrelatorError(
                "curve is unnormalized; re-evaluate with a normalization mode "
                "or divide raw values yourself"
            )
        return self.raw / self.normalization

    def term_normalized(self, name: str) -> np.ndarray:
        if not self.terms or name not in self.terms:
            raise KeyError(name)
        if self.normalization is None:
            raise CorrelatorError("curve is unnormalized")
        return self.terms[name] / self.normalization

    def _columns(self):
        cols: list[tuple[str, np.ndarray]] = [("delay_ns", self.delays)]
        if np.iscomplexobj(self.raw):
            cols += [("raw_re", self.raw.real), ("raw_im", self.raw.imag)]
        else:
            cols.append(("raw", self.raw))
        if self.normalization is not None and not np.iscomplexobj(self.raw):
            cols.append(("normalized", self.normalized))
        if self.terms:
            for name, values in self.terms.items():
                cols.append((f"term_{name}", values))
                if self.normalization is not None:
                    cols.append((f"term_{name}_normalized", values / self.normalization))
        return cols

    def to_csv(self, path):
        cols = self._columns()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([name for name, _ in cols])
            for i in range(len(self.delays)):
                writer.writerow([f"{col[i]:.15g}" for _, col in cols])

    def envelope(self) -> dict:
        payload = {
            "kind": "correlation_curve",
            "normalization": {"mode": self.mode, "constant": self.normalization},
            "delays_ns": self.delays.tolist(),
        }
        if np.iscomplexobj(self.raw):
            payload["raw_re"] = self.raw.real.tolist()
            payload["raw_im"] = self.raw.imag.tolist()
        else:
            payload["raw"] = self.raw.tolist()
            if self.normalization is not None:
                payload["normalized"] = self.normalized.tolist()
        if self.terms:
            payload["terms"] = {k: v.tolist() for k, v in self.terms.items()}
        payload.update(self.meta)
        return payload

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.envelope(), fh, indent=1)
            fh.write("\n")


@dataclass
class CorrelationMap3:
    """Third-order correlation sampled on a (tau_12, tau_13) grid.

    ``raw[i, j]`` corresponds to ``delays_12[i]``, ``delays_13[j]``.
    """

    delays_12: np.ndarray
    delays_13: np.ndarray
    raw: np.ndarray
    normalization: float | None
    mode: str
    meta: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        if self.normalization is None:
            raise CorrelatorError("map is unnormalized")
        return self.raw / self.normalization

    def to_csv(self, path):
        norm = self.normalization
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["tau12_ns", "tau13_ns", "raw"]
            if norm is not None:
                header.append("normalized")
            writer.writerow(header)
            for i, t12 in enumerate(self.delays_12):
                for j, t13 in enumerate(self.delays_13):
                    row = [f"{t12:.15g}", f"{t13:.15g}", f"{self.raw[i, j]:.15g}"]
                    if norm is not None:
                        row.append(f"{self.raw[i, j] / norm:.15g}")
                    writer.writerow(row)

    def envelope(self) -> dict:
        payload = {
            "kind": "correlation_map3",
            "normalization": {"mode": self.mode, "constant": self.normalization},
            "delays_12_ns": self.delays_12.tolist(),
            "delays_13_ns": self.delays_13.tolist(),
            "raw": self.raw.tolist(),
        }
        payload.update(self.meta)
        return payload

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.envelope(), fh, indent=1)
            fh.write("\n")


def _meta(params: SystemParams, mix: MixConfig, roles=None, **extra) -> dict:
    meta = {"system": asdict(params), "mix": asdict(mix)}
    if roles is not None:
        meta["roles"] = [r.value for r in roles]
    meta.update(extra)
    return meta


def _tail_constant(delays: np.ndarray, raw: np.ndarray) -> float:
    """Mean of the raw curve over the outermost |delay| window."""
    window = np.abs(delays) >= TAIL_FRACTION * np.abs(delays).max()
    tail = raw[window]
    if np.abs(tail).max(initial=0.0) < 1e-14:
        raise CorrelatorError(TAIL_QUENCH_MESSAGE)
    return float(np.mean(tail.real))


def _resolve_normalization(
    mode: str, delays: np.ndarray, raw: np.ndarray, product: float
) -> float | None:
    if mode == "intensity-product":
        return product
    if mode == "tail":
        return _tail_constant(delays, raw)
    if mode == "none":
        return None
    raise CorrelatorError(
        f"unknown normalization mode {mode!r}; "
        "expected intensity-product, tail, or none"
    )


# --------------------------------------------------------------------------
# correlators


def g1(params: SystemParams, mix: MixConfig, delays) -> CorrelationCurve:
    """First-order coherence of the bare dipole, <sigma^dag(t+tau) sigma(t)>.

    Complex-valued, unnormalized; delays must be non-negative.  The meta
    block records the coherent long-delay plateau |<sigma>_ss|^2 and the
    zero-delay value <sigma^dag sigma>_ss for downstream normalization.
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size and delays.min() < 0:
        raise CorrelatorError(
            "first-order coherence is defined on non-negative delays; "
            "negative delays follow from g1(-tau) = conj(g1(tau))"
        )
    lv, rho, coh = _context(params)
    raw = two_time_values(lv, SIGMA @ rho, SIGMA_DAG, delays)
    meta = _meta(
        params,
        mix,
        intensity=float(rho[1, 1].real),
        coherent_plateau=float(abs(coh) ** 2),
    )
    return CorrelationCurve(delays, raw, None, "none", meta=meta)


def g2(
    params: SystemParams,
    mix: MixConfig,
    role_1: DetectorRole,
    role_2: DetectorRole,
    delays,
    normalization: str = "intensity-product",
) -> CorrelationCurve:
    """Two-photon coincidence curve between two detector roles.

    For tau >= 0 detector 1 fires first:
    G2(tau) = Tr[O2^dag O2 e^{L tau}(O1 rho O1^dag)]; negative delays swap
    the roles and use |tau|.
    """
    delays = np.asarray(delays, dtype=float)
    lv, rho, coh = _context(params)
    beta = mix.beta(coh)
    op_1 = role_1.operator(beta)
    op_2 = role_2.operator(beta)

    raw = np.empty(delays.shape, dtype=complex)
    fwd = delays >= 0
    if fwd.any():
        conditional = qrt_sandwich(lv, rho, op_1.conj().T, op_1)
        raw[fwd] = two_time_values(lv, conditional, op_2.conj().T @ op_2, delays[fwd])
    if (~fwd).any():
        conditional = qrt_sandwich(lv, rho, op_2.conj().T, op_2)
        raw[~fwd] = two_time_values(
            lv, conditional, op_1.conj().T @ op_1, -delays[~fwd]
        )
    raw = _real(raw, "two-photon correlation")

    product = intensity(params, mix, role_1) * intensity(params, mix, role_2)
    const = _resolve_normalization(normalization, delays, raw, product)
    meta = _meta(params, mix, (role_1, role_2))
    return CorrelationCurve(delays, raw, const, normalization, meta=meta)


def g2_terms_crossco(
    params: SystemParams,
    mix: MixConfig,
    delays,
    normalization: str = "intensity-product",
) -> CorrelationCurve:
    """Cross-then-co coincidence split into its three physical channels.

    * ``dipole``      — the bare-emitter two-photon correlation
    * ``laser_floor`` — the constant laser-accidental floor |beta|^2 <sigma^dag sigma>
    * ``interference``— the emitter-laser cross term 2 Re[beta* <sigma^dag sigma sigma>]

    Channels are reported in raw units and sum to the direct s-operator
    evaluation; all share one normalization constant so the *total* tends
    to 1 at long delay.  Defined for non-negative delays (the co-first
    ordering at negative delay has a different interference channel).
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size and delays.min() < 0:
        raise CorrelatorError(
            "term decompositions are defined for non-negative delays; "
            "negative delays belong to the swapped-role ordering"
        )
    lv, rho, coh = _context(params)
    beta = mix.beta(coh)
    conditional = qrt_sandwich(lv, rho, SIGMA_DAG, SIGMA)

    dipole = _real(
        two_time_values(lv, conditional, SIGMA_DAG @ SIGMA, delays),
        "dipole channel",
    )
    laser_floor = np.full(
        delays.shape, float(abs(beta) ** 2 * rho[1, 1].real)
    )
    cross_amp = two_time_values(lv, conditional, SIGMA, delays)
    interference = 2.0 * (np.conj(beta) * cross_amp).real

    raw = dipole + laser_floor + interference
    product = intensity(params, mix, DetectorRole.CROSS) * intensity(
        params, mix, DetectorRole.CO
    )
    const = _resolve_normalization(normalization, delays, raw, product)
    terms = {
        "dipole": dipole,
        "laser_floor": laser_floor,
        "interference": interference,
    }
    meta = _meta(params, mix, (DetectorRole.CROSS, DetectorRole.CO))
    return CorrelationCurve(delays, raw, const, normalization, terms, meta)


def g2_terms_coco(
    params: SystemParams,
    mix: MixConfig,
    delays,
    normalization: str = "intensity-product",
) -> CorrelationCurve:
    """Co-co coincidence split into its five channels.

    * ``constant``            — all tau-independent contributions
    * ``field_coherence``     — 2|beta|^2 Re<sigma^dag(t+tau) sigma(t)>
    * ``anomalous_coherence`` — 2 Re[beta*^2 <sigma(t+tau) sigma(t)>]
    * ``three_operator``      — both odd-order emitter-laser cross terms
    * ``dipole``              — the bare-emitter two-photon correlation
    """
    delays = np.asarray(delays, dtype=float)
    if delays.size and delays.min() < 0:
        raise CorrelatorError(
            "term decompositions are defined for non-negative delays; "
            "negative delays belong to the swapped-role ordering"
        )
    lv, rho, coh = _context(params)
    beta = mix.beta(coh)
    b2 = abs(beta) ** 2
    pop = float(rho[1, 1].real)

    sandwich = qrt_sandwich(lv, rho, SIGMA_DAG, SIGMA)  # sigma rho sigma^dag
    one_sided = SIGMA @ rho  # for <...(t+tau) sigma(t)> rules

    constant = np.full(
        delays.shape,
        float(b2 * b2 + 2.0 * b2 * pop + 4.0 * b2 * (np.conj(beta) * coh).real),
    )
    field_coherence = (
        2.0 * b2 * two_time_values(lv, one_sided, SIGMA_DAG, delays).real
    )
    anomalous = 2.0 * (
        np.conj(beta) ** 2 * two_time_values(lv, one_sided, SIGMA, delays)
    ).real
    three_op = (
        2.0 * (np.conj(beta) * two_time_values(lv, sandwich, SIGMA, delays)).real
        + 2.0
        * (np.conj(beta) * two_time_values(lv, one_sided, SIGMA_DAG @ SIGMA, delays)).real
    )
    dipole = _real(
        two_time_values(lv, sandwich, SIGMA_DAG @ SIGMA, delays), "dipole channel"
    )

    raw = constant + field_coherence + anomalous + three_op + dipole
    product = intensity(params, mix, DetectorRole.CO) ** 2
    const = _resolve_normalization(normalization, delays, raw, product)
    terms = {
        "constant": constant,
        "field_coherence": field_coherence,
        "anomalous_coherence": anomalous,
        "three_operator": three_op,
        "dipole": dipole,
    }
    meta = _meta(params, mix, (DetectorRole.CO, DetectorRole.CO))
    return CorrelationCurve(delays, raw, const, normalization, terms, meta)


def g3_map(
    params: SystemParams,
    mix: MixConfig,
    roles: tuple[DetectorRole, DetectorRole, DetectorRole],
    delays_12,
    delays_13,
    normalization: str = "intensity-product",
) -> CorrelationMap3:
    """Three-photon coincidence map over (tau_12, tau_13).

    Every grid point is evaluated in physical time order: the three click
    times (0, tau_12, tau_13) are sorted, the role operators permuted with
    them, and the sandwich/propagate chain applied forward only.  This
    fills all sign quadrants without ever propagating backwards.
    """
    delays_12 = np.asarray(delays_12, dtype=float)
    delays_13 = np.asarray(delays_13, dtype=float)
    lv, rho, coh = _context(params)
    beta = mix.beta(coh)
    ops = [r.operator(beta) for r in roles]
    projections = [op.conj().T @ op for op in ops]

    raw = np.empty((delays_12.size, delays_13.size))
    times = np.empty(3)
    for i, t12 in enumerate(delays_12):
        for j, t13 in enumerate(delays_13):
            times[0], times[1], times[2] = 0.0, t12, t13
            order = np.argsort(times, kind="stable")
            first, second, third = order
            rho_1 = qrt_sandwich(lv, rho, ops[first].conj().T, ops[first])
            rho_1 = evolve_state(lv, rho_1, times[second] - times[first])
            rho_2 = qrt_sandwich(lv, rho_1, ops[second].conj().T, ops[second])
            value = two_time_values(
                lv, rho_2, projections[third],
                np.array([times[third] - times[second]]),
            )[0]
            if abs(value.imag) > 1e-9 * max(1.0, abs(value.real)):
                raise CorrelatorError(
                    "three-photon correlation came out non-real; "
                    "operator-ordering bug"
                )
            raw[i, j] = value.real

    product = 1.0
    for role in roles:
        product *= intensity(params, mix, role)
    if normalization == "intensity-product":
        const = product
    elif normalization == "tail":
        far_12 = np.abs(delays_12) >= TAIL_FRACTION * np.abs(delays_12).max()
        far_13 = np.abs(delays_13) >= TAIL_FRACTION * np.abs(delays_13).max()
        tail = raw[np.ix_(far_12, far_13)]
        if np.abs(tail).max(initial=0.0) < 1e-14:
            raise CorrelatorError(TAIL_QUENCH_MESSAGE)
        const = float(tail.mean())
    elif normalization == "none":
        const = None
    else:
        raise CorrelatorError(
            f"unknown normalization mode {normalization!r}; "
            "expected intensity-product, tail, or none"
        )
    meta = _meta(params, mix, roles)
    return CorrelationMap3(delays_12, delays_13, raw, const, normalization, meta)


def gn_zero_delay(n: int, params: SystemParams, mix: MixConfig) -> float:
    """Normalized n-photon zero-delay coincidence of the co detector.

    Because sigma^2 = 0, the displaced operator power collapses to
    s^n = beta^n + n beta^{n-1} sigma, giving the closed form
    G(n)(0) = |b|^{2n} + n^2 |b|^{2n-2} <sigma^dag sigma>
              + 2 n |b|^{2n-1} |<sigma>| cos(phase),
    normalized by the n-th power of the co intensity.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError("order n must be an integer >= 1")
    _, rho, coh = _context(params)
    m = abs(coh)
    b = mix.f_mix * m
    pop = float(rho[1, 1].real)
    raw = (
        b ** (2 * n)
        + n * n * b ** (2 * n - 2) * pop
        + 2.0 * n * b ** (2 * n - 1) * m * np.cos(mix.phase)
    )
    return raw / intensity(params, mix, DetectorRole.CO) ** n


def irf_convolve(curve: CorrelationCurve, fwhm_ps: float) -> CorrelationCurve:
    """Smooth a curve with the Gaussian instrument response of a detector.

    The kernel is sampled on the (uniform) delay grid, truncated at four
    standard deviations and normalized to unit sum, so constant curves are
    exact fixed points.  Term channels are convolved alongside the total.
    """
    if fwhm_ps <= 0:
        raise CorrelatorError("instrument-response FWHM must be positive")
    delays = curve.delays
    if delays.size < 3:
        raise CorrelatorError("need at least 3 grid points to convolve")
    steps = np.diff(delays)
    dt = steps[0]
    if dt <= 0 or np.abs(steps - dt).max() > 1e-9 * dt:
        raise CorrelatorError(
            "instrument-response convolution needs a uniform delay grid"
        )
    sigma = fwhm_ps / 1000.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))  # ns
    radius = max(1, int(np.ceil(4.0 * sigma / dt)))
    offsets = np.arange(-radius, radius + 1) * dt
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel /= kernel.sum()

    def smooth(values: np.ndarray) -> np.ndarray:
        padded = np.concatenate(
            [np.full(radius, values[0]), values, np.full(radius, values[-1])]
        )
        return np.convolve(padded, kernel, mode="valid")

    terms = None
    if curve.terms:
        terms = {name: smooth(vals) for name, vals in curve.terms.items()}
    meta = dict(curve.meta)
    meta["irf_fwhm_ps"] = float(fwhm_ps)
    return CorrelationCurve(
        delays.copy(), smooth(curve.raw), curve.normalization, curve.mode,
        terms, meta,
    )
