"""Master-equation engine for a driven two-level emitter.

Basis convention: index 0 is the ground state |g>, index 1 is the excited
state |x>.  All times are in nanoseconds, all rates and angular frequencies
in rad/ns (so a Rabi frequency quoted as "0.56 pi per ns" is 0.56*pi here).

Density operators are flattened column-major ("column stacking"):
vec(A rho B) = (B^T (x) A) vec(rho), with vec(m) = m.T.reshape(-1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
import scipy.linalg

__all__ = [
    "SIGMA",
    "SIGMA_DAG",
    "PROJ_X",
    "SystemParams",
    "DensityMatrix",
    "Superoperator",
    "vec",
    "unvec",
    "build_liouvillian",
    "steady_state",
    "propagator",
    "evolve_state",
    "two_time_values",
]

# Lowering operator |g><x| and friends, in the {|g>, |x>} basis.
SIGMA = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
SIGMA_DAG = SIGMA.conj().T
PROJ_X = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
IDENT2 = np.eye(2, dtype=complex)

#: eigenvector condition number above which the eigendecomposition of the
#: Liouvillian is considered unreliable (defective / exceptional point) and
#: the propagator falls back to a dense matrix exponential.
_COND_LIMIT = 1e8


class DynamicsError(RuntimeError):
    """Raised when the generator does not admit the requested operation."""


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters of the driven emitter.

    Parameters
    ----------
    rabi_frequency:
        Bare Rabi frequency Omega_0 in rad/ns (the drive term in the
        Hamiltonian is (Omega_0/2)(sigma + sigma^dag)).
    lifetime:
        Radiative lifetime T1 in ns; the spontaneous-emission rate is 1/T1.
    pure_dephasing_rate:
        Pure dephasing rate gamma_pd in 1/ns, entering the total coherence
        decay as 1/T2 = 1/(2 T1) + gamma_pd.  Default 0 (transform-limited).
    detuning:
        Laser-emitter detuning in rad/ns.  Default 0 (resonant drive).
    """

    rabi_frequency: float
    lifetime: float
    pure_dephasing_rate: float = 0.0
    detuning: float = 0.0

    def __post_init__(self):
        if not (self.lifetime > 0):
            raise ValueError(f"lifetime must be positive, got {self.lifetime}")
        if self.rabi_frequency < 0:
            raise ValueError("rabi_frequency must be non-negative")
        if self.pure_dephasing_rate < 0:
            raise ValueError("pure_dephasing_rate must be non-negative")

    @property
    def decay_rate(self) -> float:
        """Spontaneous emission rate Gamma = 1/T1 in 1/ns."""
        return 1.0 / self.lifetime

    def hamiltonian(self) -> np.ndarray:
        """Rotating-frame Hamiltonian (units of rad/ns, hbar = 1)."""
        return self.detuning * PROJ_X + 0.5 * self.rabi_frequency * (SIGMA + SIGMA_DAG)


@dataclass(frozen=True)
class DensityMatrix:
    """A 2x2 density operator with a normalization flag.

    ``normalized`` records whether ``elements`` has unit trace; conditional
    (post-measurement) states produced by correlator sandwiches carry
    ``normalized=False``.
    """

    elements: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        arr = np.asarray(self.elements, dtype=complex)
        if arr.shape != (2, 2):
            raise ValueError(f"density matrix must be 2x2, got shape {arr.shape}")
        object.__setattr__(self, "elements", arr)

    @property
    def population_g(self) -> float:
        return float(self.elements[0, 0].real)

    @property
    def population_x(self) -> float:
        return float(self.elements[1, 1].real)

    @property
    def coherence(self) -> complex:
        """<x|rho|g> — the expectation value of the lowering operator."""
        return complex(self.elements[1, 0])

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.trace(op @ self.elements))


def vec(m: np.ndarray) -> np.ndarray:
    """Column-stack a matrix into a vector."""
    return np.asarray(m, dtype=complex).T.reshape(-1)


def unvec(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec` for 2x2 matrices."""
    return np.asarray(v, dtype=complex).reshape(2, 2).T


class Superoperator:
    """A linear map on vectorized 2x2 operators (a 4x4 matrix).

    Liouvillians cache their eigendecomposition lazily; propagators reuse it
    so that repeated time-evolution calls cost one small matmul each.
    """

    __slots__ = ("matrix", "_eig")

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (4, 4):
            raise ValueError(f"superoperator must be 4x4, got shape {matrix.shape}")
        self.matrix = matrix
        self._eig = None

    def __call__(self, rho: np.ndarray | DensityMatrix) -> np.ndarray:
        if isinstance(rho, DensityMatrix):
            rho = rho.elements
        return unvec(self.matrix @ vec(rho))

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.matrix @ other.matrix)

    def eig(self):
        """(eigenvalues, V, V^-1, condition number), cached."""
        if self._eig is None:
            w, V = np.linalg.eig(self.matrix)
            try:
                Vinv = np.linalg.inv(V)
                cond = np.linalg.cond(V)
            except np.linalg.LinAlgError:
                Vinv, cond = None, np.inf
            self._eig = (w, V, Vinv, cond)
        return self._eig

    @property
    def well_conditioned(self) -> bool:
        _, _, Vinv, cond = self.eig()
        return Vinv is not None and cond < _COND_LIMIT

    def spectral_abscissa(self) -> float:
        """Largest real part over the spectrum (0 for a proper Liouvillian)."""
        w, *_ = self.eig()
        return float(w.real.max())


def _dissipator(op: np.ndarray) -> np.ndarray:
    """Vectorized Lindblad dissipator D[op]: op.op^dag - (1/2){op^dag op, .}."""
    op_dag = op.conj().T
    anti = op_dag @ op
    return (
        np.kron(op.conj(), op)
        - 0.5 * np.kron(anti.T, IDENT2)
        - 0.5 * np.kron(IDENT2, anti)
    )


def liouvillian_from_ops(hamiltonian: np.ndarray, collapse_ops) -> Superoperator:
    """Assemble -i[H, .] + sum_k D[C_k] in vectorized form."""
    h = np.asarray(hamiltonian, dtype=complex)
    mat = -1j * (np.kron(IDENT2, h) - np.kron(h.T, IDENT2))
    for c in collapse_ops:
        mat = mat + _dissipator(np.asarray(c, dtype=complex))
    return Superoperator(mat)


def build_liouvillian(params: SystemParams) -> Superoperator:
    """Liouvillian of the driven, radiatively damped, dephasing emitter.

    Collapse channels: sqrt(Gamma) sigma for spontaneous emission and
    sqrt(2 gamma_pd) |x><x| for pure dephasing — the factor 2 makes
    gamma_pd the rate that adds directly to 1/T2.
    """
    ops = [np.sqrt(params.decay_rate) * SIGMA]
    if params.pure_dephasing_rate > 0:
        ops.append(np.sqrt(2.0 * params.pure_dephasing_rate) * PROJ_X)
    return liouvillian_from_ops(params.hamiltonian(), ops)


def steady_state(liouvillian: Superoperator, tol: float = 1e-9) -> DensityMatrix:
    """Unique trace-one fixed point of the Liouvillian.

    Uses the SVD null space; raises :class:`DynamicsError` if the kernel is
    not one-dimensional (e.g. no drive and no decay) or the fixed point is
    traceless.
    """
    mat = liouvillian.matrix
    scale = np.linalg.norm(mat)
    if scale == 0:
        raise DynamicsError("no unique steady state: generator vanishes")
    _, s, vh = np.linalg.svd(mat)
    null_mask = s < tol * scale
    if null_mask.sum() != 1:
        raise DynamicsError(
            "no unique steady state: Liouvillian kernel has dimension "
            f"{int(null_mask.sum())}"
        )
    rho = unvec(vh[-1].conj())
    rho = 0.5 * (rho + rho.conj().T)  # hermitize away roundoff
    tr = np.trace(rho).real
    if abs(tr) < tol:
        raise DynamicsError("no unique steady state: kernel vector is traceless")
    return DensityMatrix(rho / tr)


def propagator(liouvillian: Superoperator, delay: float) -> Superoperator:
    """The map e^{L tau} for tau >= 0.

    Negative delays are rejected: reversed-time correlators must be obtained
    by the swapped-operator rules, not by propagating backwards.
    """
    if delay < 0:
        raise DynamicsError(
            "propagation backwards in time is undefined; "
            "use swapped-operator correlators"
        )
    if delay == 0:
        return Superoperator(np.eye(4, dtype=complex))
    if liouvillian.well_conditioned:
        w, V, Vinv, _ = liouvillian.eig()
        return Superoperator((V * np.exp(w * delay)) @ Vinv)
    return Superoperator(scipy.linalg.expm(liouvillian.matrix * delay))


def evolve_state(
    liouvillian: Superoperator, rho: np.ndarray | DensityMatrix, delay: float
) -> np.ndarray:
    """e^{L tau} applied to a single (possibly unnormalized) state.

    Exact pass-through at tau == 0 so that structurally zero matrix elements
    stay exactly zero.
    """
    if isinstance(rho, DensityMatrix):
        rho = rho.elements
    if delay == 0:
        return np.array(rho, dtype=complex)
    return propagator(liouvillian, delay)(rho)


def two_time_values(
    liouvillian: Superoperator,
    rho: np.ndarray | DensityMatrix,
    observable: np.ndarray,
    delays: np.ndarray,
) -> np.ndarray:
    """Tr[X e^{L tau} rho] for every tau in ``delays`` (all >= 0).

    The workhorse of every quantum-regression correlator: ``rho`` is the
    conditional state prepared by the first detection event(s), ``observable``
    the operator measured a delay later.  Batched through the cached
    eigendecomposition (one 4xN matmul); zero delays bypass the decomposition
    entirely so that exact zeros survive in floating point.
    """
    if isinstance(rho, DensityMatrix):
        rho = rho.elements
    delays = np.asarray(delays, dtype=float)
    if delays.size and delays.min() < 0:
        raise DynamicsError(
            "propagation backwards in time is undefined; "
            "use swapped-operator correlators"
        )
    out = np.empty(delays.shape, dtype=complex)
    zero = delays == 0.0
    if zero.any():
        out[zero] = np.trace(observable @ rho)
    pos = ~zero
    if pos.any():
        x_row = vec(np.asarray(observable, dtype=complex).T)
        r0 = vec(rho)
        if liouvillian.well_conditioned:
            w, V, Vinv, _ = liouvillian.eig()
            modes = Vinv @ r0  # (4,)
            phases = np.exp(np.outer(w, delays[pos]))  # (4, n)
            out[pos] = (x_row @ V) @ (modes[:, None] * phases)
        else:
            # defective generator (exceptional point): dense expm per delay
            vals = np.empty(int(pos.sum()), dtype=complex)
            for i, tau in enumerate(delays[pos]):
                vals[i] = x_row @ (scipy.linalg.expm(liouvillian.matrix * tau) @ r0)
            out[pos] = vals
    return out
