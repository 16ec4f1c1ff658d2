"""Contact-process operators, double-space generators and Trotter schedules.

Local basis: index 0 is the empty site ``|o>``, index 1 the occupied site
``|*>``. A density matrix is vectorized row-major per site, so each site of a
double-space MPS carries the index ``2*m + n`` for the local entry ``rho[m, n]``.
With this convention ``A rho B`` maps to ``kron(A, B.T)`` in the global
ordering, which is then interleaved site by site.
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass
from typing import Literal, NamedTuple

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from .mps import TwoSiteGate

Picture = Literal["schrodinger_double", "heisenberg_double", "pure_state_nonhermitian"]
PICTURES: tuple[str, ...] = ("schrodinger_double", "heisenberg_double", "pure_state_nonhermitian")


class UnsupportedConfigurationError(ValueError):
    """Raised when an operation is requested for a model kind that does not support it."""


# -- local operators ---------------------------------------------------------

SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=np.complex128)
SIGMA_PLUS = SIGMA_MINUS.conj().T.copy()
NUMBER = np.array([[0, 0], [0, 1]], dtype=np.complex128)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
IDENTITY = np.eye(2, dtype=np.complex128)

EMPTY = np.array([1, 0], dtype=np.complex128)
OCCUPIED = np.array([0, 1], dtype=np.complex128)


@dataclass(frozen=True)
class LocalOps:
    sigma_minus: NDArray[np.complex128] = SIGMA_MINUS
    sigma_plus: NDArray[np.complex128] = SIGMA_PLUS
    n: NDArray[np.complex128] = NUMBER
    sigma_1: NDArray[np.complex128] = SIGMA_X
    identity: NDArray[np.complex128] = IDENTITY


LOCAL_OPS = LocalOps()


# -- model parameters ----------------------------------------------------------


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of a classical (``Gamma``) or quantum (``omega``) contact process.

    All rates are in units where ``gamma`` sets the time scale; the engines
    use ``gamma = 1`` unless told otherwise.
    """

    kind: str
    L: int
    gamma: float = 1.0
    omega: float = 0.0
    Gamma: float = 0.0
    boundary: str = "open"

    def __post_init__(self) -> None:
        if self.kind not in ("classical", "quantum"):
            raise ValueError(f"kind must be 'classical' or 'quantum', got {self.kind!r}")
        if self.L < 2:
            raise ValueError("L must be at least 2")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.boundary != "open":
            raise ValueError("only open boundaries are supported")
        if self.omega < 0 or self.Gamma < 0:
            raise ValueError("branching rates must be non-negative")
        if self.kind == "quantum" and self.Gamma != 0:
            raise ValueError("Gamma is meaningless for the quantum process")
        if self.kind == "classical" and self.omega != 0:
            raise ValueError("omega is meaningless for the classical process")

    @property
    def seed_site(self) -> int:
        """0-based index of the central seed site, ``floor(L/2)``."""
        return self.L // 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ModelSpec:
        keys = {"kind", "L", "gamma", "omega", "Gamma", "boundary"}
        return cls(**{k: v for k, v in data.items() if k in keys})


def decay_weights(L: int) -> list[tuple[float, float]]:
    """Share of each site's on-site term carried by bond ``k`` as ``(left, right)``.

    Interior sites split evenly between their two bonds; the end sites give
    their full weight to the only bond they touch.
    """
    weights = []
    for k in range(L - 1):
        left = 1.0 if k == 0 else 0.5
        right = 1.0 if k + 1 == L - 1 else 0.5
        weights.append((left, right))
    return weights


# -- Hilbert-space terms -------------------------------------------------------


def build_hamiltonian_terms(spec: ModelSpec) -> list[NDArray[np.complex128]]:
    """Two-site coherent branching terms ``omega (X n + n X)``; empty for the classical process."""
    if spec.kind == "classical":
        return []
    h = spec.omega * (np.kron(SIGMA_X, NUMBER) + np.kron(NUMBER, SIGMA_X))
    return [h.copy() for _ in range(spec.L - 1)]


def build_effective_hamiltonian_terms(spec: ModelSpec) -> list[NDArray[np.complex128]]:
    """Bond terms of ``H - (i/2) sum_k gamma n_k`` with edge-shared decay."""
    if spec.kind != "quantum":
        raise UnsupportedConfigurationError("trajectories are only defined for the quantum contact process")
    hs = build_hamiltonian_terms(spec)
    out = []
    for h, (wl, wr) in zip(hs, decay_weights(spec.L)):
        damp = wl * np.kron(NUMBER, IDENTITY) + wr * np.kron(IDENTITY, NUMBER)
        out.append(h - 0.5j * spec.gamma * damp)
    return out


class JumpOperator(NamedTuple):
    site: int
    matrix: NDArray[np.complex128]
    rate: float


def jump_operators(spec: ModelSpec) -> list[JumpOperator]:
    """Single-site decays ``sqrt(gamma) sigma_-`` (rate folded into the matrix)."""
    if spec.kind != "quantum":
        raise UnsupportedConfigurationError("trajectories are only defined for the quantum contact process")
    amp = np.sqrt(spec.gamma) * SIGMA_MINUS
    return [JumpOperator(k, amp.copy(), spec.gamma) for k in range(spec.L)]


# -- vectorization -----------------------------------------------------------


def interleave_permutation(n_sites: int) -> NDArray[np.intp]:
    """Axis order turning ``(m_1..m_n, n_1..n_n)`` into ``(m_1, n_1, ..., m_n, n_n)``."""
    order = []
    for k in range(n_sites):
        order += [k, n_sites + k]
    return np.array(order)


def vectorize(rho: NDArray, n_sites: int) -> NDArray[np.complex128]:
    """Row-major, site-interleaved vector of a ``2**n x 2**n`` matrix."""
    t = np.asarray(rho, dtype=np.complex128).reshape((2,) * (2 * n_sites))
    return t.transpose(interleave_permutation(n_sites)).reshape(-1).copy()


def unvectorize(vec: NDArray, n_sites: int) -> NDArray[np.complex128]:
    t = np.asarray(vec, dtype=np.complex128).reshape((2,) * (2 * n_sites))
    inv = np.argsort(interleave_permutation(n_sites))
    return t.transpose(inv).reshape(2**n_sites, 2**n_sites).copy()


def superop(left: NDArray, right: NDArray) -> NDArray[np.complex128]:
    """Matrix of ``rho -> left @ rho @ right`` on site-interleaved vectors."""
    left = np.asarray(left, dtype=np.complex128)
    right = np.asarray(right, dtype=np.complex128)
    dim = left.shape[0]
    n_sites = int(round(np.log2(dim)))
    m = np.kron(left, right.T).reshape((2,) * (4 * n_sites))
    perm = interleave_permutation(n_sites)
    # row indices then column indices, each interleaved
    axes = list(perm) + [2 * n_sites + p for p in perm]
    return m.transpose(axes).reshape(dim * dim, dim * dim).copy()


def dissipator_superop(jump: NDArray, rate: float = 1.0) -> NDArray[np.complex128]:
    """``rate * (J rho J^+ - 1/2 {J^+ J, rho})`` as a double-space matrix."""
    jump = np.asarray(jump, dtype=np.complex128)
    jd = jump.conj().T
    jdj = jd @ jump
    eye = np.eye(jump.shape[0], dtype=np.complex128)
    return rate * (superop(jump, jd) - 0.5 * superop(jdj, eye) - 0.5 * superop(eye, jdj))


def commutator_superop(h: NDArray) -> NDArray[np.complex128]:
    """``-i [h, rho]`` as a double-space matrix."""
    h = np.asarray(h, dtype=np.complex128)
    eye = np.eye(h.shape[0], dtype=np.complex128)
    return -1j * (superop(h, eye) - superop(eye, h))


def local_vec(op: NDArray) -> NDArray[np.complex128]:
    """Single-site operator flattened to a double-space local vector."""
    return np.asarray(op, dtype=np.complex128).reshape(-1).copy()


IDENTITY_VEC = local_vec(IDENTITY)
EMPTY_VEC = local_vec(np.outer(EMPTY, EMPTY.conj()))
OCCUPIED_VEC = local_vec(np.outer(OCCUPIED, OCCUPIED.conj()))


class GeneratorTerms(NamedTuple):
    onsite: list[NDArray[np.complex128]]
    bonds: list[NDArray[np.complex128]]


def build_double_space_generator_terms(spec: ModelSpec) -> GeneratorTerms:
    """On-site decay superoperators and bond terms with the decay already absorbed.

    Summing ``bonds`` over the chain gives the full generator; ``onsite`` is
    returned for inspection only.
    """
    decay = dissipator_superop(SIGMA_MINUS, spec.gamma)
    eye4 = np.eye(4, dtype=np.complex128)
    onsite = [decay.copy() for _ in range(spec.L)]
    bonds = []
    hams = build_hamiltonian_terms(spec)
    for k, (wl, wr) in enumerate(decay_weights(spec.L)):
        term = wl * np.kron(decay, eye4) + wr * np.kron(eye4, decay)
        if spec.kind == "quantum":
            term = term + commutator_superop(hams[k])
        else:
            j_left = np.kron(SIGMA_X, NUMBER)
            j_right = np.kron(NUMBER, SIGMA_X)
            term = term + dissipator_superop(j_left, spec.Gamma) + dissipator_superop(j_right, spec.Gamma)
        bonds.append(term)
    return GeneratorTerms(onsite, bonds)


# -- Trotter schedules -------------------------------------------------------


@dataclass(frozen=True)
class GateSchedule:
    """One symmetric second-order Trotter step ``A(dt/2) B(dt) A(dt/2)``.

    ``A`` holds the odd bonds (1, 3, ...) and ``B`` the even bonds
    (0, 2, ...), 0-based. Gates are listed in application order.
    """

    gates: tuple[TwoSiteGate, ...]
    picture: str
    dt: float
    L: int
    real_gauge: bool = False

    @property
    def sites(self) -> list[int]:
        return [g.site for g in self.gates]

    def __iter__(self):
        return iter(self.gates)

    def __len__(self) -> int:
        return len(self.gates)


_PHASE = np.diag([1.0, 1.0j])


def gauge_matrix(picture: str, n_sites: int = 2) -> NDArray[np.complex128]:
    """Local phase transform ``|*> -> i|*>`` on ``n_sites`` sites of ``picture``.

    In this gauge every bond generator of both processes is a real matrix. A
    double-space site carries ``u (.) u^dagger``, i.e. ``kron(u, conj(u))``.
    Occupation numbers, the vacuum and the identity are gauge invariant, so
    all recorded observables and entropies are unchanged.
    """
    if picture == "pure_state_nonhermitian":
        local = _PHASE
    else:
        local = np.kron(_PHASE, _PHASE.conj())
    out = np.ones((1, 1), dtype=np.complex128)
    for _ in range(n_sites):
        out = np.kron(out, local)
    return out


def _layer_order(L: int) -> tuple[list[int], list[int]]:
    a = list(range(1, L - 1, 2))
    b = list(range(0, L - 1, 2))
    return a, b


@functools.lru_cache(maxsize=64)
def build_trotter_schedule(
    spec: ModelSpec, picture: str, dt: float, real_gauge: bool = False
) -> GateSchedule:
    """Exponentiate bond terms into a second-order sweep for ``picture``.

    ``heisenberg_double`` is the exact adjoint of the forward step: reversed
    gate order and conjugate-transposed generators. With ``real_gauge`` the
    terms are first conjugated by :func:`gauge_matrix`, which makes every gate
    real; states must then be prepared in the same gauge (the seed, vacuum
    and identity are invariant, so in practice nothing changes).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if picture not in PICTURES:
        raise ValueError(f"unknown picture {picture!r}; expected one of {PICTURES}")

    if picture == "pure_state_nonhermitian":
        terms = [-1j * h for h in build_effective_hamiltonian_terms(spec)]
    else:
        terms = build_double_space_generator_terms(spec).bonds
    if real_gauge:
        g = gauge_matrix(picture)
        terms = [g @ t @ g.conj().T for t in terms]
        worst = max(float(np.abs(t.imag).max()) for t in terms)
        if worst > 1e-12 * max(1.0, max(float(np.abs(t).max()) for t in terms)):
            raise UnsupportedConfigurationError(f"generator is not real in the phase gauge (imag {worst:.2e})")
        terms = [t.real.copy() for t in terms]

    half: dict[int, NDArray] = {}
    full: dict[int, NDArray] = {}
    a, b = _layer_order(spec.L)
    for k in a:
        half[k] = scipy.linalg.expm(0.5 * dt * terms[k])
    for k in b:
        full[k] = scipy.linalg.expm(dt * terms[k])

    forward = (
        [TwoSiteGate(half[k], k) for k in a]
        + [TwoSiteGate(full[k], k) for k in reversed(b)]
        + [TwoSiteGate(half[k], k) for k in a]
    )
    if picture == "heisenberg_double":
        gates = tuple(g.adjoint() for g in reversed(forward))
    else:
        gates = tuple(forward)
    return GateSchedule(gates, picture, float(dt), spec.L, real_gauge)
