"""Open-boundary matrix product states.

Tensors are stored with index order ``(chi_left, d, chi_right)``. The state is
kept in mixed-canonical form around ``ortho_center`` whenever possible; tensors
left of the centre are left isometries and tensors right of it are right
isometries. Gate application truncates with an SVD at the bond the gate acts
on, and records the discarded weight of that cut.

Bond ``k`` (0-based) sits between sites ``k`` and ``k + 1``. Sites are 0-based
throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg
import scipy.linalg.lapack
from numpy.typing import ArrayLike, NDArray

DEFAULT_SVD_CUTOFF = 1e-12

ComplexArray = NDArray[np.complex128]


def _as_float_or_complex(a: ArrayLike) -> NDArray:
    """Keep real data in float64 and anything complex in complex128."""
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return a.astype(np.complex128, copy=False)
    return a.astype(np.float64, copy=False)


def _compact(a: ArrayLike) -> NDArray:
    """Like :func:`_as_float_or_complex` but also drops an all-zero imaginary part."""
    a = _as_float_or_complex(a)
    if np.iscomplexobj(a) and not np.any(a.imag):
        return a.real.copy()
    return a


class StaleSpectraError(RuntimeError):
    """Raised when bond spectra are read after a non-unitary update invalidated them."""


@dataclass(frozen=True)
class TwoSiteGate:
    """Dense ``d**2 x d**2`` matrix acting on sites ``(site, site + 1)``.

    Real matrices stay in float64 so that real states are evolved with real
    arithmetic; complex matrices are stored as complex128.
    """

    matrix: ComplexArray
    site: int
    is_unitary: bool = False

    def __post_init__(self) -> None:
        m = _as_float_or_complex(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"gate matrix must be square, got shape {m.shape}")
        d = int(round(np.sqrt(m.shape[0])))
        if d * d != m.shape[0]:
            raise ValueError(f"gate dimension {m.shape[0]} is not a square of a local dimension")
        if self.site < 0:
            raise ValueError("gate site must be non-negative")
        if self.is_unitary and not np.allclose(m.conj().T @ m, np.eye(m.shape[0]), atol=1e-12, rtol=0):
            raise ValueError("gate flagged unitary but G^dagger G != 1")
        object.__setattr__(self, "matrix", m)

    @property
    def local_dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def adjoint(self) -> TwoSiteGate:
        return TwoSiteGate(self.matrix.conj().T, self.site, self.is_unitary)


@dataclass
class TruncationReport:
    """Discarded weights accumulated over one or more gate applications.

    ``per_bond_discarded_weight[k]`` is the summed relative discarded weight
    at bond ``k``; ``global_error_estimate`` is the square root of the total.
    """

    per_bond_discarded_weight: list[float]
    max_bond_entropy: float = 0.0

    @classmethod
    def empty(cls, n_bonds: int) -> TruncationReport:
        return cls([0.0] * n_bonds)

    @property
    def total_discarded_weight(self) -> float:
        return float(sum(self.per_bond_discarded_weight))

    @property
    def global_error_estimate(self) -> float:
        return float(np.sqrt(self.total_discarded_weight))

    def merge(self, other: TruncationReport) -> TruncationReport:
        if len(other.per_bond_discarded_weight) != len(self.per_bond_discarded_weight):
            raise ValueError("cannot merge reports for different chain lengths")
        for k, w in enumerate(other.per_bond_discarded_weight):
            self.per_bond_discarded_weight[k] += w
        self.max_bond_entropy = max(self.max_bond_entropy, other.max_bond_entropy)
        return self


def entropy_from_spectrum(spectrum: Sequence[float] | NDArray[np.float64]) -> float:
    """Von Neumann entropy (natural log) of a Schmidt spectrum, normalized first."""
    s = np.asarray(spectrum, dtype=float)
    p = s * s
    total = p.sum()
    if total <= 0.0:
        return 0.0
    p = p[p > 0.0] / total
    return max(0.0, float(-np.sum(p * np.log(p))))


class Mps:
    """Matrix product state with explicit orthogonality centre.

    ``bond_spectra[k]`` holds the normalized Schmidt coefficients across bond
    ``k``. Non-unitary updates mark spectra stale; :meth:`refresh_spectra`
    recomputes them with one canonicalizing sweep.
    """

    def __init__(
        self,
        tensors: Iterable[ArrayLike],
        ortho_center: int | None = None,
        bond_spectra: list[NDArray[np.float64]] | None = None,
    ) -> None:
        self.tensors: list[NDArray] = [_as_float_or_complex(t) for t in tensors]
        if not self.tensors:
            raise ValueError("an MPS needs at least one site")
        for t in self.tensors:
            if t.ndim != 3:
                raise ValueError(f"site tensors must be rank 3, got shape {t.shape}")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary bond dimensions must be 1")
        for a, b in zip(self.tensors[:-1], self.tensors[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError(f"bond mismatch between shapes {a.shape} and {b.shape}")
        dims = {t.shape[1] for t in self.tensors}
        if len(dims) != 1:
            raise ValueError(f"mixed local dimensions {sorted(dims)}")
        self.local_dim: int = dims.pop()
        self.ortho_center = ortho_center
        n_bonds = len(self.tensors) - 1
        if bond_spectra is None:
            self.bond_spectra: list[NDArray[np.float64]] = [np.ones(1) for _ in range(n_bonds)]
            self._fresh = [False] * n_bonds
        else:
            if len(bond_spectra) != n_bonds:
                raise ValueError("need one spectrum per bond")
            self.bond_spectra = [np.asarray(s, dtype=float) for s in bond_spectra]
            self._fresh = [True] * n_bonds

    # -- basic properties -------------------------------------------------

    @property
    def length(self) -> int:
        return len(self.tensors)

    @property
    def n_bonds(self) -> int:
        return len(self.tensors) - 1

    @property
    def bond_dims(self) -> list[int]:
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def max_bond_dim(self) -> int:
        return max(self.bond_dims, default=1)

    @property
    def spectra_fresh(self) -> bool:
        return all(self._fresh)

    def copy(self) -> Mps:
        new = Mps([t.copy() for t in self.tensors], self.ortho_center)
        new.bond_spectra = [s.copy() for s in self.bond_spectra]
        new._fresh = list(self._fresh)
        return new

    def invalidate_spectra(self, keep: int | None = None) -> None:
        for k in range(self.n_bonds):
            if k != keep:
                self._fresh[k] = False

    # -- canonical form ---------------------------------------------------

    def _shift_right(self, i: int) -> None:
        a = self.tensors[i]
        cl, d, cr = a.shape
        q, r = np.linalg.qr(a.reshape(cl * d, cr))
        self.tensors[i] = q.reshape(cl, d, q.shape[1])
        nxt = self.tensors[i + 1]
        self.tensors[i + 1] = (r @ nxt.reshape(cr, -1)).reshape(r.shape[0], nxt.shape[1], nxt.shape[2])

    def _shift_left(self, i: int) -> None:
        b = self.tensors[i]
        cl, d, cr = b.shape
        q, r = np.linalg.qr(b.reshape(cl, d * cr).T)
        self.tensors[i] = q.T.reshape(q.shape[1], d, cr)
        prv = self.tensors[i - 1]
        self.tensors[i - 1] = (prv.reshape(-1, cl) @ r.T).reshape(prv.shape[0], prv.shape[1], r.shape[0])

    def move_center(self, site: int) -> None:
        """Bring the orthogonality centre to ``site`` with QR sweeps (state unchanged)."""
        if not 0 <= site < self.length:
            raise IndexError(f"site {site} outside chain of length {self.length}")
        if self.ortho_center is None:
            for i in range(site):
                self._shift_right(i)
            for i in range(self.length - 1, site, -1):
                self._shift_left(i)
        else:
            for i in range(self.ortho_center, site):
                self._shift_right(i)
            for i in range(self.ortho_center, site, -1):
                self._shift_left(i)
        self.ortho_center = site

    def refresh_spectra(self) -> None:
        """Recompute every bond spectrum exactly with a left-to-right SVD sweep."""
        self.move_center(0)
        for i in range(self.n_bonds):
            a = self.tensors[i]
            cl, d, cr = a.shape
            u, s, vh = np.linalg.svd(a.reshape(cl * d, cr), full_matrices=False)
            keep = max(1, int(np.count_nonzero(s > 0.0)))
            u, s, vh = u[:, :keep], s[:keep], vh[:keep]
            self.tensors[i] = u.reshape(cl, d, keep)
            nxt = self.tensors[i + 1]
            sv = s[:, None] * vh
            self.tensors[i + 1] = (sv @ nxt.reshape(cr, -1)).reshape(keep, nxt.shape[1], nxt.shape[2])
            norm = np.linalg.norm(s)
            self.bond_spectra[i] = s / norm if norm > 0 else s
            self._fresh[i] = True
        self.ortho_center = self.n_bonds

    # -- norms --------------------------------------------------------------

    def norm(self) -> float:
        if self.ortho_center is not None:
            return float(np.linalg.norm(self.tensors[self.ortho_center]))
        return float(np.sqrt(abs(overlap(self, self))))

    def normalize(self) -> float:
        """Scale to unit norm; returns the norm before scaling."""
        if self.ortho_center is None:
            self.move_center(0)
        c = self.ortho_center
        nrm = float(np.linalg.norm(self.tensors[c]))
        if nrm == 0.0:
            raise FloatingPointError("cannot normalize a zero state")
        self.tensors[c] = self.tensors[c] / nrm
        return nrm

    def scale(self, factor: complex) -> None:
        c = self.ortho_center if self.ortho_center is not None else 0
        self.tensors[c] = self.tensors[c] * factor

    # -- dense conversion and dumps -----------------------------------------

    def to_dense(self) -> ComplexArray:
        out = self.tensors[0].reshape(-1, self.tensors[0].shape[2])
        for t in self.tensors[1:]:
            out = (out @ t.reshape(t.shape[0], -1)).reshape(-1, t.shape[2])
        return out.reshape(-1)

    def to_json(self) -> str:
        """Debug dump with shapes and spectra."""
        return json.dumps(
            {
                "length": self.length,
                "local_dim": self.local_dim,
                "ortho_center": self.ortho_center,
                "shapes": [list(t.shape) for t in self.tensors],
                "bond_spectra": [s.tolist() for s in self.bond_spectra],
                "spectra_fresh": list(self._fresh),
            }
        )

    def __repr__(self) -> str:
        return f"Mps(L={self.length}, d={self.local_dim}, chi={self.bond_dims}, center={self.ortho_center})"



def from_product(local_states: Sequence[ArrayLike], normalize: bool = True) -> Mps:
    """Bond-dimension-one MPS for a tensor product of local vectors.

    Vectors whose entries are all real give a float64 state. With ``normalize=False`` the local vectors are used as given, which is what
    vectorized operators such as the identity need.
    """
    if len(local_states) == 0:
        raise ValueError("need at least one site")
    vecs = [np.asarray(v).reshape(-1) for v in local_states]
    if all(not np.iscomplexobj(v) or not np.any(v.imag) for v in vecs):
        vecs = [v.real.astype(np.float64) for v in vecs]
    else:
        vecs = [v.astype(np.complex128) for v in vecs]
    d = vecs[0].shape[0]
    tensors = []
    for k, v in enumerate(vecs):
        if v.shape[0] != d:
            raise ValueError(f"site {k} has dimension {v.shape[0]}, expected {d}")
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            raise ValueError(f"site {k} vector has zero norm")
        if normalize:
            v = v / nrm
        tensors.append(v.reshape(1, d, 1))
    return Mps(tensors, ortho_center=0, bond_spectra=[np.ones(1) for _ in range(len(vecs) - 1)])


def basis_product(config: Sequence[int], local_dim: int = 2) -> Mps:
    """Product of computational basis states, e.g. ``[0, 0, 1, 0, 0]``."""
    vecs = []
    for s in config:
        v = np.zeros(local_dim)
        v[s] = 1.0
        vecs.append(v)
    return from_product(vecs)


def apply_two_site_gate(
    state: Mps,
    gate: TwoSiteGate,
    chi_max: int,
    svd_cutoff: float = DEFAULT_SVD_CUTOFF,
    direction: str = "right",
) -> tuple[Mps, TruncationReport]:
    """Contract ``gate`` into sites ``(k, k+1)`` and re-split with a truncated SVD.

    Modifies ``state`` in place and returns it with a report for this single
    cut. Singular values below ``svd_cutoff`` times the largest are dropped and
    at most ``chi_max`` are kept. The kept singular values are *not*
    renormalized, so the result is the orthogonal projection onto the
    retained Schmidt space. ``direction`` decides where the centre ends up:
    ``"right"`` leaves it on ``k + 1``, ``"left"`` on ``k``.
    """
    if chi_max < 1:
        raise ValueError("chi_max must be >= 1")
    k = gate.site
    d = state.local_dim
    if k + 1 >= state.length:
        raise ValueError(f"gate site {k} out of range for length {state.length}")
    if gate.matrix.shape != (d * d, d * d):
        raise ValueError(f"gate shape {gate.matrix.shape} does not match local dimension {d}")
    if direction not in ("right", "left"):
        raise ValueError(f"unknown direction {direction!r}")
    discarded = _apply_matrix(state, gate.matrix, k, gate.is_unitary, chi_max, svd_cutoff, direction == "right")
    report = TruncationReport.empty(state.n_bonds)
    report.per_bond_discarded_weight[k] = discarded
    report.max_bond_entropy = entropy_from_spectrum(state.bond_spectra[k])
    return state, report


def _apply_matrix(
    state: Mps,
    matrix: NDArray,
    k: int,
    is_unitary: bool,
    chi_max: int,
    svd_cutoff: float,
    to_right: bool,
) -> float:
    """Unchecked gate application; returns the relative discarded weight."""
    d = state.local_dim
    c = state.ortho_center
    if c is None or c < k:
        state.move_center(k)
    elif c > k + 1:
        state.move_center(k + 1)

    a, b = state.tensors[k], state.tensors[k + 1]
    cl, cr = a.shape[0], b.shape[2]
    theta = (a.reshape(cl * d, -1) @ b.reshape(b.shape[0], d * cr)).reshape(cl, d * d, cr)
    # (cl, d*d, cr) -> (d*d, cl*cr)
    theta = theta.transpose(1, 0, 2).reshape(d * d, cl * cr)
    theta = (matrix @ theta).reshape(d, d, cl, cr).transpose(2, 0, 1, 3).reshape(cl * d, d * cr)

    u, s, vh = _svd(theta)
    total = float(np.dot(s, s))
    if total == 0.0:
        raise FloatingPointError(f"gate at bond {k} annihilated the state")
    keep = int(np.count_nonzero(s > svd_cutoff * s[0]))
    keep = max(1, min(keep, chi_max))
    kept_weight = float(np.dot(s[:keep], s[:keep]))
    discarded = max(0.0, (total - kept_weight) / total)
    u, s, vh = u[:, :keep], s[:keep], vh[:keep]

    if to_right:
        state.tensors[k] = u.reshape(cl, d, keep)
        state.tensors[k + 1] = (s[:, None] * vh).reshape(keep, d, cr)
        state.ortho_center = k + 1
    else:
        state.tensors[k] = (u * s[None, :]).reshape(cl, d, keep)
        state.tensors[k + 1] = vh.reshape(keep, d, cr)
        state.ortho_center = k

    state.bond_spectra[k] = s / np.sqrt(kept_weight)
    state._fresh[k] = True
    if not is_unitary:
        state.invalidate_spectra(keep=k)
    return discarded


def _svd(m: NDArray) -> tuple[NDArray, NDArray[np.float64], NDArray]:
    """Thin SVD via LAPACK gesdd, falling back to the slower but robust gesvd."""
    gesdd = scipy.linalg.lapack.get_lapack_funcs("gesdd", (m,))
    u, s, vh, info = gesdd(m, compute_uv=1, full_matrices=0)
    if info == 0:
        return u, s, vh
    return scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")


def apply_gates(
    state: Mps,
    gates: Sequence[TwoSiteGate],
    chi_max: int,
    svd_cutoff: float = DEFAULT_SVD_CUTOFF,
    track_entropy: bool = True,
) -> TruncationReport:
    """Apply a gate sequence in order, steering the centre toward the next gate.

    With ``track_entropy`` the report's ``max_bond_entropy`` is the largest
    entropy among the freshly cut bonds; engines that measure entropies
    themselves switch it off.
    """
    if chi_max < 1:
        raise ValueError("chi_max must be >= 1")
    d = state.local_dim
    discarded = [0.0] * state.n_bonds
    max_entropy = 0.0
    n = len(gates)
    for i, gate in enumerate(gates):
        if gate.site + 1 >= state.length or gate.matrix.shape != (d * d, d * d):
            raise ValueError(f"gate at site {gate.site} does not fit the state")
        to_right = i + 1 == n or gates[i + 1].site > gate.site
        discarded[gate.site] += _apply_matrix(
            state, gate.matrix, gate.site, gate.is_unitary, chi_max, svd_cutoff, to_right
        )
    for k in {g.site for g in gates} if track_entropy else ():
        if state._fresh[k]:
            max_entropy = max(max_entropy, entropy_from_spectrum(state.bond_spectra[k]))
    return TruncationReport(discarded, max_entropy)


def apply_single_site(state: Mps, op: ArrayLike, site: int) -> Mps:
    """Apply a local ``d x d`` operator in place (centre moved to ``site`` first)."""
    op = _compact(op)
    if op.shape != (state.local_dim, state.local_dim):
        raise ValueError(f"operator shape {op.shape} does not match local dimension {state.local_dim}")
    if state.ortho_center != site:
        state.move_center(site)
    state.tensors[site] = np.einsum("st,atb->asb", op, state.tensors[site])
    state.invalidate_spectra()
    return state


def schmidt_entropy(state: Mps, bond: int) -> float:
    """Entanglement entropy (natural log) across ``bond``, from the stored spectrum."""
    if not 0 <= bond < state.n_bonds:
        raise IndexError(f"bond {bond} outside [0, {state.n_bonds - 1}]")
    if not state._fresh[bond]:
        raise StaleSpectraError(f"spectrum at bond {bond} is stale; call refresh_spectra() first")
    return entropy_from_spectrum(state.bond_spectra[bond])


def bond_entropies(state: Mps) -> NDArray[np.float64]:
    if not state.spectra_fresh:
        state.refresh_spectra()
    return np.array([entropy_from_spectrum(s) for s in state.bond_spectra])


def max_entropy_over_bonds(state: Mps) -> float:
    """Largest bond entropy, refreshing stale spectra first."""
    if state.n_bonds == 0:
        return 0.0
    return float(bond_entropies(state).max())


def overlap(a: Mps, b: Mps) -> complex:
    """``<a|b>`` with ``a`` conjugated, by left-to-right transfer contraction."""
    if a.length != b.length or a.local_dim != b.local_dim:
        raise ValueError("overlap needs states of equal length and local dimension")
    env = np.ones((1, 1), dtype=np.complex128)
    for ta, tb in zip(a.tensors, b.tensors):
        # env[a', b'] = sum conj(ta[a, s, a']) env[a, b] tb[b, s, b']
        tmp = env.T @ ta.conj().reshape(ta.shape[0], -1)  # (b, s*a')
        tmp = tmp.reshape(tb.shape[0], ta.shape[1], ta.shape[2])
        env = np.tensordot(tmp, tb, axes=([0, 1], [0, 1]))  # (a', b')
    return complex(env[0, 0])


def product_overlap(local_bras: Sequence[ArrayLike], state: Mps) -> complex:
    """``<p|state>`` for a product vector ``p`` (given unconjugated)."""
    vec = np.ones(1, dtype=np.complex128)
    for p, t in zip(local_bras, state.tensors):
        p = np.asarray(p, dtype=np.complex128).conj()
        vec = vec @ np.tensordot(p, t, axes=([0], [1]))
    return complex(vec[0])


def product_functional_profile(
    local_bras: Sequence[ArrayLike], state: Mps, op: ArrayLike
) -> NDArray[np.complex128]:
    """``<p| op_k |state>`` for every site ``k`` in one pass.

    Used for double-space traces, where ``p`` is the vectorized identity.
    """
    op = np.asarray(op, dtype=np.complex128)
    L = state.length
    bras = [np.asarray(p, dtype=np.complex128).conj() for p in local_bras]
    plain = [np.tensordot(p, t, axes=([0], [1])) for p, t in zip(bras, state.tensors)]
    with_op = [np.tensordot(p @ op, t, axes=([0], [1])) for p, t in zip(bras, state.tensors)]
    left = [np.ones(1, dtype=np.complex128)]
    for k in range(L - 1):
        left.append(left[-1] @ plain[k])
    right = np.ones(1, dtype=np.complex128)
    out = np.empty(L, dtype=np.complex128)
    for k in range(L - 1, -1, -1):
        out[k] = left[k] @ with_op[k] @ right
        right = plain[k] @ right
    return out


def local_expectation(state: Mps, op: ArrayLike, site: int) -> complex:
    """``<psi| op_site |psi>`` using the orthogonality centre (moved if needed)."""
    op = _compact(op)
    if not 0 <= site < state.length:
        raise IndexError(f"site {site} outside chain of length {state.length}")
    if op.shape != (state.local_dim, state.local_dim):
        raise ValueError(f"operator shape {op.shape} does not match local dimension {state.local_dim}")
    if state.ortho_center != site:
        state.move_center(site)
    t = state.tensors[site]
    return complex(np.einsum("asb,st,atb->", t.conj(), op, t))


def local_expectations(state: Mps, op: ArrayLike) -> NDArray[np.complex128]:
    """``<psi| op_k |psi>`` for every site in O(L) contractions, without moving the centre."""
    op = _compact(op)
    L = state.length
    d = state.local_dim
    c = state.ortho_center
    if c is None:
        state.move_center(0)
        c = 0
    out = np.empty(L, dtype=np.complex128)

    def value(t: NDArray, tk: NDArray) -> complex:
        # sum conj(t[a,s,b]) op[s,u] tk[a,u,b]
        a, _, b = tk.shape
        applied = (op @ tk.transpose(1, 0, 2).reshape(d, a * b)).reshape(d, a, b).transpose(1, 0, 2)
        return np.vdot(t, applied)

    # sites c..L-1: the left environment is the identity at c
    env = None
    for k in range(c, L):
        t = state.tensors[k]
        a, _, b = t.shape
        tl = t if env is None else (env @ t.reshape(env.shape[1], d * b)).reshape(env.shape[0], d, b)
        out[k] = value(t, tl)
        env = t.reshape(a * d, b).conj().T @ tl.reshape(a * d, b)
    # sites c-1..0: the right environment starts from the centre tensor
    env = None
    for k in range(c - 1, -1, -1):
        nxt = state.tensors[k + 1]
        a, _, b = nxt.shape
        tr = nxt if env is None else (nxt.reshape(a * d, b) @ env).reshape(a, d, -1)
        env = tr.reshape(a, -1) @ nxt.reshape(a, d * b).conj().T
        t = state.tensors[k]
        a, _, b = t.shape
        out[k] = value(t, (t.reshape(a * d, b) @ env).reshape(a, d, b))
    return out
