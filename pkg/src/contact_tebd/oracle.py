"""Dense brute-force reference dynamics for small chains.

Everything here works on full state vectors. The Lindbladian is assembled by
applying the master-equation map to every matrix unit, independently of the
Kronecker-product bond terms in :mod:`contact_tebd.model`, so the two can be
checked against each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from . import model as m
from .model import GateSchedule, ModelSpec

MAX_L_VECTORIZED = 6
MAX_L_PURE = 12


class SystemTooLargeError(ValueError):
    pass


@dataclass
class DenseState:
    """Full state vector, pure (``2**L``) or vectorized operator (``4**L``, site-interleaved)."""

    vector: NDArray[np.complex128]
    kind: str

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.complex128).reshape(-1)
        if self.kind not in ("pure", "vectorized"):
            raise ValueError(f"kind must be 'pure' or 'vectorized', got {self.kind!r}")

    @property
    def n_sites(self) -> int:
        base = 2 if self.kind == "pure" else 4
        return int(round(np.log(self.vector.size) / np.log(base)))

    def matrix(self) -> NDArray[np.complex128]:
        if self.kind != "vectorized":
            raise ValueError("only vectorized states have a matrix form")
        return m.unvectorize(self.vector, self.n_sites)

    def copy(self) -> DenseState:
        return DenseState(self.vector.copy(), self.kind)


def _guard(L: int, kind: str) -> None:
    limit = MAX_L_VECTORIZED if kind == "vectorized" else MAX_L_PURE
    if L > limit:
        raise SystemTooLargeError(f"L={L} exceeds the dense limit {limit} for {kind} states")


def embed(op: NDArray, site: int, L: int) -> NDArray[np.complex128]:
    """``1 x ... x op x ... x 1`` with ``op`` covering sites starting at ``site``."""
    op = np.asarray(op, dtype=np.complex128)
    span = int(round(np.log2(op.shape[0])))
    return np.kron(np.kron(np.eye(2**site), op), np.eye(2 ** (L - site - span)))


def full_hamiltonian(spec: ModelSpec) -> NDArray[np.complex128]:
    dim = 2**spec.L
    h = np.zeros((dim, dim), dtype=np.complex128)
    if spec.kind == "quantum":
        for k in range(spec.L - 1):
            h += spec.omega * (embed(np.kron(m.SIGMA_X, m.NUMBER), k, spec.L) + embed(np.kron(m.NUMBER, m.SIGMA_X), k, spec.L))
    return h


def full_jumps(spec: ModelSpec) -> list[tuple[NDArray[np.complex128], float]]:
    """``(J, rate)`` pairs of the full dissipator."""
    out = [(embed(m.SIGMA_MINUS, k, spec.L), spec.gamma) for k in range(spec.L)]
    if spec.kind == "classical":
        for k in range(spec.L - 1):
            out.append((embed(np.kron(m.SIGMA_X, m.NUMBER), k, spec.L), spec.Gamma))
            out.append((embed(np.kron(m.NUMBER, m.SIGMA_X), k, spec.L), spec.Gamma))
    return out


def lindblad_map(spec: ModelSpec, rho: NDArray) -> NDArray[np.complex128]:
    """``-i[H, rho] + sum_mu rate (J rho J^+ - 1/2 {J^+ J, rho})`` on a dense matrix."""
    h = full_hamiltonian(spec)
    out = -1j * (h @ rho - rho @ h)
    for j, rate in full_jumps(spec):
        jd = j.conj().T
        jdj = jd @ j
        out = out + rate * (j @ rho @ jd - 0.5 * (jdj @ rho + rho @ jdj))
    return out


def dense_lindbladian(spec: ModelSpec) -> NDArray[np.complex128]:
    """Generator matrix on site-interleaved vectors, built column by column from matrix units."""
    _guard(spec.L, "vectorized")
    L = spec.L
    dim = 2**L
    h = full_hamiltonian(spec)
    jumps = [(j, j.conj().T, j.conj().T @ j, r) for j, r in full_jumps(spec)]
    gen = np.zeros((dim * dim, dim * dim), dtype=np.complex128)
    for a in range(dim):
        for b in range(dim):
            unit = np.zeros((dim, dim), dtype=np.complex128)
            unit[a, b] = 1.0
            img = -1j * (h @ unit - unit @ h)
            for j, jd, jdj, r in jumps:
                img += r * (j @ unit @ jd - 0.5 * (jdj @ unit + unit @ jdj))
            col = m.vectorize(unit, L)
            gen[:, int(np.flatnonzero(col)[0])] = m.vectorize(img, L)
    return gen


def dense_effective_hamiltonian(spec: ModelSpec) -> NDArray[np.complex128]:
    h = full_hamiltonian(spec)
    for j, r in full_jumps(spec):
        h = h - 0.5j * r * (j.conj().T @ j)
    return h


# -- states --------------------------------------------------------------------


def product_vector(locals_: Sequence[NDArray]) -> NDArray[np.complex128]:
    out = np.ones(1, dtype=np.complex128)
    for v in locals_:
        out = np.kron(out, np.asarray(v, dtype=np.complex128))
    return out


def seed_pure(spec: ModelSpec) -> DenseState:
    locals_ = [m.OCCUPIED if k == spec.seed_site else m.EMPTY for k in range(spec.L)]
    return DenseState(product_vector(locals_), "pure")


def seed_vectorized(spec: ModelSpec) -> DenseState:
    locals_ = [m.OCCUPIED_VEC if k == spec.seed_site else m.EMPTY_VEC for k in range(spec.L)]
    return DenseState(product_vector(locals_), "vectorized")


def absorbing_vectorized(L: int) -> DenseState:
    return DenseState(product_vector([m.EMPTY_VEC] * L), "vectorized")


def identity_vectorized(L: int) -> DenseState:
    return DenseState(product_vector([m.IDENTITY_VEC] * L), "vectorized")


def density_profile(state: DenseState) -> NDArray[np.float64]:
    """``n(k)``: trace against ``n_k`` (vectorized) or ``<psi|n_k|psi>/<psi|psi>`` (pure)."""
    L = state.n_sites
    if state.kind == "vectorized":
        rho = state.matrix()
        return np.array([np.trace(rho @ embed(m.NUMBER, k, L)).real for k in range(L)])
    psi = state.vector
    norm2 = np.vdot(psi, psi).real
    return np.array([np.vdot(psi, embed(m.NUMBER, k, L) @ psi).real / norm2 for k in range(L)])


# -- evolution -----------------------------------------------------------------


def dense_lindblad_evolve(spec: ModelSpec, rho0: DenseState, t: float, substeps: int = 1) -> DenseState:
    """``exp(t L) |rho0>`` by dense matrix exponential over ``substeps`` equal slices."""
    _guard(spec.L, "vectorized")
    if t < 0:
        raise ValueError("t must be non-negative")
    if rho0.kind != "vectorized":
        raise ValueError("Lindblad evolution needs a vectorized state")
    if t == 0:
        return rho0.copy()
    prop = scipy.linalg.expm((t / substeps) * dense_lindbladian(spec))
    v = rho0.vector
    for _ in range(substeps):
        v = prop @ v
    return DenseState(v, "vectorized")


def apply_dense_gate(vec: NDArray, gate: NDArray, site: int, L: int, d: int) -> NDArray[np.complex128]:
    """Apply a two-site gate to a dense vector (equivalent to its Kronecker embedding)."""
    t = vec.reshape(d**site, d * d, d ** (L - site - 2))
    return np.einsum("ab,ibj->iaj", gate, t).reshape(-1)


def dense_trotter_evolve(spec: ModelSpec, state: DenseState, schedule: GateSchedule, n_steps: int) -> DenseState:
    """Apply ``n_steps`` of ``schedule`` with the exact same gate matrices as the MPS engines."""
    _guard(spec.L, state.kind)
    d = 2 if state.kind == "pure" else 4
    if schedule.L != spec.L:
        raise ValueError("schedule was built for a different chain length")
    v = state.vector.copy()
    for _ in range(n_steps):
        for g in schedule.gates:
            v = apply_dense_gate(v, g.matrix, g.site, spec.L, d)
    return DenseState(v, state.kind)


def step_matrix(schedule: GateSchedule, d: int) -> NDArray[np.complex128]:
    """Full matrix of one Trotter step, built from Kronecker embeddings of the gates."""
    L = schedule.L
    dim = d**L
    out = np.eye(dim, dtype=np.complex128)
    for g in schedule.gates:
        emb = np.kron(np.kron(np.eye(d**g.site), g.matrix), np.eye(d ** (L - g.site - 2)))
        out = emb @ out
    return out


@dataclass
class DenseTrajectory:
    times: NDArray[np.float64]
    states: list[DenseState]
    jump_log: list[tuple[float, int]]


def dense_qjmc_trajectory(
    spec: ModelSpec,
    psi0: DenseState,
    t_max: float,
    dt: float,
    seed: int,
    measure_every: int = 1,
) -> DenseTrajectory:
    """First-order jump unravelling on dense vectors, same draws as the MPS engine.

    Each step draws one uniform ``u``. If ``u < sum_k p_k`` with
    ``p_k = dt * gamma * <n_k>``, the site is chosen by the cumulative sums of
    ``p_k`` evaluated at ``u`` and ``sigma_-`` is applied; otherwise one
    non-Hermitian Trotter step is taken. The state is renormalized either way.
    """
    _guard(spec.L, "pure")
    schedule = m.build_trotter_schedule(spec, "pure_state_nonhermitian", dt)
    rng = np.random.default_rng(seed)
    L = spec.L
    lower = [embed(m.SIGMA_MINUS, k, L) for k in range(L)]
    nums = [embed(m.NUMBER, k, L) for k in range(L)]
    psi = psi0.vector / np.linalg.norm(psi0.vector)
    n_steps = int(round(t_max / dt))
    times = [0.0]
    states = [DenseState(psi.copy(), "pure")]
    jumps: list[tuple[float, int]] = []
    frozen = False
    for step in range(n_steps):
        dens = np.array([np.vdot(psi, nk @ psi).real for nk in nums])
        if not frozen and np.all(dens < 1e-12):
            frozen = True
        if not frozen:
            p = dt * spec.gamma * dens
            cum = np.cumsum(p)
            u = rng.random()
            if u < cum[-1]:
                k = int(np.searchsorted(cum, u, side="right"))
                psi = lower[k] @ psi
                jumps.append((round((step + 1) * dt, 12), k))
            else:
                for g in schedule.gates:
                    psi = apply_dense_gate(psi, g.matrix, g.site, L, 2)
            psi = psi / np.linalg.norm(psi)
        if (step + 1) % measure_every == 0:
            times.append((step + 1) * dt)
            states.append(DenseState(psi.copy(), "pure"))
    return DenseTrajectory(np.array(times), states, jumps)


# -- fixtures --------------------------------------------------------------------


def generate_fixtures() -> dict:
    """Reference numbers consumed by the engine tests."""
    out: dict = {}

    spec = ModelSpec("quantum", 4, gamma=1.0, omega=6.0)
    rho0 = seed_vectorized(spec)
    profiles = {}
    for t in (0.5, 1.0, 2.0):
        profiles[str(t)] = density_profile(dense_lindblad_evolve(spec, rho0, t, substeps=4)).tolist()
    out["qcp_L4_omega6_lindblad_profile"] = {"spec": spec.to_dict(), "times": profiles}

    ccp = ModelSpec("classical", 4, gamma=1.0, Gamma=6.75)
    rho0 = seed_vectorized(ccp)
    profiles = {}
    for t in (0.5, 1.0, 2.0):
        profiles[str(t)] = density_profile(dense_lindblad_evolve(ccp, rho0, t, substeps=4)).tolist()
    out["ccp_L4_Gamma6.75_lindblad_profile"] = {"spec": ccp.to_dict(), "times": profiles}

    # survival 1 - <rho_a|rho(t)> for the quantum chain
    rho_a = absorbing_vectorized(4).vector
    surv = {}
    for t in (0.5, 1.0, 2.0):
        v = dense_lindblad_evolve(spec, seed_vectorized(spec), t, substeps=4).vector
        surv[str(t)] = float(1.0 - np.vdot(rho_a, v).real)
    out["qcp_L4_omega6_survival"] = {"spec": spec.to_dict(), "times": surv}

    # two-site branching gate on |**> with omega*dt = pi/4: entanglement entropy
    h = np.kron(m.SIGMA_X, m.NUMBER) + np.kron(m.NUMBER, m.SIGMA_X)
    u = scipy.linalg.expm(-1j * (np.pi / 4) * h)
    psi = u @ np.kron(m.OCCUPIED, m.OCCUPIED)
    rho_a_red = np.einsum("ij,kj->ik", psi.reshape(2, 2), psi.reshape(2, 2).conj())
    ev = np.linalg.eigvalsh(rho_a_red)
    ev = ev[ev > 1e-15]
    out["branching_gate_pi4_entropy"] = {"value": float(-np.sum(ev * np.log(ev)))}
    return out


FIXTURE_PATH = Path(__file__).resolve().parents[2] / "tests" / "fixtures" / "oracle_fixtures.json"


def write_fixtures(path: str | Path = FIXTURE_PATH) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(generate_fixtures(), indent=2, sort_keys=True) + "\n")
    return path


def load_fixtures(path: str | Path = FIXTURE_PATH) -> dict:
    return json.loads(Path(path).read_text())
