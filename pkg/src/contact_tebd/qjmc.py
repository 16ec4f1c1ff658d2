"""Quantum-jump Monte Carlo for the quantum contact process.

Each trajectory is a pure-state MPS evolved with the non-Hermitian Trotter
schedule and interrupted by single-site decay jumps. The jump scheme is first
order: per step one uniform number decides between a jump (probabilities
from the pre-step densities) and a deterministic step, and the state is
renormalized afterwards.

Trajectory seeds are derived from ``(master_seed, index)`` so serial and
parallel ensembles are bitwise identical.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.typing import NDArray

from . import model as m
from .model import GateSchedule, JumpOperator, ModelSpec
from .mps import (
    DEFAULT_SVD_CUTOFF,
    Mps,
    TruncationReport,
    apply_gates,
    apply_single_site,
    basis_product,
    local_expectations,
    max_entropy_over_bonds,
    product_overlap,
)

log = logging.getLogger(__name__)

ABSORBED_THRESHOLD = 1e-12
NORM_COLLAPSE = 1e-12


class NormCollapseError(FloatingPointError):
    pass


def trajectory_seed(master_seed: int, index: int) -> int:
    """64-bit seed for trajectory ``index``, independent of execution order."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class JumpEvent(NamedTuple):
    time: float
    site: int


class StepResult(NamedTuple):
    state: Mps
    event: JumpEvent | None
    report: TruncationReport
    norm2: float
    """Squared norm before renormalization."""


def step_trajectory(
    state: Mps,
    schedule: GateSchedule,
    jumps: Sequence[JumpOperator],
    dt: float,
    rng: np.random.Generator,
    chi_max: int,
    svd_cutoff: float = DEFAULT_SVD_CUTOFF,
    densities: NDArray[np.float64] | None = None,
    t: float = 0.0,
) -> StepResult:
    """Advance one step of length ``dt`` (the jump, if any, replaces the step).

    ``densities`` are the current ``<n_k>``; they are computed if not given.
    ``t`` is only used to time-stamp a jump (recorded at ``t + dt``).
    """
    if abs(schedule.dt - dt) > 1e-15 * max(1.0, dt):
        raise ValueError(f"schedule dt {schedule.dt} does not match step dt {dt}")
    if densities is None:
        densities = local_expectations(state, m.NUMBER).real
    rates = np.array([j.rate for j in jumps])
    p = dt * rates * densities
    cum = np.cumsum(p)
    u = rng.random()
    if u < cum[-1]:
        k = int(np.searchsorted(cum, u, side="right"))
        jump = jumps[k]
        apply_single_site(state, jump.matrix, jump.site)
        event = JumpEvent(t + dt, jump.site)
        report = TruncationReport.empty(state.n_bonds)
    else:
        event = None
        report = apply_gates(state, schedule.gates, chi_max, svd_cutoff, track_entropy=False)
    norm = state.normalize()
    if norm < NORM_COLLAPSE:
        raise NormCollapseError(f"state norm {norm:.3e} collapsed at t={t + dt:.4f}")
    return StepResult(state, event, report, norm * norm)


# -- records ---------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Observables of one trajectory at the measurement times."""

    seed: int
    index: int
    chi_max: int
    dt: float
    times: list[float] = field(default_factory=list)
    survival_overlap: list[float] = field(default_factory=list)
    total_density: list[float] = field(default_factory=list)
    seed_density: list[float] = field(default_factory=list)
    entropy: list[float] = field(default_factory=list)
    discarded_weight: list[float] = field(default_factory=list)
    jump_log: list[tuple[float, int]] = field(default_factory=list)
    absorbed_at: float | None = None
    n_profile: list[list[float]] | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jump_log"] = [list(j) for j in self.jump_log]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> TrajectoryRecord:
        d = dict(d)
        d["jump_log"] = [(float(t), int(k)) for t, k in d.get("jump_log", [])]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def _vacuum(L: int) -> Mps:
    return basis_product([0] * L)


def seed_pure_state(spec: ModelSpec) -> Mps:
    return basis_product([1 if k == spec.seed_site else 0 for k in range(spec.L)])


def run_trajectory(
    spec: ModelSpec,
    chi_max: int,
    dt: float,
    t_max: float,
    seed: int,
    measure_every: int = 10,
    svd_cutoff: float = DEFAULT_SVD_CUTOFF,
    record_profile: bool = False,
    initial: Mps | None = None,
    index: int = -1,
    freeze: bool = True,
    real_gauge: bool = True,
) -> TrajectoryRecord:
    """Run one trajectory from the seed state (or ``initial``) up to ``t_max``.

    ``real_gauge`` evolves in the phase gauge ``|*> -> i|*>`` where the
    non-Hermitian step is real; a jump then differs from the plain one by a
    global phase only, so every recorded quantity is unchanged. When every
    site density falls below ``1e-12`` the state is replaced by the exact
    vacuum and the remaining measurements are filled without further
    evolution.
    """
    if spec.kind != "quantum":
        raise m.UnsupportedConfigurationError("trajectories are only defined for the quantum contact process")
    schedule = m.build_trotter_schedule(spec, "pure_state_nonhermitian", dt, real_gauge)
    jumps = m.jump_operators(spec)
    rng = np.random.default_rng(seed)
    if initial is None:
        state = seed_pure_state(spec)
    elif real_gauge:
        phase = np.diag(m.gauge_matrix("pure_state_nonhermitian", 1))
        state = initial.copy()
        state.tensors = [t * phase[None, :, None] for t in state.tensors]
    else:
        state = initial.copy()
    state.normalize()
    vac = [m.EMPTY] * spec.L
    n_steps = int(round(t_max / dt))
    rec = TrajectoryRecord(seed=int(seed), index=index, chi_max=chi_max, dt=dt)
    if record_profile:
        rec.n_profile = []
    window = 0.0
    frozen = False

    def measure(t: float, dens: NDArray[np.float64]) -> None:
        nonlocal window
        rec.times.append(round(t, 12))
        rec.total_density.append(float(dens.sum()))
        rec.seed_density.append(float(dens[spec.seed_site]))
        rec.survival_overlap.append(float(abs(product_overlap(vac, state)) ** 2))
        rec.entropy.append(0.0 if frozen else max_entropy_over_bonds(state))
        rec.discarded_weight.append(window)
        if rec.n_profile is not None:
            rec.n_profile.append(dens.tolist())
        window = 0.0

    for step in range(n_steps + 1):
        t = step * dt
        dens = np.zeros(spec.L) if frozen else local_expectations(state, m.NUMBER).real
        if freeze and not frozen and np.all(dens < ABSORBED_THRESHOLD):
            frozen = True
            rec.absorbed_at = round(t, 12)
            state = _vacuum(spec.L)
            dens = np.zeros(spec.L)
        if step % measure_every == 0:
            measure(t, dens)
        if step == n_steps:
            break
        if frozen:
            continue
        res = step_trajectory(state, schedule, jumps, dt, rng, chi_max, svd_cutoff, densities=dens, t=t)
        state = res.state
        window += res.report.total_discarded_weight
        if res.event is not None:
            rec.jump_log.append((round(res.event.time, 12), res.event.site))
    return rec


# -- ensembles -------------------------------------------------------------------


@dataclass
class EnsembleStats:
    """Sample means, standard errors and entanglement snapshots of an ensemble.

    ``samples`` holds per-trajectory arrays of shape ``(n_traj, n_times)`` for
    ``survival_overlap``, ``N_a``, ``n_seed`` and ``S``, which is what the
    bootstrap resamples.
    """

    n_traj: int
    times: NDArray[np.float64]
    mean: dict[str, NDArray[np.float64]]
    stderr: dict[str, NDArray[np.float64] | None]
    samples: dict[str, NDArray[np.float64]]
    s_bar: float
    chi_max: int | None = None

    @classmethod
    def from_records(cls, records: Sequence[TrajectoryRecord]) -> EnsembleStats:
        if not records:
            raise ValueError("need at least one trajectory")
        times = np.asarray(records[0].times)
        for r in records:
            if len(r.times) != len(times):
                raise ValueError("trajectories have different measurement grids")
        samples = {
            "survival_overlap": np.array([r.survival_overlap for r in records]),
            "N_a": np.array([r.total_density for r in records]),
            "n_seed": np.array([r.seed_density for r in records]),
            "S": np.array([r.entropy for r in records]),
        }
        samples["P_sur"] = 1.0 - samples["survival_overlap"]
        n = len(records)
        mean = {k: v.mean(axis=0) for k, v in samples.items()}
        if n > 1:
            stderr = {k: v.std(axis=0, ddof=1) / np.sqrt(n) for k, v in samples.items()}
        else:
            stderr = {k: None for k in samples}
        return cls(
            n_traj=n,
            times=times,
            mean=mean,
            stderr=stderr,
            samples=samples,
            s_bar=float(samples["S"].max()),
            chi_max=records[0].chi_max,
        )

    def snapshot(self, t: float) -> NDArray[np.float64]:
        """Entanglement of every trajectory at the measurement time closest to ``t``."""
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"no measurement at t={t}")
        return self.samples["S"][:, i]

    def to_csv(self, path: str | Path) -> None:
        cols = ["t", "P_sur", "P_sur_se", "N_a", "N_a_se", "n_seed", "n_seed_se", "S_mean"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for i, t in enumerate(self.times):
                row = [t]
                for k in ("P_sur", "N_a", "n_seed"):
                    se = self.stderr[k]
                    row += [self.mean[k][i], float("nan") if se is None else se[i]]
                row.append(self.mean["S"][i])
                fh.write(",".join(f"{float(x):.12g}" for x in row) + "\n")


class EnsembleStore:
    """Directory of per-trajectory JSON records plus a manifest.

    Records are named by trajectory index, so an ensemble can be extended
    with more trajectories later without recomputing existing ones.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.traj_dir = self.path / "trajectories"

    @property
    def manifest_path(self) -> Path:
        return self.path / "manifest.json"

    def exists(self) -> bool:
        return self.manifest_path.exists()

    def create(self, manifest: dict) -> None:
        self.traj_dir.mkdir(parents=True, exist_ok=True)
        if self.exists():
            old = self.manifest
            for key in ("spec", "chi_max", "dt", "t_max", "master_seed", "measure_every"):
                if old.get(key) != manifest.get(key):
                    raise ValueError(f"existing store differs in {key!r}: {old.get(key)} != {manifest.get(key)}")
            manifest = {**old, **manifest, "n_traj": max(old.get("n_traj", 0), manifest.get("n_traj", 0))}
        self.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    @property
    def manifest(self) -> dict:
        return json.loads(self.manifest_path.read_text())

    def record_path(self, index: int) -> Path:
        return self.traj_dir / f"traj_{index:06d}.json"

    def has(self, index: int) -> bool:
        return self.record_path(index).exists()

    def append(self, record: TrajectoryRecord) -> None:
        if record.index < 0:
            raise ValueError("stored trajectories need a non-negative index")
        self.traj_dir.mkdir(parents=True, exist_ok=True)
        tmp = self.record_path(record.index).with_suffix(".tmp")
        tmp.write_text(record.to_json() + "\n")
        os.replace(tmp, self.record_path(record.index))

    def indices(self) -> list[int]:
        if not self.traj_dir.exists():
            return []
        return sorted(int(p.stem.split("_")[1]) for p in self.traj_dir.glob("traj_*.json"))

    def records(self, n_traj: int | None = None) -> list[TrajectoryRecord]:
        idx = self.indices()
        if n_traj is not None:
            idx = [i for i in idx if i < n_traj]
        return [TrajectoryRecord.from_dict(json.loads(self.record_path(i).read_text())) for i in idx]

    def stats(self, n_traj: int | None = None) -> EnsembleStats:
        return EnsembleStats.from_records(self.records(n_traj))


def _run_one(args: tuple) -> TrajectoryRecord:
    spec, chi_max, dt, t_max, master_seed, index, measure_every, svd_cutoff = args
    return run_trajectory(
        spec,
        chi_max,
        dt,
        t_max,
        trajectory_seed(master_seed, index),
        measure_every=measure_every,
        svd_cutoff=svd_cutoff,
        index=index,
    )


def run_ensemble(
    spec: ModelSpec,
    chi_max: int,
    dt: float,
    t_max: float,
    n_traj: int,
    master_seed: int,
    measure_every: int = 10,
    svd_cutoff: float = DEFAULT_SVD_CUTOFF,
    store: EnsembleStore | str | Path | None = None,
    n_workers: int = 1,
) -> EnsembleStats:
    """Run ``n_traj`` trajectories and aggregate them.

    With a ``store``, already-present trajectory indices are loaded instead
    of recomputed and new ones are appended as they finish.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    if store is not None and not isinstance(store, EnsembleStore):
        store = EnsembleStore(store)
    if store is not None:
        store.create(
            {
                "spec": spec.to_dict(),
                "chi_max": chi_max,
                "dt": dt,
                "t_max": t_max,
                "master_seed": master_seed,
                "measure_every": measure_every,
                "svd_cutoff": svd_cutoff,
                "n_traj": n_traj,
            }
        )
    todo = [i for i in range(n_traj) if store is None or not store.has(i)]
    done: dict[int, TrajectoryRecord] = {}
    jobs = [(spec, chi_max, dt, t_max, master_seed, i, measure_every, svd_cutoff) for i in todo]
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for rec in pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * n_workers))):
                done[rec.index] = rec
                if store is not None:
                    store.append(rec)
    else:
        for n, job in enumerate(jobs):
            rec = _run_one(job)
            done[rec.index] = rec
            if store is not None:
                store.append(rec)
            if (n + 1) % 100 == 0:
                log.info("chi=%d: %d/%d trajectories", chi_max, n + 1, len(jobs))
    if store is not None:
        records = store.records(n_traj)
    else:
        records = [done[i] for i in range(n_traj)]
    return EnsembleStats.from_records(records)


# -- entanglement histograms -----------------------------------------------------


@dataclass
class EntanglementHistogram:
    edges: NDArray[np.float64]
    heights: NDArray[np.float64]
    mean: float
    cutoff: float
    t: float
    first_bin_scale: float | None = None

    @property
    def display_heights(self) -> NDArray[np.float64]:
        h = self.heights.copy()
        if self.first_bin_scale is not None:
            h[0] *= self.first_bin_scale
        return h

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# t={self.t:.12g}\n# mean_S={self.mean:.12g}\n# S_bar={self.cutoff:.12g}\n")
            if self.first_bin_scale is not None:
                fh.write(f"# first_bin_scale={self.first_bin_scale:.12g}\n")
            fh.write("bin_left,bin_right,height\n")
            for lo, hi, h in zip(self.edges[:-1], self.edges[1:], self.display_heights):
                fh.write(f"{lo:.12g},{hi:.12g},{h:.12g}\n")


def entanglement_histogram(
    stats: EnsembleStats,
    t_snapshot: float,
    reference: EnsembleStats,
    bins: int = 50,
    first_bin_scale: float | None = None,
) -> EntanglementHistogram:
    """Histogram of trajectory entanglement at ``t_snapshot``.

    Bins split the range of ``reference``'s values at its final measurement
    into ``bins`` equal widths; values outside are clipped into the end bins
    so the heights (counts / n_traj) sum to one. ``first_bin_scale`` only
    affects the emitted display heights.
    """
    values = stats.snapshot(t_snapshot)
    if values.size == 0:
        raise ValueError("empty snapshot")
    ref = reference.samples["S"][:, -1]
    lo, hi = float(ref.min()), float(ref.max())
    if hi <= lo:
        hi = lo + max(reference.s_bar, stats.s_bar, 1e-12)
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(values, lo, hi), bins=edges)
    return EntanglementHistogram(
        edges=edges,
        heights=counts / values.size,
        mean=float(values.mean()),
        cutoff=stats.s_bar,
        t=float(t_snapshot),
        first_bin_scale=first_bin_scale,
    )
