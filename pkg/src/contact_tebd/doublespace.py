"""TEBD for vectorized density matrices and vectorized observables.

Schrödinger mode evolves ``|rho(t)>`` with the forward schedule and divides by
the trace after each full step. Heisenberg mode evolves an observable with the
adjoint schedule and contracts it against the fixed initial state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from . import model as m
from .model import ModelSpec
from .mps import (
    DEFAULT_SVD_CUTOFF,
    Mps,
    TruncationReport,
    apply_gates,
    from_product,
    max_entropy_over_bonds,
    overlap,
    product_functional_profile,
    product_overlap,
)

SERIES_COLUMNS = ("t", "P_sur", "N_a", "n_seed", "S_tilde", "err_est", "step_err")

_SWAP_LOCAL = np.array([0, 2, 1, 3])  # (m, n) -> (n, m) on a double-space site


# -- vectorized product states ---------------------------------------------------


def vectorized_product(local_ops: list[NDArray]) -> Mps:
    """Double-space MPS of ``op_1 x op_2 x ...`` (operators given as 2x2 matrices)."""
    return from_product([m.local_vec(op) for op in local_ops], normalize=False)


def seed_state(spec: ModelSpec) -> Mps:
    """``sigma_+ rho_a sigma_-`` on the seed site."""
    proj_occ = np.outer(m.OCCUPIED, m.OCCUPIED)
    proj_emp = np.outer(m.EMPTY, m.EMPTY)
    return vectorized_product([proj_occ if k == spec.seed_site else proj_emp for k in range(spec.L)])


def absorbing_state(L: int) -> Mps:
    return vectorized_product([np.outer(m.EMPTY, m.EMPTY)] * L)


def identity_state(L: int) -> Mps:
    return vectorized_product([m.IDENTITY] * L)


def full_state(L: int) -> Mps:
    """Fully occupied product state (homogeneous initial condition)."""
    return vectorized_product([np.outer(m.OCCUPIED, m.OCCUPIED)] * L)


def local_operator_state(L: int, op: NDArray, site: int) -> Mps:
    """Vectorized ``op`` on ``site`` with identities elsewhere."""
    return vectorized_product([op if k == site else m.IDENTITY for k in range(L)])


def sum_operator_state(L: int, op: NDArray) -> Mps:
    """Vectorized ``sum_k op_k`` as an exact bond-dimension-2 MPS."""
    e = m.IDENTITY_VEC
    o = m.local_vec(op)
    tensors = []
    for k in range(L):
        if L == 1:
            t = o.reshape(1, 4, 1)
        elif k == 0:
            t = np.zeros((1, 4, 2), dtype=np.complex128)
            t[0, :, 0] = e
            t[0, :, 1] = o
        elif k == L - 1:
            t = np.zeros((2, 4, 1), dtype=np.complex128)
            t[0, :, 0] = o
            t[1, :, 0] = e
        else:
            t = np.zeros((2, 4, 2), dtype=np.complex128)
            t[0, :, 0] = e
            t[0, :, 1] = o
            t[1, :, 1] = e
        tensors.append(t)
    state = Mps(tensors)
    state.move_center(0)
    return state


def hermiticity_defect(state: Mps) -> float:
    """``|| |O> - |O^+> ||`` relative to ``|| |O> ||`` for a vectorized operator."""
    adj = Mps([t[:, _SWAP_LOCAL, :].conj() for t in state.tensors])
    nn = overlap(state, state).real
    na = overlap(state, adj).real
    if nn <= 0:
        return 0.0
    return float(math.sqrt(max(0.0, 2.0 * nn - 2.0 * na) / nn))


# -- run containers ------------------------------------------------------------


@dataclass
class ObservableSeries:
    """Time series recorded by a double-space or trajectory run (times in units of 1/gamma)."""

    times: list[float] = field(default_factory=list)
    survival: list[float] = field(default_factory=list)
    total_density: list[float] = field(default_factory=list)
    seed_density: list[float] = field(default_factory=list)
    op_entropy: list[float] = field(default_factory=list)
    error_estimate: list[float] = field(default_factory=list)
    step_error: list[float] = field(default_factory=list)
    density_profile: list[list[float]] | None = None
    expectation: list[float] = field(default_factory=list)
    hermiticity_defect: list[float] = field(default_factory=list)
    max_imag: list[float] = field(default_factory=list)

    def as_arrays(self) -> dict[str, NDArray[np.float64]]:
        return {
            "t": np.array(self.times),
            "P_sur": np.array(self.survival),
            "N_a": np.array(self.total_density),
            "n_seed": np.array(self.seed_density),
            "S_tilde": np.array(self.op_entropy),
            "err_est": np.array(self.error_estimate),
            "step_err": np.array(self.step_error),
        }

    def to_csv(self, path: str | Path) -> None:
        cols = self.as_arrays()
        n = len(self.times)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SERIES_COLUMNS)
            for i in range(n):
                w.writerow([_fmt(cols[c][i]) if i < len(cols[c]) else "nan" for c in SERIES_COLUMNS])

    def profile_to_csv(self, path: str | Path) -> None:
        if self.density_profile is None:
            raise ValueError("no density profile was recorded")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"n_{k}" for k in range(len(self.density_profile[0]))])
            for t, row in zip(self.times, self.density_profile):
                w.writerow([_fmt(t)] + [_fmt(x) for x in row])

    @classmethod
    def from_csv(cls, path: str | Path) -> ObservableSeries:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        get = lambda c: [float(r[c]) for r in rows]  # noqa: E731
        return cls(
            times=get("t"),
            survival=get("P_sur"),
            total_density=get("N_a"),
            seed_density=get("n_seed"),
            op_entropy=get("S_tilde"),
            error_estimate=get("err_est"),
            step_error=get("step_err") if rows and "step_err" in rows[0] else [],
        )


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


@dataclass
class DoubleSpaceRun:
    """Configuration and live state of a double-space TEBD run.

    ``initial`` is ``"seed"``, ``"vacuum"``, ``"full"`` or an explicit
    double-space :class:`Mps`. ``state`` and ``identity_vec`` are filled in
    when the run starts. With ``real_gauge`` the evolution runs in the phase
    gauge of :func:`contact_tebd.model.gauge_matrix`, where all gates are
    real; explicit initial states and observables are mapped into the gauge
    on entry, and ``state`` is left in the gauge.
    """

    spec: ModelSpec
    picture: str = "schrodinger"
    chi_max: int = 64
    dt: float = 0.1
    t_max: float = 10.0
    measure_every: int = 1
    svd_cutoff: float = DEFAULT_SVD_CUTOFF
    initial: str | Mps = "seed"
    real_gauge: bool = True
    record_profile: bool = False
    monitor_hermiticity: bool = False
    state: Mps | None = None
    identity_vec: Mps | None = None
    trace_log: list[float] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def initial_state(self) -> Mps:
        if isinstance(self.initial, Mps):
            return to_gauge(self.initial) if self.real_gauge else self.initial.copy()
        if self.initial == "seed":
            return seed_state(self.spec)
        if self.initial == "vacuum":
            return absorbing_state(self.spec.L)
        if self.initial == "full":
            return full_state(self.spec.L)
        raise ValueError(f"unknown initial state {self.initial!r}")


def to_gauge(state: Mps) -> Mps:
    """Copy of a double-space MPS with ``u (.) u^dagger`` applied on every site."""
    phase = np.diag(m.gauge_matrix("schrodinger_double", 1))
    out = state.copy()
    out.tensors = [t * phase[None, :, None] for t in out.tensors]
    return out


def _schedule_gates(run: DoubleSpaceRun, picture: str):
    return m.build_trotter_schedule(run.spec, picture, run.dt, run.real_gauge)


def run_schrodinger(run: DoubleSpaceRun) -> ObservableSeries:
    """Evolve ``|rho(t)> = exp(t L)|rho(0)>`` and record observables at the measurement cadence."""
    if run.picture != "schrodinger":
        raise ValueError(f"run picture is {run.picture!r}, expected 'schrodinger'")
    spec = run.spec
    schedule = _schedule_gates(run, "schrodinger_double")
    state = run.initial_state()
    if state.local_dim != 4 or state.length != spec.L:
        raise ValueError("initial state must be a double-space MPS of length L")
    run.state = state
    run.identity_vec = identity_state(spec.L)
    run.trace_log = []
    ident = [m.IDENTITY_VEC] * spec.L
    absorbing = [m.EMPTY_VEC] * spec.L
    n_super = m.superop(m.NUMBER, m.IDENTITY)

    trace0 = product_overlap(ident, state).real
    if trace0 <= 0:
        raise ValueError("initial state has non-positive trace")
    state.scale(1.0 / trace0)

    series = ObservableSeries(density_profile=[] if run.record_profile else None)
    cumulative = 0.0

    def measure(t: float, step_err: float) -> None:
        prof = product_functional_profile(ident, state, n_super)
        series.times.append(t)
        series.total_density.append(float(prof.real.sum()))
        series.seed_density.append(float(prof[spec.seed_site].real))
        series.survival.append(float(1.0 - product_overlap(absorbing, state).real))
        series.op_entropy.append(max_entropy_over_bonds(state))
        series.error_estimate.append(cumulative)
        series.step_error.append(step_err)
        series.max_imag.append(float(np.abs(prof.imag).max()))
        if series.density_profile is not None:
            series.density_profile.append(prof.real.tolist())

    measure(0.0, 0.0)
    window = TruncationReport.empty(state.n_bonds)
    for step in range(1, run.n_steps + 1):
        report = apply_gates(state, schedule.gates, run.chi_max, run.svd_cutoff, track_entropy=False)
        window.merge(report)
        tr = product_overlap(ident, state).real
        run.trace_log.append(tr)
        state.scale(1.0 / tr)
        step_err = report.global_error_estimate
        cumulative += step_err
        if step % run.measure_every == 0:
            measure(step * run.dt, window.global_error_estimate)
            window = TruncationReport.empty(state.n_bonds)
    return series


def run_heisenberg(
    run: DoubleSpaceRun,
    observable: Mps,
    observable_name: str = "absorbing",
) -> ObservableSeries:
    """Evolve ``|O(t)> = exp(t L^+)|O>`` and record ``<O(t)|rho(0)>``.

    With ``observable_name="absorbing"`` the survival probability
    ``1 - <rho_a(t)|rho(0)>`` is also filled in. No renormalization is applied.
    """
    if run.picture != "heisenberg":
        raise ValueError(f"run picture is {run.picture!r}, expected 'heisenberg'")
    spec = run.spec
    if observable.local_dim != 4 or observable.length != spec.L:
        raise ValueError("observable must be a double-space MPS of length L")
    schedule = _schedule_gates(run, "heisenberg_double")
    rho0 = run.initial_state()
    trace0 = product_overlap([m.IDENTITY_VEC] * spec.L, rho0).real
    rho0.scale(1.0 / trace0)
    state = to_gauge(observable) if run.real_gauge else observable.copy()
    run.state = state
    run.identity_vec = identity_state(spec.L)
    run.trace_log = []

    series = ObservableSeries()
    cumulative = 0.0

    def measure(t: float, step_err: float) -> None:
        val = overlap(state, rho0)
        series.times.append(t)
        series.expectation.append(float(val.real))
        series.max_imag.append(float(abs(val.imag)))
        if observable_name == "absorbing":
            series.survival.append(float(1.0 - val.real))
        else:
            series.survival.append(float("nan"))
        series.total_density.append(float("nan"))
        series.seed_density.append(float(val.real) if observable_name == "seed_density" else float("nan"))
        series.op_entropy.append(max_entropy_over_bonds(state))
        series.error_estimate.append(cumulative)
        series.step_error.append(step_err)
        if run.monitor_hermiticity:
            series.hermiticity_defect.append(hermiticity_defect(state))

    measure(0.0, 0.0)
    window = TruncationReport.empty(state.n_bonds)
    for step in range(1, run.n_steps + 1):
        report = apply_gates(state, schedule.gates, run.chi_max, run.svd_cutoff, track_entropy=False)
        window.merge(report)
        cumulative += report.global_error_estimate
        if step % run.measure_every == 0:
            measure(step * run.dt, window.global_error_estimate)
            window = TruncationReport.empty(state.n_bonds)
    return series


@dataclass
class EntropyBarrier:
    times: NDArray[np.float64]
    values: NDArray[np.float64]
    peak_time: float
    peak_height: float

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.values.tolist()))


def entropy_barrier_series(series: ObservableSeries) -> EntropyBarrier:
    """Operator-space entropy curve with the location and height of its maximum."""
    if not series.op_entropy:
        raise ValueError("series has no entropy data")
    t = np.asarray(series.times, dtype=float)
    s = np.asarray(series.op_entropy, dtype=float)
    i = int(np.argmax(s))
    return EntropyBarrier(t, s, float(t[i]), float(s[i]))
