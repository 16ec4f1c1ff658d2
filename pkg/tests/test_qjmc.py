from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_tebd import model as m
from contact_tebd import oracle
from contact_tebd import qjmc
from contact_tebd.model import ModelSpec
from contact_tebd.mps import basis_product, local_expectations

QCP4 = ModelSpec("quantum", 4, gamma=1.0, omega=6.0)
EXACT_CHI = 16


def first_jump_seed(spec: ModelSpec, dt: float, site: int) -> int:
    """A seed whose first uniform draw selects a jump at ``site`` from the seed state."""
    for seed in range(100000):
        if np.random.default_rng(seed).random() < dt * spec.gamma:
            return seed
    raise AssertionError("no seed found")


# -- seeds ---------------------------------------------------------------------------


def test_trajectory_seeds_are_distinct_and_stable():
    seeds = [qjmc.trajectory_seed(7, i) for i in range(200)]
    assert len(set(seeds)) == 200
    assert seeds == [qjmc.trajectory_seed(7, i) for i in range(200)]
    assert qjmc.trajectory_seed(8, 0) != seeds[0]
    assert all(0 <= s < 2**64 for s in seeds)


# -- single steps -------------------------------------------------------------------------


def _step_setup(spec: ModelSpec, dt: float):
    return m.build_trotter_schedule(spec, "pure_state_nonhermitian", dt), m.jump_operators(spec)


def test_vacuum_step_is_inert():
    spec = ModelSpec("quantum", 5, omega=6.0)
    sched, jumps = _step_setup(spec, 0.01)
    state = basis_product([0] * 5)
    before = state.to_dense().copy()
    res = qjmc.step_trajectory(state, sched, jumps, 0.01, np.random.default_rng(0), chi_max=8)
    assert res.event is None
    assert res.norm2 == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(res.state.to_dense(), before, atol=1e-14)


def test_single_excitation_jump_rate():
    spec = ModelSpec("quantum", 3, omega=0.0)
    sched, jumps = _step_setup(spec, 0.01)
    rng = np.random.default_rng(1)
    n_jumps, trials = 0, 8000
    for _ in range(trials):
        state = basis_product([0, 1, 0])
        res = qjmc.step_trajectory(state, sched, jumps, 0.01, rng, chi_max=4)
        if res.event is not None:
            assert res.event.site == 1
            n_jumps += 1
        else:
            # no-jump norm deficit equals the jump probability to first order
            assert abs((1.0 - res.norm2) - 0.01) < 1e-4
    p = n_jumps / trials
    assert abs(p - 0.01) < 3 * np.sqrt(0.01 * 0.99 / trials)


def test_no_jump_norm_deficit_is_first_order():
    sched, jumps = _step_setup(QCP4, 0.001)
    state = basis_product([0, 1, 1, 0])
    dens = local_expectations(state, m.NUMBER).real
    p_tot = 0.001 * dens.sum()

    class NoJump:
        def random(self) -> float:
            return 1.0

    res = qjmc.step_trajectory(state, sched, jumps, 0.001, NoJump(), chi_max=EXACT_CHI)
    assert res.event is None
    assert abs((1.0 - res.norm2) - p_tot) < 10 * 0.001**2


def test_step_rejects_mismatched_dt():
    sched, jumps = _step_setup(QCP4, 0.01)
    with pytest.raises(ValueError):
        qjmc.step_trajectory(basis_product([0, 1, 0, 0]), sched, jumps, 0.02, np.random.default_rng(0), 8)


def test_jump_step_timestamp_and_action():
    spec = ModelSpec("quantum", 3, omega=6.0)
    sched, jumps = _step_setup(spec, 0.01)
    rng = np.random.default_rng(first_jump_seed(spec, 0.01, 1))
    res = qjmc.step_trajectory(basis_product([0, 1, 0]), sched, jumps, 0.01, rng, 4, t=0.5)
    assert res.event == qjmc.JumpEvent(0.51, 1)
    np.testing.assert_allclose(np.abs(res.state.to_dense()), np.abs(basis_product([0, 0, 0]).to_dense()))


# -- trajectories ---------------------------------------------------------------------------


def test_classical_process_has_no_trajectories():
    with pytest.raises(m.UnsupportedConfigurationError):
        qjmc.run_trajectory(ModelSpec("classical", 4, Gamma=1.0), 8, 0.01, 0.1, seed=0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("gauge", [True, False])
def test_jump_log_matches_dense_oracle(seed, gauge):
    rec = qjmc.run_trajectory(QCP4, EXACT_CHI, 0.01, 2.0, seed, measure_every=10, record_profile=True, real_gauge=gauge)
    ref = oracle.dense_qjmc_trajectory(QCP4, oracle.seed_pure(QCP4), 2.0, 0.01, seed, measure_every=10)
    assert rec.jump_log == ref.jump_log
    np.testing.assert_allclose(rec.times, ref.times)
    dense_profiles = np.array([oracle.density_profile(s) for s in ref.states])
    np.testing.assert_allclose(rec.n_profile, dense_profiles, atol=1e-10)


def test_trajectory_basic_invariants():
    rec = qjmc.run_trajectory(ModelSpec("quantum", 9, omega=6.0), 8, 0.01, 2.0, seed=3, measure_every=5)
    assert rec.entropy[0] == 0.0
    assert rec.total_density[0] == 1.0 and rec.seed_density[0] == 1.0
    assert rec.survival_overlap[0] == 0.0
    assert len(rec.times) == 41
    for s in rec.survival_overlap:
        assert -1e-9 <= s <= 1 + 1e-9
    assert all(w >= 0 for w in rec.discarded_weight)


def test_immediate_absorption_freezes():
    spec = ModelSpec("quantum", 7, omega=6.0)
    seed = first_jump_seed(spec, 0.01, spec.seed_site)
    rec = qjmc.run_trajectory(spec, 8, 0.01, 1.0, seed, measure_every=1)
    assert rec.jump_log == [(0.01, spec.seed_site)]
    assert rec.absorbed_at == 0.01
    assert rec.total_density[1:] == [0.0] * 100
    assert rec.survival_overlap[1:] == [1.0] * 100
    assert rec.entropy[1:] == [0.0] * 100


@pytest.mark.parametrize("seed", range(10))
def test_freeze_matches_continued_simulation(seed):
    spec = ModelSpec("quantum", 5, omega=2.0)
    a = qjmc.run_trajectory(spec, 8, 0.01, 3.0, seed, measure_every=5, freeze=True)
    b = qjmc.run_trajectory(spec, 8, 0.01, 3.0, seed, measure_every=5, freeze=False)
    assert a.jump_log == b.jump_log
    for key in ("survival_overlap", "total_density", "seed_density", "entropy"):
        np.testing.assert_allclose(getattr(a, key), getattr(b, key), atol=1e-12)


def test_vacuum_initial_state_never_jumps():
    spec = ModelSpec("quantum", 6, omega=6.0)
    rec = qjmc.run_trajectory(spec, 8, 0.01, 2.0, seed=0, initial=basis_product([0] * 6))
    assert rec.jump_log == [] and rec.absorbed_at == 0.0
    assert set(rec.total_density) == {0.0} and set(rec.survival_overlap) == {1.0}


def test_custom_initial_state_gauge_invariance():
    spec = ModelSpec("quantum", 5, omega=6.0)
    init = basis_product([0, 1, 1, 0, 1])
    a = qjmc.run_trajectory(spec, 16, 0.01, 1.0, 9, initial=init, real_gauge=True)
    b = qjmc.run_trajectory(spec, 16, 0.01, 1.0, 9, initial=init, real_gauge=False)
    assert a.jump_log == b.jump_log
    np.testing.assert_allclose(a.total_density, b.total_density, atol=1e-12)
    np.testing.assert_allclose(a.entropy, b.entropy, atol=1e-9)


@given(seed=st.integers(0, 2**63 - 1))
def test_record_json_roundtrip(seed):
    rec = qjmc.run_trajectory(ModelSpec("quantum", 3, omega=6.0), 4, 0.05, 0.5, seed, measure_every=2, index=3)
    back = qjmc.TrajectoryRecord.from_dict(json.loads(rec.to_json()))
    assert back == rec


# -- ensembles ------------------------------------------------------------------------------


def test_single_trajectory_ensemble():
    stats = qjmc.run_ensemble(QCP4, EXACT_CHI, 0.01, 0.5, n_traj=1, master_seed=3)
    rec = qjmc.run_trajectory(QCP4, EXACT_CHI, 0.01, 0.5, qjmc.trajectory_seed(3, 0), index=0)
    assert stats.n_traj == 1
    assert all(v is None for v in stats.stderr.values())
    np.testing.assert_array_equal(stats.mean["N_a"], rec.total_density)
    with pytest.raises(ValueError):
        qjmc.run_ensemble(QCP4, EXACT_CHI, 0.01, 0.5, n_traj=0, master_seed=3)


def test_ensemble_statistics_definitions():
    stats = qjmc.run_ensemble(ModelSpec("quantum", 5, omega=6.0), 8, 0.01, 0.5, n_traj=20, master_seed=1)
    for key in ("N_a", "n_seed", "P_sur"):
        samples = stats.samples[key]
        np.testing.assert_allclose(stats.mean[key], samples.mean(axis=0))
        np.testing.assert_allclose(stats.stderr[key], samples.std(axis=0, ddof=1) / np.sqrt(20))
    np.testing.assert_allclose(stats.mean["P_sur"], 1.0 - stats.mean["survival_overlap"])
    assert stats.s_bar == stats.samples["S"].max()
    with pytest.raises(ValueError):
        stats.snapshot(0.123)
    with pytest.raises(ValueError):
        qjmc.EnsembleStats.from_records([])


def test_ensemble_serial_and_parallel_agree(tmp_path):
    spec = ModelSpec("quantum", 5, omega=6.0)
    a = qjmc.run_ensemble(spec, 8, 0.01, 1.0, n_traj=6, master_seed=42, n_workers=1, store=tmp_path / "a")
    b = qjmc.run_ensemble(spec, 8, 0.01, 1.0, n_traj=6, master_seed=42, n_workers=2, store=tmp_path / "b")
    for i in range(6):
        ra = (tmp_path / "a" / "trajectories" / f"traj_{i:06d}.json").read_bytes()
        rb = (tmp_path / "b" / "trajectories" / f"traj_{i:06d}.json").read_bytes()
        assert ra == rb
    for key in a.samples:
        np.testing.assert_array_equal(a.samples[key], b.samples[key])


def test_store_extends_without_recomputation(tmp_path, monkeypatch):
    spec = ModelSpec("quantum", 5, omega=6.0)
    path = tmp_path / "store"
    small = qjmc.run_ensemble(spec, 8, 0.01, 0.5, n_traj=3, master_seed=5, store=path)
    calls = []
    original = qjmc._run_one
    monkeypatch.setattr(qjmc, "_run_one", lambda job: calls.append(job[5]) or original(job))
    big = qjmc.run_ensemble(spec, 8, 0.01, 0.5, n_traj=5, master_seed=5, store=path)
    assert calls == [3, 4]
    np.testing.assert_array_equal(big.samples["N_a"][:3], small.samples["N_a"])
    store = qjmc.EnsembleStore(path)
    assert store.indices() == list(range(5)) and store.manifest["n_traj"] == 5
    assert store.stats(3).n_traj == 3
    with pytest.raises(ValueError):
        qjmc.run_ensemble(spec, 16, 0.01, 0.5, n_traj=5, master_seed=5, store=path)
    with pytest.raises(ValueError):
        qjmc.run_ensemble(spec, 8, 0.01, 0.5, n_traj=5, master_seed=6, store=path)
    with pytest.raises(ValueError):
        store.append(qjmc.TrajectoryRecord(seed=0, index=-1, chi_max=8, dt=0.01))


def test_ensemble_csv(tmp_path):
    stats = qjmc.run_ensemble(ModelSpec("quantum", 3, omega=6.0), 4, 0.01, 0.2, n_traj=4, master_seed=0)
    stats.to_csv(tmp_path / "e.csv")
    rows = (tmp_path / "e.csv").read_text().splitlines()
    assert rows[0] == "t,P_sur,P_sur_se,N_a,N_a_se,n_seed,n_seed_se,S_mean"
    assert len(rows) == len(stats.times) + 1


def test_pure_decay_ensemble_small():
    spec = ModelSpec("quantum", 2, omega=0.0)
    stats = qjmc.run_ensemble(spec, 2, 0.01, 1.0, n_traj=500, master_seed=11)
    i = int(np.argmin(np.abs(stats.times - 1.0)))
    # first-order bias (1 - dt)^(t/dt) vs exp(-t) is ~2e-3, well inside 3 standard errors here
    assert abs(stats.mean["n_seed"][i] - np.exp(-1.0)) < 3 * stats.stderr["n_seed"][i]


# -- histograms -----------------------------------------------------------------------------


def _stats_from_entropies(values: np.ndarray, times=(0.0, 1.0)) -> qjmc.EnsembleStats:
    recs = []
    for i, s in enumerate(values):
        recs.append(
            qjmc.TrajectoryRecord(
                seed=i, index=i, chi_max=8, dt=0.01, times=list(times),
                survival_overlap=[0.0, 0.0], total_density=[1.0, 1.0], seed_density=[1.0, 1.0],
                entropy=[0.0, float(s)], discarded_weight=[0.0, 0.0],
            )
        )
    return qjmc.EnsembleStats.from_records(recs)


def test_histogram_normalization_and_display_scaling(tmp_path):
    rng = np.random.default_rng(0)
    stats = _stats_from_entropies(rng.uniform(0, 2, 300))
    ref = _stats_from_entropies(rng.uniform(0, 2.5, 300))
    h = qjmc.entanglement_histogram(stats, 1.0, ref, first_bin_scale=0.1)
    assert len(h.heights) == 50 and len(h.edges) == 51
    assert h.heights.sum() == pytest.approx(1.0)
    assert h.display_heights[0] == pytest.approx(0.1 * h.heights[0])
    np.testing.assert_array_equal(h.display_heights[1:], h.heights[1:])
    assert h.cutoff == stats.s_bar and h.mean == pytest.approx(stats.snapshot(1.0).mean())
    h.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0].startswith("# t=1") and "bin_left,bin_right,height" in lines
    assert len([ln for ln in lines if not ln.startswith("#")]) == 51


def test_histogram_all_absorbed():
    stats = _stats_from_entropies(np.zeros(10))
    h = qjmc.entanglement_histogram(stats, 1.0, stats)
    assert h.heights[0] == 1.0 and h.heights[1:].sum() == 0.0


def test_histogram_requires_recorded_time():
    stats = _stats_from_entropies(np.ones(3))
    with pytest.raises(ValueError):
        qjmc.entanglement_histogram(stats, 0.5, stats)
