from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_tebd import model as m
from contact_tebd import oracle
from contact_tebd.model import ModelSpec
from contact_tebd.oracle import DenseState

QCP4 = ModelSpec("quantum", 4, gamma=1.0, omega=6.0)
CCP4 = ModelSpec("classical", 4, gamma=1.0, Gamma=6.75)


def random_density(rng: np.random.Generator, L: int) -> DenseState:
    dim = 2**L
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = z @ z.conj().T
    rho /= np.trace(rho).real
    return DenseState(m.vectorize(rho, L), "vectorized")


# -- guards and state plumbing -------------------------------------------------------


def test_guards():
    big = ModelSpec("quantum", 7, omega=1.0)
    with pytest.raises(oracle.SystemTooLargeError):
        oracle.dense_lindbladian(big)
    with pytest.raises(oracle.SystemTooLargeError):
        oracle.dense_lindblad_evolve(big, oracle.seed_vectorized(big), 1.0)
    huge = ModelSpec("quantum", 13, omega=1.0)
    with pytest.raises(oracle.SystemTooLargeError):
        oracle.dense_qjmc_trajectory(huge, oracle.seed_pure(huge), 0.1, 0.01, seed=0)
    with pytest.raises(ValueError):
        oracle.dense_lindblad_evolve(QCP4, oracle.seed_vectorized(QCP4), -1.0)
    with pytest.raises(ValueError):
        oracle.dense_lindblad_evolve(QCP4, oracle.seed_pure(QCP4), 1.0)
    with pytest.raises(ValueError):
        DenseState(np.ones(4), "mixed")


def test_dense_state_helpers():
    s = oracle.seed_vectorized(QCP4)
    assert s.n_sites == 4 and s.matrix().shape == (16, 16)
    p = oracle.seed_pure(QCP4)
    assert p.n_sites == 4
    with pytest.raises(ValueError):
        p.matrix()
    np.testing.assert_array_equal(oracle.density_profile(p), [0, 0, 1, 0])
    np.testing.assert_array_equal(oracle.density_profile(s), [0, 0, 1, 0])


# -- Lindblad propagation -------------------------------------------------------------


@pytest.mark.parametrize("spec", [QCP4, CCP4])
def test_absorbing_state_is_fixed_point(spec):
    rho_a = oracle.absorbing_vectorized(spec.L)
    for t in (0.3, 2.0):
        out = oracle.dense_lindblad_evolve(spec, rho_a, t)
        np.testing.assert_allclose(out.vector, rho_a.vector, atol=1e-14)


def test_pure_decay_seed_density():
    spec = ModelSpec("quantum", 3, omega=0.0)
    out = oracle.dense_lindblad_evolve(spec, oracle.seed_vectorized(spec), 1.0)
    assert abs(oracle.density_profile(out)[spec.seed_site] - np.exp(-1.0)) < 1e-12


def test_fixtures_are_reproducible(oracle_fixtures):
    fresh = oracle.generate_fixtures()
    assert set(fresh) == set(oracle_fixtures)
    for key, entry in fresh.items():
        if "times" in entry:
            for t, val in entry["times"].items():
                np.testing.assert_allclose(val, oracle_fixtures[key]["times"][t], atol=1e-12)
        else:
            assert abs(entry["value"] - oracle_fixtures[key]["value"]) < 1e-12


def test_fixture_profiles_are_physical(oracle_fixtures):
    for key in ("qcp_L4_omega6_lindblad_profile", "ccp_L4_Gamma6.75_lindblad_profile"):
        for profile in oracle_fixtures[key]["times"].values():
            assert all(0.0 <= n <= 1.0 for n in profile)
    assert 0.0 < oracle_fixtures["branching_gate_pi4_entropy"]["value"] <= np.log(2) + 1e-12


@given(seed=st.integers(0, 2**32 - 1), quantum=st.booleans())
def test_trace_hermiticity_positivity(seed, quantum):
    spec = ModelSpec("quantum", 3, omega=6.0) if quantum else ModelSpec("classical", 3, Gamma=6.75)
    rho0 = random_density(np.random.default_rng(seed), 3)
    one = oracle.identity_vectorized(3).vector
    for t in (0.1, 1.0):
        out = oracle.dense_lindblad_evolve(spec, rho0, t)
        rho = out.matrix()
        assert abs(np.vdot(one, out.vector) - 1.0) < 1e-10
        assert np.abs(rho - rho.conj().T).max() < 1e-10
        assert np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() >= -1e-10


# -- Trotterized propagation -------------------------------------------------------------


def test_trotter_zero_steps_is_identity():
    sched = m.build_trotter_schedule(QCP4, "schrodinger_double", 0.1)
    s = oracle.seed_vectorized(QCP4)
    out = oracle.dense_trotter_evolve(QCP4, s, sched, 0)
    np.testing.assert_array_equal(out.vector, s.vector)
    assert out.vector is not s.vector


def test_trotter_rejects_foreign_schedule():
    sched = m.build_trotter_schedule(ModelSpec("quantum", 3, omega=6.0), "schrodinger_double", 0.1)
    with pytest.raises(ValueError):
        oracle.dense_trotter_evolve(QCP4, oracle.seed_vectorized(QCP4), sched, 1)


def test_gate_application_equals_kronecker_embedding():
    rng = np.random.default_rng(1)
    sched = m.build_trotter_schedule(QCP4, "schrodinger_double", 0.1)
    v = rng.standard_normal(4**4) + 1j * rng.standard_normal(4**4)
    out = oracle.dense_trotter_evolve(QCP4, DenseState(v, "vectorized"), sched, 1)
    np.testing.assert_allclose(out.vector, oracle.step_matrix(sched, 4) @ v, atol=1e-12)


def test_trotter_converges_at_second_order():
    exact = oracle.dense_lindblad_evolve(QCP4, oracle.seed_vectorized(QCP4), 1.0, substeps=4)
    dts = np.array([0.1, 0.05, 0.025])
    errs = []
    for dt in dts:
        sched = m.build_trotter_schedule(QCP4, "schrodinger_double", float(dt))
        out = oracle.dense_trotter_evolve(QCP4, oracle.seed_vectorized(QCP4), sched, int(round(1.0 / dt)))
        errs.append(np.linalg.norm(out.vector - exact.vector))
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 2.0) < 0.2


# -- dense trajectories ----------------------------------------------------------------


def test_vacuum_trajectory_never_jumps():
    vac = DenseState(oracle.product_vector([m.EMPTY] * 4), "pure")
    traj = oracle.dense_qjmc_trajectory(QCP4, vac, 1.0, 0.01, seed=5)
    assert traj.jump_log == []
    for s in traj.states:
        np.testing.assert_allclose(s.vector, vac.vector)
    assert len(traj.times) == 101


def test_trajectory_is_seed_deterministic():
    a = oracle.dense_qjmc_trajectory(QCP4, oracle.seed_pure(QCP4), 1.0, 0.01, seed=11, measure_every=10)
    b = oracle.dense_qjmc_trajectory(QCP4, oracle.seed_pure(QCP4), 1.0, 0.01, seed=11, measure_every=10)
    assert a.jump_log == b.jump_log
    np.testing.assert_array_equal(a.times, b.times)
    for x, y in zip(a.states, b.states):
        np.testing.assert_array_equal(x.vector, y.vector)
        assert abs(np.linalg.norm(x.vector) - 1.0) < 1e-12
