from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from contact_tebd import mps
from contact_tebd.oracle import FIXTURE_PATH, load_fixtures

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def oracle_fixtures() -> dict:
    if not FIXTURE_PATH.exists():
        pytest.fail(f"{FIXTURE_PATH} is missing; regenerate it with `contact-tebd fixtures`")
    return load_fixtures()


def dense_to_mps(vec: np.ndarray, L: int, d: int) -> mps.Mps:
    """Exact MPS of a dense vector by successive SVDs (no truncation)."""
    tensors = []
    rest = np.asarray(vec, dtype=complex).reshape(1, -1)
    for _ in range(L - 1):
        chi = rest.shape[0]
        mat = rest.reshape(chi * d, -1)
        u, s, vh = np.linalg.svd(mat, full_matrices=False)
        keep = max(1, int(np.count_nonzero(s > 1e-14 * s[0])))
        tensors.append(u[:, :keep].reshape(chi, d, keep))
        rest = s[:keep, None] * vh[:keep]
    tensors.append(rest.reshape(rest.shape[0], d, 1))
    state = mps.Mps(tensors, ortho_center=L - 1)
    return state


def random_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def embed_two_site(gate: np.ndarray, site: int, L: int, d: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(d**site), gate), np.eye(d ** (L - site - 2)))


def embed_one_site(op: np.ndarray, site: int, L: int, d: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(d**site), op), np.eye(d ** (L - site - 1)))


def schmidt_values(vec: np.ndarray, bond: int, L: int, d: int) -> np.ndarray:
    s = np.linalg.svd(vec.reshape(d ** (bond + 1), d ** (L - bond - 1)), compute_uv=False)
    return s / np.linalg.norm(s)
