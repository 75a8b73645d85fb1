import numpy as np
import pytest

from ptdyn.model import DrivenMatrixModel, LatticeModel, build_grid


def random_orthonormal(n, k, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))
    q, _ = np.linalg.qr(a)
    return q


def random_occupation(k, seed=0):
    """Hermitian, non-diagonal occupation matrix with eigenvalues in (0, 1)."""
    rng = np.random.default_rng(seed)
    u = random_orthonormal(k, k, seed + 100)
    return u @ np.diag(rng.uniform(0.1, 0.9, k)) @ u.conj().T


@pytest.fixture
def small_linear():
    return LatticeModel(build_grid(1, 16), "linear", laplacian="fd")


@pytest.fixture
def small_yukawa():
    return LatticeModel(build_grid(1, 16), "yukawa", laplacian="fd", kappa=0.5, eps0=2.0)


@pytest.fixture
def random_model():
    return DrivenMatrixModel.random(8, seed=3)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
