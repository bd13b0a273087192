import numpy as np
import pytest

from subid.ssmodel import SsModel

ACCEPTANCE_LINES = []


def random_model(rng, n_x, n_u, n_y, radius=(0.3, 0.9), with_d=True, with_k=False):
    """Random stable minimal-ish model with spectral radius in ``radius``."""
    A = rng.standard_normal((n_x, n_x))
    rho = np.max(np.abs(np.linalg.eigvals(A)))
    A = A / rho * rng.uniform(*radius)
    B = rng.standard_normal((n_x, n_u))
    C = rng.standard_normal((n_y, n_x))
    D = rng.standard_normal((n_y, n_u)) if with_d else np.zeros((n_y, n_u))
    K = None
    if with_k:
        # small gains keep A - K C stable for the random draws used here
        K = 0.2 * rng.standard_normal((n_x, n_y))
        while np.max(np.abs(np.linalg.eigvals(A - K @ C))) >= 0.95:
            K = 0.5 * K
    return SsModel(A, B, C, D, K)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
