import numpy as np
import pytest

from lyapmpc.dynamics import X_UPRIGHT, linearize
from lyapmpc.neural_cost import CostWeights, solve_dare

Q_DEFAULT = np.diag([10.0, 10.0, 0.1, 0.1])
R_DEFAULT = np.array([[0.01]])


@pytest.fixture(scope="session")
def upright_lin():
    return linearize()


@pytest.fixture(scope="session")
def weights(upright_lin):
    P = solve_dare(upright_lin.A, upright_lin.B, Q_DEFAULT, R_DEFAULT)
    return CostWeights(Q_DEFAULT, R_DEFAULT, P, X_UPRIGHT, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[num])
