import os
import sys

import numpy as np
import pytest

# Add source directory to path
sys.path.append(os.path.join(os.path.dirname(__file__), "../rcpg"))

FD_EPS = 1e-5


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def central_difference(fn, params: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Numerical gradient of a scalar function of a flat parameter vector."""
    grad = np.zeros_like(params)
    for i in range(len(params)):
        saved = params[i]
        params[i] = saved + eps
        up = fn()
        params[i] = saved - eps
        down = fn()
        params[i] = saved
        grad[i] = (up - down) / (2 * eps)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
