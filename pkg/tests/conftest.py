import sys

import numpy as np
import pytest

from ntkhess.data import generate


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def disk8():
    return generate({"source": "disk", "N": 8, "seed": 0})


@pytest.fixture(scope="session")
def disk4():
    return generate({"source": "disk", "N": 4, "seed": 0})


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def fd_jacobian(fun, theta, h=1e-6):
    """Columns of d fun / d theta by central differences."""
    cols = []
    for p in range(theta.size):
        e = np.zeros_like(theta)
        e[p] = h
        cols.append((fun(theta + e) - fun(theta - e)) / (2 * h))
    return np.stack(cols, axis=-1)
