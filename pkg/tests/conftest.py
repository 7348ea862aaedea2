import numpy as np
import pytest

from eotlab import CostKernel, DiscreteMeasure, build_cost_matrix


@pytest.fixture
def two_point():
    mu = DiscreteMeasure.uniform([0.0, 1.0])
    nu = DiscreteMeasure.uniform([0.0, 1.0])
    return mu, nu, build_cost_matrix(CostKernel("squared-euclidean"), mu, nu)


@pytest.fixture
def singleton():
    mu = DiscreteMeasure([[0.0]], [1.0])
    nu = DiscreteMeasure([[0.0]], [1.0])
    return mu, nu, build_cost_matrix(CostKernel.matrix([[3.0]]), mu, nu)


@pytest.fixture
def three_point():
    mu = DiscreteMeasure.uniform([0.0, 1.0, 2.0])
    nu = DiscreteMeasure.uniform([0.5, 1.5, 2.5])
    return mu, nu, build_cost_matrix(CostKernel("squared-euclidean"), mu, nu)


def bisect(fn, lo, hi, iters=200):
    """Plain bisection; ``fn(lo)`` and ``fn(hi)`` must differ in sign."""
    flo = fn(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="session")
def symmetric_fixed_point():
    # a solves exp(2a) (1 + e^-1) / 2 = 1
    return bisect(lambda a: 0.5 * np.exp(2 * a) * (1 + np.exp(-1.0)) - 1.0, 0.0, 1.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
