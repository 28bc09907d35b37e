import numpy as np
import pytest

from agfn.model import init_params, one_hot


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem():
    """Four samples, small network, random targets."""
    r = np.random.default_rng(7)
    params = init_params(5, 3, hidden=(6,), feature_dim=4, seed=3)
    x = r.standard_normal((4, 5))
    y = one_hot(r.integers(0, 3, 4), 3)
    return x, y, params


def sym_binary(r, n, p=0.5):
    a = np.triu((r.random((n, n)) < p).astype(float), 1)
    return a + a.T


def sym_real(r, n, lo=0.05, hi=0.95):
    a = np.triu(r.uniform(lo, hi, (n, n)), 1)
    return a + a.T


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
