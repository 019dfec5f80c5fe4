import numpy as np
import pytest
from hypothesis import settings

from uqpe.data import Dataset
from uqpe.simulation import DgpSpec, simulate_dataset

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running checks")


@pytest.fixture(scope="session")
def dgp1_small():
    """DGP1(i) with N=300, p=10 (fast end-to-end runs)."""
    return simulate_dataset(DgpSpec(1, "i", n=300, p=10), 0)


@pytest.fixture(scope="session")
def dgp1_full():
    return simulate_dataset(DgpSpec(1, "i", n=500, p=100), 0)


def toy_dataset(n=40, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X[:, 0] + 0.5 * rng.standard_normal(n)
    return Dataset(y, X)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
