import numpy as np
import pytest

from slmspec import synthetic
from slmspec.data_model import SpectralGrid


@pytest.fixture(scope="session")
def grid31():
    return synthetic.working_grid(31)


@pytest.fixture(scope="session")
def grid53():
    return synthetic.working_grid(53)


@pytest.fixture(scope="session")
def bank31(grid31):
    return synthetic.reference_bank(grid31)


@pytest.fixture(scope="session")
def bank53(grid53):
    return synthetic.reference_bank(grid53)


@pytest.fixture(scope="session")
def curve():
    return synthetic.reference_retardance_curve()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dense_grid():
    return SpectralGrid.uniform(380.0, 1010.0, 631)
