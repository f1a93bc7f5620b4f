import numpy as np
import pytest

from projnewton.problems import smooth1d_problem, spike_problem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def smooth64():
    return smooth1d_problem(64, level=0.1, seed=0)


@pytest.fixture(scope="session")
def smooth200():
    return smooth1d_problem(200, level=0.1, seed=0)


@pytest.fixture(scope="session")
def spike200():
    return spike_problem(200, level=0.1, seed=0)
