import numpy as np
import pytest

from physreg.eigen import analytic_eigensystem_neumann_1d
from physreg.simstudy import reference_truth


@pytest.fixture(scope="session")
def neumann50():
    return analytic_eigensystem_neumann_1d(50)


@pytest.fixture(scope="session")
def truth50():
    return reference_truth(2.0, 50)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
