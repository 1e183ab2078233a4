import numpy as np
import pytest

from starstab import eos
from starstab.star import solve_star


@pytest.fixture(scope="session")
def poly15():
    return solve_star(eos.make_polytrope(1.0, 1.5), 1.0)


@pytest.fixture(scope="session")
def poly125():
    return solve_star(eos.make_polytrope(1.0, 1.25), 1.0)


@pytest.fixture(scope="session")
def wd_star():
    return solve_star(eos.make_white_dwarf(), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
