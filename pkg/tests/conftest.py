"""Shared grids, backgrounds and coefficient bundles for the test suite."""

import numpy as np
import pytest

from disk_grid import DiskGrid, flat_metric
from eos_background import Background, EquationOfState, make_flow
from operators import BundleSeries


def make_series(grid, family, cache_size=128, **params):
    eos = EquationOfState()
    return BundleSeries(Background(make_flow(family, **params), eos, grid, cache_size=cache_size))


@pytest.fixture(scope='session')
def eos():
    return EquationOfState(gamma=2.0, K=1.0, rho_bar0=1.0)


@pytest.fixture(scope='session')
def grid():
    return DiskGrid(24, 48)


@pytest.fixture(scope='session')
def small_grid():
    return DiskGrid(12, 24)


@pytest.fixture(scope='session')
def flat(grid):
    return flat_metric(grid)


@pytest.fixture(scope='session')
def compression(grid):
    return make_series(grid, 'compression', alpha=0.2, beta=0.25, omega=1.0)


@pytest.fixture(scope='session')
def compression_small(small_grid):
    return make_series(small_grid, 'compression', alpha=0.2, beta=0.25, omega=1.0)


@pytest.fixture(scope='session')
def prescribed(grid):
    return make_series(grid, 'prescribed_h', c0=1.0)


@pytest.fixture(scope='session')
def prescribed_small(small_grid):
    return make_series(small_grid, 'prescribed_h', c0=1.0)


@pytest.fixture(scope='session')
def static(grid):
    return make_series(grid, 'static')


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
