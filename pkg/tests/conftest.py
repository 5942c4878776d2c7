import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from plaplab.mesh import GridFunction, SpaceTimeGrid

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def line_grid():
    """1D grid on [-1, 1] x [0, 1] with h = 0.1, dt = 0.25."""
    return SpaceTimeGrid(1, 0.1, 0.25, ((-1.0, 1.0),), (0.0, 1.0))


@pytest.fixture
def square_grid():
    return SpaceTimeGrid(2, 0.125, 0.125, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 0.5))


def field(grid, fn):
    return GridFunction.from_function(grid, fn)


def const(grid, c):
    return GridFunction(grid, np.full(grid.shape, float(c)))
