import numpy as np
import pytest

from plaplab.corpus import (
    caloric_field,
    cooling_paraboloid,
    dipped_caloric,
    mass_for_gradient,
    oracle_corpus,
    peak_gradient,
    random_caloric,
    refine,
)
from plaplab.mesh import SpaceTimeGrid
from plaplab.rng import generator

GRID = SpaceTimeGrid(1, 1 / 32, 1 / 1024, ((-1.0, 1.0),), (0.0, 1 / 16))


def heat_residual(f):
    """Max of u_t - u_xx on interior nodes via central differences."""
    v, h, dt = f.values, f.grid.h, f.grid.dt
    ut = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * dt)
    uxx = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h**2
    return float(np.max(np.abs(ut - uxx)))


@pytest.mark.parametrize("p", [1.6, 2.0, 3.0])
def test_mass_hits_target_gradient(p):
    m = mass_for_gradient(p, 1, 1.0, 2.0)
    assert peak_gradient(p, 1, m, 1.0, reach=20.0, samples=40001) == pytest.approx(2.0, rel=1e-8)


def test_oracle_corpus_shapes():
    cases = oracle_corpus(ps=(2.0, 3.0), h=1 / 64, dt=1 / 4096)
    assert [c.p for c in cases] == [2.0, 3.0]
    for c in cases:
        grad = c.gradient()
        assert grad.is_vector and grad.grid.dim == 1
        assert round(c.center[0] / c.h) * c.h == pytest.approx(c.center[0])
    fine = refine(cases[0])
    assert fine.h == cases[0].h / 2 and fine.dt == cases[0].dt / 4


def test_caloric_fields_solve_heat_equation():
    coarse = caloric_field(GRID, 0.5, [(0.3, [2.0], 0.1)], [(0.2, [0.1], -0.1)])
    fine_grid = SpaceTimeGrid(1, 1 / 64, 1 / 4096, ((-1.0, 1.0),), (0.0, 1 / 16))
    fine = caloric_field(fine_grid, 0.5, [(0.3, [2.0], 0.1)], [(0.2, [0.1], -0.1)])
    assert heat_residual(fine) < heat_residual(coarse) / 3


def test_source_time_must_precede():
    with pytest.raises(ValueError):
        caloric_field(GRID, 0.0, [], [(1.0, [0.0], 0.01)])


def test_random_caloric_amplitude():
    f = random_caloric(GRID, generator(3), base=1.0, amplitude=0.2)
    assert np.max(np.abs(f.values - 1.0)) == pytest.approx(0.2)


def test_dipped_caloric_stays_below_base_plus_ripple():
    f = dipped_caloric(GRID, generator(4), base=0.9, ripple=0.01)
    assert f.values.max() <= 0.91 + 1e-12 and f.values.min() < 0.9


def test_cooling_paraboloid_peak():
    f = cooling_paraboloid(GRID, generator(5), peak=0.8, curvature=0.5)
    assert f.values.max() == pytest.approx(0.8)
    assert f.values[0, 32] == pytest.approx(0.8)


def test_generator_reproducible():
    assert generator(7, 2).random() == generator(7, 2).random()
    assert generator(7, 2).random() != generator(7, 3).random()
