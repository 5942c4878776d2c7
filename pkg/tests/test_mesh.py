import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import const, field
from plaplab.mesh import (
    GridFunction,
    OffGridError,
    ParabolicCylinder,
    SpaceTimeGrid,
    cylinder_mask,
    cylinder_nodes,
    cylinder_values,
    discrete_gradient,
    integrate,
    measure,
    parabolic_distance,
    read_grid_function,
    write_csv,
    write_grid_function,
)

finite = st.floats(-10, 10, allow_nan=False)


class TestGrid:
    def test_shape_and_counts(self, line_grid):
        assert line_grid.shape == (5, 21)
        assert line_grid.nt == 5
        assert line_grid.cell == pytest.approx(0.025)

    def test_ragged_extent_rejected(self):
        with pytest.raises(ValueError):
            SpaceTimeGrid(1, 0.3, 0.1, ((0.0, 1.0),), (0.0, 1.0))

    def test_too_few_nodes_rejected(self):
        with pytest.raises(ValueError):
            SpaceTimeGrid(1, 0.5, 0.1, ((0.0, 0.5),), (0.0, 1.0))

    def test_nonpositive_spacing_rejected(self):
        with pytest.raises(ValueError):
            SpaceTimeGrid(1, 0.0, 0.1, ((0.0, 1.0),), (0.0, 1.0))

    def test_nonfinite_values_rejected(self, line_grid):
        vals = np.zeros(line_grid.shape)
        vals[0, 0] = np.nan
        with pytest.raises(ValueError):
            GridFunction(line_grid, vals)

    def test_wrong_value_count_rejected(self, line_grid):
        with pytest.raises(ValueError):
            GridFunction(line_grid, np.zeros((3, 3)))


class TestParabolicDistance:
    def test_identity(self):
        assert parabolic_distance(((0.3,), 1.0), ((0.3,), 1.0)) == 0

    def test_space_dominates(self):
        assert parabolic_distance(((0.0,), 0.0), ((3.0,), 4.0)) == 3

    def test_time_dominates(self):
        assert parabolic_distance(((0.0,), 0.0), ((1.0,), 9.0)) == 3

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            parabolic_distance(((0.0,), 0.0), ((0.0, 1.0), 0.0))

    @given(st.lists(finite, min_size=9, max_size=9))
    def test_triangle_inequality(self, c):
        a, b, d = ((c[0], c[1]), c[2]), ((c[3], c[4]), c[5]), ((c[6], c[7]), c[8])
        assert parabolic_distance(a, d) <= parabolic_distance(a, b) + parabolic_distance(b, d) + 1e-9


class TestCylinders:
    def test_tiny_radius_keeps_center_column(self, line_grid):
        cyl = ParabolicCylinder.standard((0.0,), 0.5, 0.04, 0.3)
        nodes = cylinder_nodes(line_grid, cyl)
        assert set(nodes[:, 1]) == {10}
        assert sorted(set(nodes[:, 0])) == [1, 2, 3]

    def test_five_nodes_per_level(self, line_grid):
        mask = cylinder_mask(line_grid, ParabolicCylinder.standard((0.0,), 0.5, 0.25, 1.0))
        assert np.all(mask.sum(axis=1)[mask.any(axis=1)] == 5)

    @given(st.floats(0.05, 0.9), st.floats(1.2, 4.0))
    def test_unit_scale_intrinsic_matches_standard(self, rho, p):
        grid = SpaceTimeGrid(1, 0.05, 0.05, ((-1.0, 1.0),), (-1.0, 1.0))
        a = cylinder_mask(grid, ParabolicCylinder.intrinsic((0.0,), 0.0, rho, 1.0, p))
        b = cylinder_mask(grid, ParabolicCylinder.standard((0.0,), 0.0, rho, rho * rho))
        assert np.array_equal(a, b)

    def test_intrinsic_radii(self):
        cyl = ParabolicCylinder.intrinsic((0.0,), 0.0, 0.6, 2.0, 3.0)
        assert cyl.radius == pytest.approx(0.3)
        assert cyl.half_time == pytest.approx(0.36 / 8)

    def test_intrinsic_scale_below_one_rejected(self):
        with pytest.raises(ValueError):
            ParabolicCylinder.intrinsic((0.0,), 0.0, 0.5, 0.5, 2.0)

    def test_off_grid_center(self, line_grid):
        with pytest.raises(OffGridError):
            cylinder_mask(line_grid, ParabolicCylinder.standard((3.0,), 0.5, 0.2, 0.1))

    def test_boundary_tie_excluded(self, line_grid):
        mask = cylinder_mask(line_grid, ParabolicCylinder.standard((0.0,), 0.5, 0.2, 1.0))
        assert mask.sum(axis=1).max() == 3

    def test_backward_flag(self, line_grid):
        cyl = ParabolicCylinder.standard((0.0,), 0.5, 0.5, 0.5, backward=True)
        assert cyl.time_bounds == (0.0, 0.5)
        times = {int(k) for k in cylinder_nodes(line_grid, cyl)[:, 0]}
        assert times == {1}

    @given(st.floats(-0.9, 0.9), st.floats(0.05, 1.5), st.floats(0.05, 0.8))
    def test_values_match_mask(self, c, r, th):
        grid = SpaceTimeGrid(1, 0.05, 0.05, ((-1.0, 1.0),), (-1.0, 1.0))
        f = field(grid, lambda xs, t: np.sin(3 * xs[0]) + t)
        cyl = ParabolicCylinder.standard((c,), 0.1, r, th)
        assert np.array_equal(cylinder_values(f, cyl), f.values[cylinder_mask(grid, cyl)])


class TestMeasure:
    def test_empty(self, line_grid):
        assert measure(line_grid, np.zeros(line_grid.shape, bool)) == 0

    def test_full_grid_close_to_box_volume(self, square_grid):
        full = measure(square_grid, np.ones(square_grid.shape, bool))
        box = 2.0 * 2.0 * 0.5
        surface = 2 * (2 * 2 + 2 * 0.5 + 2 * 0.5)
        assert abs(full - box) <= (square_grid.h + square_grid.dt) * surface

    def test_half_the_nodes(self, line_grid):
        mask = np.zeros(line_grid.shape, bool)
        mask.flat[::2] = True
        full = measure(line_grid, np.ones(line_grid.shape, bool))
        assert measure(line_grid, mask) * 2 == pytest.approx(full + line_grid.cell)

    @given(st.integers(0, 2**32 - 1))
    def test_monotone_and_additive(self, seed):
        grid = SpaceTimeGrid(1, 0.1, 0.1, ((0.0, 1.0),), (0.0, 1.0))
        rng = np.random.default_rng(seed)
        a = rng.random(grid.shape) < 0.4
        b = rng.random(grid.shape) < 0.4
        assert measure(grid, a & b) <= measure(grid, a)
        assert measure(grid, a) == pytest.approx(measure(grid, a & b) + measure(grid, a & ~b))


class TestGradient:
    def test_constant(self, square_grid):
        assert np.all(discrete_gradient(const(square_grid, 2.5)).values == 0)

    def test_affine(self, line_grid):
        g = discrete_gradient(field(line_grid, lambda xs, t: 3 * xs[0]))
        np.testing.assert_allclose(g.values[..., 0], 3.0, rtol=0, atol=1e-12)

    def test_quadratic_interior(self, line_grid):
        g = discrete_gradient(field(line_grid, lambda xs, t: xs[0] ** 2)).values[..., 0]
        x = line_grid.axis(0)
        np.testing.assert_allclose(g[:, 1:-1], np.broadcast_to(2 * x[1:-1], g[:, 1:-1].shape), atol=1e-12)

    def test_vector_shape(self, square_grid):
        g = discrete_gradient(field(square_grid, lambda xs, t: xs[0] * xs[1]))
        assert g.values.shape == square_grid.shape + (2,)


class TestIntegrate:
    cyl = ParabolicCylinder.standard((0.0,), 0.5, 0.55, 0.5)

    def test_one_gives_measure(self, line_grid):
        assert integrate(const(line_grid, 1.0), self.cyl) == pytest.approx(
            measure(line_grid, cylinder_mask(line_grid, self.cyl)))

    def test_linear_in_constant(self, line_grid):
        assert integrate(const(line_grid, 4.0), self.cyl) == pytest.approx(4 * integrate(const(line_grid, 1), self.cyl))

    def test_odd_field_vanishes(self, line_grid):
        assert abs(integrate(field(line_grid, lambda xs, t: xs[0]), self.cyl)) < 1e-14

    def test_off_grid(self, line_grid):
        with pytest.raises(OffGridError):
            integrate(const(line_grid, 1.0), ParabolicCylinder.standard((0.0,), 9.0, 0.5, 0.5))

    @given(st.integers(0, 2**32 - 1), finite)
    def test_linearity_and_sup_bound(self, seed, a):
        grid = SpaceTimeGrid(1, 0.1, 0.1, ((-1.0, 1.0),), (0.0, 1.0))
        rng = np.random.default_rng(seed)
        f, g = GridFunction(grid, rng.normal(size=grid.shape)), GridFunction(grid, rng.normal(size=grid.shape))
        cyl = ParabolicCylinder.standard((0.0,), 0.5, 0.7, 0.4)
        lhs = integrate(GridFunction(grid, a * f.values + g.values), cyl)
        assert lhs == pytest.approx(a * integrate(f, cyl) + integrate(g, cyl), abs=1e-9)
        sup = np.max(np.abs(f.values))
        assert abs(integrate(f, cyl)) <= sup * measure(grid, cylinder_mask(grid, cyl)) + 1e-12


class TestSerialisation:
    def test_roundtrip(self, tmp_path, square_grid):
        f = field(square_grid, lambda xs, t: np.cos(xs[0]) * xs[1] + t)
        write_grid_function(tmp_path / "f.field", f)
        header = (tmp_path / "f.field").read_bytes().split(b"\n", 1)[0].decode().split()
        assert header[:3] == ["2", "0.125", "0.125"] and header[3:6] == ["17", "17", "5"]
        back = read_grid_function(tmp_path / "f.field")
        assert back.grid.shape == square_grid.shape
        assert np.array_equal(back.values, f.values)

    def test_vector_rejected(self, tmp_path, square_grid):
        with pytest.raises(ValueError):
            write_grid_function(tmp_path / "g", discrete_gradient(const(square_grid, 1)))

    def test_csv_rows(self, tmp_path, line_grid):
        write_csv(tmp_path / "f.csv", field(line_grid, lambda xs, t: xs[0] + t))
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "x,t,value"
        assert len(lines) == 1 + math.prod(line_grid.shape)
