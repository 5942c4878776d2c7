import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import const, field
from plaplab.calculus import level, shrinking_radius
from plaplab.iterate import (
    ExponentSet,
    admissible_sequence,
    bound_constants,
    bounded_recursive,
    choose_exponents,
    choose_k,
    critical_p,
    degenerate_bound,
    degiorgi_first,
    fast_geometric,
    general_bound,
    geometric_threshold,
    lipschitz_bound,
    rough_constants,
    rough_lipschitz_recursion,
    second_iteration,
    singular_bound,
)
from plaplab.mesh import ParabolicCylinder, SpaceTimeGrid, cylinder_mask

GRID = SpaceTimeGrid(1, 1 / 32, 1 / 64, ((-1.0, 1.0),), (0.0, 1.0))


def consts(mode="unified", p=2.0, dim=1, **kw):
    return bound_constants(dim, p, choose_exponents(mode, p, dim), kw.pop("rho", 0.8), kw.pop("theta", 0.5), **kw)


class TestExponents:
    def test_unified(self):
        e = choose_exponents("unified", 2, 2)
        assert (e.alpha, e.beta, e.gamma) == (1, 2, 1)

    def test_degenerate(self):
        e = choose_exponents("degenerate", 3, 2)
        assert (e.alpha, e.beta, e.gamma) == (0, 2, 0)

    def test_singular(self):
        e = choose_exponents("singular", 1.5, 1)
        assert (e.alpha, e.beta, e.gamma) == pytest.approx((0.5, 1, 0.5))

    @pytest.mark.parametrize("mode,p,dim", [("unified", 1.0, 2), ("degenerate", 1.9, 1), ("singular", 2.1, 1),
                                            ("singular", 1.0, 2), ("nope", 2, 1)])
    def test_out_of_range(self, mode, p, dim):
        with pytest.raises(ValueError):
            choose_exponents(mode, p, dim)

    def test_critical(self):
        assert critical_p(2) == 1 and critical_p(1) == pytest.approx(2 / 3)


class TestConstants:
    def test_two_dim_quadratic(self):
        c = bound_constants(2, 2, choose_exponents("unified", 2, 2), 1.0, 1.0)
        assert (c.X, c.Sigma, c.B, c.A) == pytest.approx((16, 0.25, 8, 4))

    @given(st.sampled_from(["unified", "degenerate", "singular"]), st.integers(1, 3), st.floats(0, 1))
    def test_sigma_times_x(self, mode, dim, u):
        lo = critical_p(dim)
        p = {"unified": max(lo, 1) + 1e-3 + 3 * u, "degenerate": 2 + 3 * u,
             "singular": lo + 1e-3 + (2 - lo - 1e-3) * u}[mode]
        c = bound_constants(dim, p, choose_exponents(mode, p, dim), 1.0, 1.0)
        assert c.Sigma * c.X == pytest.approx(dim + 2)

    def test_literal_singular_x(self):
        c = bound_constants(1, 1.5, choose_exponents("singular", 1.5, 1), 1.0, 1.0, literal=True)
        assert c.X == pytest.approx(6 + 1.5 * 3)

    def test_sigma_range(self):
        with pytest.raises(ValueError):
            consts(sigma=1.0)


class TestGeometric:
    def test_threshold_example(self):
        assert geometric_threshold(2, 4, 1) == pytest.approx(1 / 8)
        run = fast_geometric(2, 4, 1, 1 / 8)
        assert run.converged and run.sequence[40] < 1e-20

    def test_ten_times_threshold_diverges(self):
        run = fast_geometric(2, 4, 1, 10 / 8)
        assert run.diverged and not run.converged

    def test_large_alpha(self):
        assert geometric_threshold(2, 4, 200) > 0.99
        assert fast_geometric(2, 4, 200, 0.5).converged

    @given(st.floats(1.01, 10), st.floats(1.01, 10), st.floats(0.1, 3), st.floats(0.01, 1))
    def test_below_threshold_decays_geometrically(self, C, b, alpha, frac):
        x0 = frac * geometric_threshold(C, b, alpha)
        run = fast_geometric(C, b, alpha, x0)
        envelope = x0 * b ** (-np.arange(run.sequence.size) / alpha)
        assert np.all(run.sequence <= envelope * (1 + 1e-9))
        if envelope[-1] < 1e-13:
            assert run.converged

    def test_rejects(self):
        with pytest.raises(ValueError):
            fast_geometric(1, 4, 1, 0.1)


class TestBoundedRecursion:
    def test_example(self):
        assert bounded_recursive(2, 4, 0.5) == pytest.approx(256)

    def test_constant_sequence_is_below(self):
        assert 2 ** (1 / 0.5) <= bounded_recursive(2, 4, 0.5)

    @given(st.integers(0, 2**32 - 1), st.floats(1.1, 5), st.floats(1.1, 5), st.floats(0.1, 0.9))
    def test_random_sequences(self, seed, C, b, alpha):
        y = admissible_sequence(C, b, alpha, 30, np.random.default_rng(seed))
        n = np.arange(29)
        assert np.all(y[:-1] <= C * b**n * y[1:] ** (1 - alpha) * (1 + 1e-12))
        assert y[0] <= bounded_recursive(C, b, alpha)

    def test_rejects(self):
        with pytest.raises(ValueError):
            bounded_recursive(2, 4, 1.0)


class TestFirstIteration:
    def test_below_half_level(self):
        trace = degiorgi_first(const(GRID, 0.4), consts(), 1.0, (0.0,), 1.0)
        assert trace.steps[0].Y_n > 0
        assert trace.steps[1].Y_n == 0 and trace.converged

    def test_constant_closed_form(self):
        c = consts()
        trace = degiorgi_first(const(GRID, 2.0), c, 1.5, (0.0,), 1.0)
        for s in trace.steps[:5]:
            cyl = ParabolicCylinder.standard((0.0,), 1.0, shrinking_radius(0.8, 0.5, s.n),
                                             shrinking_radius(0.5, 0.5, s.n), True)
            vol = np.count_nonzero(cylinder_mask(GRID, cyl)) * GRID.cell
            assert s.Y_n == pytest.approx((2.0 - level(1.5, s.n)) ** c.exponents.power * vol)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            degiorgi_first(const(GRID, -1.0), consts(), 1.0)

    def test_choose_k_floor(self):
        assert choose_k(const(GRID, 0.0), consts()) == 1.0

    @pytest.mark.parametrize("amp", [0.5, 3.0, 20.0])
    def test_choose_k_converges_and_bounds(self, amp):
        v = field(GRID, lambda xs, t: amp * (1 + t) * np.exp(-4 * xs[0] ** 2))
        c = consts(C1=1.0)
        k = choose_k(v, c, (0.0,), 1.0)
        trace = degiorgi_first(v, c, k, (0.0,), 1.0)
        assert k >= 1
        assert trace.converged and trace.sup_inner <= k

    def test_trace_csv(self, tmp_path):
        degiorgi_first(const(GRID, 2.0), consts(), 1.5).to_csv(tmp_path / "t.csv")
        head = (tmp_path / "t.csv").read_text().splitlines()[0]
        assert head == "n,k_n,rho_n,theta_n,Y_n,step_constant"


class TestFinalBounds:
    def test_zero_integral(self):
        assert lipschitz_bound(0.0, 0.5, 1, 1, 0.5, 2, 2, 1.0) == 1.0

    @pytest.mark.parametrize("eps", [0.25, 0.5, 0.9])
    def test_bracket_exponent(self, eps):
        # bracket carries I^(1/2) for N = 2, so the bound scales as I^((2/eps)/2)
        lo = math.log(lipschitz_bound(1e6, 0.5, 1, 1, eps, 2, 2, 1.0))
        hi = math.log(lipschitz_bound(1e8, 0.5, 1, 1, eps, 2, 2, 1.0))
        assert (hi - lo) / math.log(100) == pytest.approx(0.5 * 2 / eps)

    @given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(1e-3, 1e3))
    def test_sigma_monotone(self, s1, s2, integral):
        lo, hi = sorted((s1, s2))
        assert lipschitz_bound(integral, lo, 1, 1, 0.5, 1, 2.5, 1.0) <= lipschitz_bound(integral, hi, 1, 1, 0.5, 1, 2.5, 1.0)

    def test_eps_range(self):
        with pytest.raises(ValueError):
            lipschitz_bound(1.0, 0.5, 1, 1, 1.0, 1, 2, 1.0)
        with pytest.raises(ValueError):
            singular_bound(1.0, 0.5, 1, 1, 0.5, 1, 1.5, 1.0)

    @pytest.mark.parametrize("integral", [1e-3, 0.37, 12.0])
    @pytest.mark.parametrize("eps", [0.25, 1.0, 2.0])
    def test_quadratic_seam(self, integral, eps):
        a = degenerate_bound(integral, 0.5, 1, 1, eps, 1, 2.0, 1.0)
        b = singular_bound(integral, 0.5, 1, 1, eps, 1, 2.0, 1.0)
        assert a == pytest.approx(b, rel=1e-10)

    def test_general_bound_floor(self):
        assert general_bound(1e-30, consts()) == 1.0


class TestSecondIteration:
    def test_constant_field(self):
        it = second_iteration(const(GRID, 0.7), consts(), (0.0,), 1.0)
        assert np.all(it.M == 0.7)
        assert it.final_bound >= 0.7 and it.recursion_holds

    def test_monotone_and_consistent(self):
        v = field(GRID, lambda xs, t: 5 * (1 + t) * np.exp(-xs[0] ** 2))
        it = second_iteration(v, consts(), (0.0,), 1.0)
        assert np.all(np.diff(it.M) >= 0) and np.all(np.diff(it.radii) >= 0)
        assert it.final_bound == pytest.approx(it.lipschitz, rel=1e-9)
        assert it.final_bound >= it.M[0] and it.recursion_holds


class TestRough:
    def test_constants(self):
        e, d = rough_constants(2, 2, choose_exponents("unified", 2, 2))
        assert e == pytest.approx(3.0) and d == pytest.approx(16.0)

    def test_below_half_level(self):
        res = rough_lipschitz_recursion(const(GRID, 0.3), consts(), 1.0, (0.0,), 1.0)
        assert res.converged and res.B1_empirical == 0
        assert res.trace.steps[1].Y_n == 0


def test_exponent_power():
    assert ExponentSet("unified", 1, 2, 1).power == 4
