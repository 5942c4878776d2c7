import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import const
from plaplab.covering import (
    CoveringParams,
    EllipticityError,
    HypothesisError,
    case_exponent,
    cauchy_consequences,
    chain,
    check_ellipticity,
    check_inclusion,
    contraction_factor,
    derivative_degiorgi,
    dual_derivative_degiorgi,
    expansion_of_positivity,
    final_degiorgi,
    final_threshold,
    first_dyadic_level,
    good_time_slice,
    holder_certificate,
    inclusion_by_nodes,
    initial_radius,
    levelset_shrink,
    linear_decay_check,
    measure_alternative,
    oscillation_decay,
    rescale_to_unit,
    switching_radius,
    unit_grid,
)
from plaplab.mesh import GridFunction, ParabolicCylinder, SpaceTimeGrid, cylinder_mask

BIG = SpaceTimeGrid(1, 1 / 64, 1 / 256, ((-1.0, 1.0),), (-1.0, 1.0))
UNIT = unit_grid(1)


def vector(grid, fn):
    return GridFunction(grid, np.asarray(GridFunction.from_function(grid, fn).values)[..., None])


class TestParams:
    def test_defaults(self):
        c = CoveringParams()
        assert (c.nu, c.kappa, c.delta, c.sigma, c.eta) == (0.1, 0.5, 0.5, 0.5, 0.75)
        assert c.alpha2 == pytest.approx(1.0)
        assert c.alpha3 == pytest.approx(min(c.alpha1, 0.5))

    def test_literal_alpha2(self):
        c = CoveringParams(alpha2_literal=True)
        assert c.alpha2 == pytest.approx(math.log(0.5) / math.log(0.75))

    @pytest.mark.parametrize("kw", [{"nu": 0.5}, {"eta": 1.0}, {"A": 0.5}, {"p": 1.0}, {"s": 2.0}])
    def test_ranges(self, kw):
        with pytest.raises(ValueError):
            CoveringParams(**kw)


class TestInclusion:
    def test_exhaustive_grid(self):
        vals = np.linspace(0.05, 0.95, 19)
        for eta, sigma, p in itertools.product(vals, vals, np.linspace(1.1, 5, 14)):
            c0 = contraction_factor(eta, sigma, p)
            assert 0 < c0 < 1
            assert check_inclusion(eta, sigma, p)

    @pytest.mark.parametrize("eta,sigma,p", [(0.75, 0.5, 2), (0.5, 0.5, 3), (0.3, 0.9, 1.5)])
    def test_node_sets_nest(self, eta, sigma, p):
        assert inclusion_by_nodes(eta, sigma, p)

    @pytest.mark.parametrize("p", [2.5, 3, 4])
    def test_oversized_factor_fails(self, p):
        assert not check_inclusion(0.7, 0.6, p, c0=0.7 * 0.6 + 1e-6)

    def test_equal_parameters(self):
        assert check_inclusion(0.4, 0.4, 2.0)


class TestChain:
    def test_halving(self):
        prm = CoveringParams(eta=0.5, sigma=0.5)
        assert prm.c0 == pytest.approx(1 / 8) and prm.alpha1 == pytest.approx(1 / 3)
        ch = chain((0.0,), 0.0, 1.0, 2.0, prm)
        assert ch.levels[3] / ch.mu0 == pytest.approx(1 / 8)
        assert (ch.radii[3] / ch.S) ** prm.alpha1 == pytest.approx(1 / 8)
        assert (ch.radii[0], ch.levels[0]) == (1.0, 2.0)

    @given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(1.1, 5))
    def test_identity_residual(self, eta, sigma, p):
        ch = chain((0.0,), 0.0, 0.5, 3.0, CoveringParams(p=p, eta=eta, sigma=sigma))
        assert len(ch) == 51 and ch.residual < 1e-12

    def test_initial_radius(self):
        assert initial_radius(4.0, 0.5, 3) == 2.0
        assert initial_radius(4.0, 0.5, 1.5) == pytest.approx(0.5 * 4**0.75)

    def test_rejects(self):
        with pytest.raises(ValueError):
            chain((0.0,), 0.0, 1.0, 0.5, CoveringParams())


CYL = ParabolicCylinder.standard((0.0,), 0.0, 0.5, 0.25)


class TestMeasureAlternative:
    def test_at_level(self):
        alt = measure_alternative(const(BIG, 1.0), CYL, 1.0, 0.1, 0.0)
        assert alt.measure_small and alt.fraction == 0 and alt.s_ok

    def test_zero(self):
        alt = measure_alternative(const(BIG, 0.0), CYL, 1.0, 0.99, 0.0)
        assert not alt.measure_small and alt.fraction == 1

    def test_threshold_flip(self):
        mask = cylinder_mask(BIG, CYL)
        vals = np.ones(BIG.shape)
        idx = np.flatnonzero(mask)[::7]
        vals.flat[idx] = 0.0
        f = idx.size / np.count_nonzero(mask)
        g = GridFunction(BIG, vals)
        assert measure_alternative(g, CYL, 1.0, f, 0.0).fraction == f
        assert not measure_alternative(g, CYL, 1.0, f, 0.0).measure_small
        assert measure_alternative(g, CYL, 1.0, f + 1e-9, 0.0).measure_small

    def test_s_check(self):
        assert not measure_alternative(const(BIG, 1.0), CYL, 1.0, 0.1, 1.5).s_ok


class TestSwitching:
    ch = chain((0.0,), 0.0, 0.5, 1.0, CoveringParams())

    def test_constant_level(self):
        rec = switching_radius(const(BIG, 1.0), self.ch, 0.1, 0.0)
        assert rec.n0 == 1 and rec.reason == "measure_fails"

    def test_quarter_level(self):
        rec = switching_radius(const(BIG, 0.25), self.ch, 0.1, 0.0)
        assert rec.n0 == 3
        assert [row[1] for row in rec.trace] == [1.0, 1.0, 0.0]

    def test_zero_never_switches(self):
        rec = switching_radius(const(BIG, 0.0), self.ch, 0.1, 0.0)
        assert rec.reason in ("exhausted", "unresolved") and rec.n0 >= 5
        assert all(row[1] == 1.0 for row in rec.trace)

    def test_large_s(self):
        rec = switching_radius(const(BIG, 0.0), self.ch, 0.1, 0.9)
        assert rec.n0 == 1 and rec.reason == "s_exceeds"

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.49), st.floats(0.01, 0.49))
    def test_monotone_in_nu(self, seed, a, b):
        lo, hi = sorted((a, b))
        rng = np.random.default_rng(seed)
        g = GridFunction(BIG, rng.uniform(0, 0.8, BIG.shape) * (0.2 + np.abs(BIG.coordinates()[0][None])))
        assert switching_radius(g, self.ch, hi, 0.0).n0 <= switching_radius(g, self.ch, lo, 0.0).n0

    def test_csv(self, tmp_path):
        switching_radius(const(BIG, 0.25), self.ch, 0.1, 0.0).to_csv(tmp_path / "s.csv")
        assert len((tmp_path / "s.csv").read_text().splitlines()) == 4


class TestOscillation:
    def test_constant(self):
        tr = oscillation_decay(vector(BIG, lambda xs, t: 0.5 + 0 * xs[0] + 0 * t), CYL, 1.0, CoveringParams())
        assert all(o == 0 for o in tr.osc) and tr.holds

    def test_affine_quadratic_scaling(self):
        prm = CoveringParams()
        tr = oscillation_decay(vector(BIG, lambda xs, t: xs[0] + 0 * t), CYL, 1.0, prm, i_max=4)
        assert tr.usable >= 4
        for a, b in zip(tr.osc, tr.osc[1:]):
            assert b / a == pytest.approx(prm.delta**2, rel=1e-9)

    def test_hypothesis(self):
        with pytest.raises(HypothesisError):
            oscillation_decay(vector(BIG, lambda xs, t: 3 + 0 * xs[0] + 0 * t), CYL, 1.0, CoveringParams())

    def test_scalar_rejected(self):
        with pytest.raises(ValueError):
            oscillation_decay(const(BIG, 0.0), CYL, 1.0, CoveringParams())


def test_cauchy_constant_gradient():
    prm = CoveringParams()
    ch = chain((0.0,), 0.0, 0.5, 1.0, prm)
    rep = cauchy_consequences(vector(BIG, lambda xs, t: 0.5 + 0 * xs[0] + 0 * t), ch, 0, prm)
    assert all(v < 1e-24 for v in rep.constants.values())
    assert all(rep.holds.values())


class TestHolder:
    def _grad(self, shift=0.0):
        return vector(BIG, lambda xs, t: np.sin(2 * xs[0]) * np.exp(-t * t) + shift)

    def test_constant_gradient(self):
        cert = holder_certificate(vector(BIG, lambda xs, t: 0.7 + 0 * xs[0] + 0 * t), (0.0,), 0.0, 0.25,
                                  CoveringParams(), n_pairs=128)
        assert cert.worst_C < 1e-12 and all(c["worst_diff"] < 1e-12 for c in cert.cases.values())

    def test_linear_potential_invariance(self):
        kw = dict(n_pairs=128, mu0=2.0, S=0.25)
        a = holder_certificate(self._grad(), (0.0,), 0.0, 0.25, CoveringParams(), **kw)
        b = holder_certificate(self._grad(0.4), (0.0,), 0.0, 0.25, CoveringParams(), **kw)
        assert b.worst_C == pytest.approx(a.worst_C, rel=1e-9)
        assert b.alpha_fit == pytest.approx(a.alpha_fit, rel=1e-9)

    def test_far_bound(self):
        cert = holder_certificate(self._grad(), (0.0,), 0.0, 0.25, CoveringParams(p=3), n_pairs=128)
        lo, hi = sorted((cert.mu0, cert.mu0**1.5))
        assert cert.far_bound == pytest.approx(2 * cert.mu0 / 0.25 * hi / lo)
        assert cert.far_ok and 0 <= cert.alpha_fit <= 1

    def test_case_exponents(self):
        assert case_exponent("time", 3, 0.5) == pytest.approx(1.25)
        assert case_exponent("space", 3, 0.5) == 1
        assert case_exponent("space", 1.5, 0.5) == pytest.approx(1.125)
        assert case_exponent("far", 4, 0.1) == 2
        with pytest.raises(ValueError):
            case_exponent("other", 2, 0.5)


class TestRescale:
    def test_identity(self):
        u = GridFunction.from_function(UNIT, lambda xs, t: np.cos(xs[0]) + t * t)
        w = rescale_to_unit(u, (0.0,), 0.0, 1.0, 1.0, 2.0)
        np.testing.assert_allclose(w.values, u.values, atol=1e-14)

    @pytest.mark.parametrize("mu,r,p", [(2.0, 0.3, 2.0), (1.5, 0.2, 3.0)])
    def test_linear_slope_preserved(self, mu, r, p):
        u = GridFunction.from_function(BIG, lambda xs, t: 1.7 * xs[0] + 0.2 + 0 * t)
        w = rescale_to_unit(u, (0.1,), 0.0, r, mu, p)
        slope = np.diff(w.values, axis=1) / UNIT.h
        np.testing.assert_allclose(slope, 1.7, rtol=1e-10)

    def test_derivative_normalisation(self):
        g = const(BIG, 3.0)
        w = rescale_to_unit(g, (0.0,), 0.0, 0.2, 2.0, 2.0, A=1.5, derivative=True)
        np.testing.assert_allclose(w.values, 1.0)


class TestDerivativeDeGiorgi:
    def test_constant_level(self):
        res = derivative_degiorgi(const(UNIT, 1.0), 1.0, 1.0, 0.1)
        assert res.hypothesis_ok and res.early_exit and res.H == 0 and res.conclusion_verified

    def test_zero_field(self):
        res = derivative_degiorgi(const(UNIT, 0.0), 1.0, 1.0, 0.1)
        assert not res.hypothesis_ok and not res.conclusion_verified

    def test_sup_bound(self):
        with pytest.raises(HypothesisError):
            derivative_degiorgi(const(UNIT, 3.0), 1.0, 1.0, 0.1)

    def test_outer_dip_converges(self):
        w = GridFunction.from_function(
            UNIT, lambda xs, t: 1.0 - 0.9 * ((np.abs(xs[0] - 0.75) < 0.04) & (np.abs(t) < 0.3)))
        res = derivative_degiorgi(w, 1.0, 1.0, 0.1)
        assert res.hypothesis_ok and not res.early_exit
        assert res.converged and res.conclusion_verified

    @given(st.integers(0, 2**32 - 1), st.floats(0.02, 0.4))
    def test_dual_symmetry(self, seed, depth):
        rng = np.random.default_rng(seed)
        vals = 1.0 - depth * (rng.random(UNIT.shape) < 0.05) * rng.random(UNIT.shape) * 10
        w = GridFunction(UNIT, np.clip(vals, -2, 2))
        a = derivative_degiorgi(w, 1.0, 2.0, 0.1)
        b = dual_derivative_degiorgi(GridFunction(UNIT, -w.values), 1.0, 2.0, 0.1)
        assert a.outcome() == b.outcome() or (math.isnan(a.H) and math.isnan(b.H) and a.fraction == b.fraction)


class TestLinear:
    def test_ellipticity_violation(self):
        with pytest.raises(EllipticityError):
            check_ellipticity(np.full(UNIT.shape, 10.0), UNIT, 4.0)

    def test_identity_bounds(self):
        assert check_ellipticity(np.ones(UNIT.shape), UNIT, 4.0) == pytest.approx((1.0, 1.0))

    def test_constant_vacuous(self):
        res = linear_decay_check(np.ones(UNIT.shape), const(UNIT, 2.0))
        assert res.vacuous and res.harnack_ratio == pytest.approx(1.0)


class TestSecondAlternative:
    def test_zero_slice(self):
        sl = good_time_slice(const(UNIT, 0.0), 0.1, 1.0)
        assert sl.found and sl.t_star == UNIT.times[1] and sl.scanned == 1

    def test_one_slice(self):
        sl = good_time_slice(const(UNIT, 1.0), 0.1, 1.0)
        assert not sl.found and not sl.alt2_holds

    def test_expansion_low_field(self):
        ex = expansion_of_positivity(const(UNIT, 0.0), 0.1, 1.0, -0.875)
        assert ex.found and ex.k == 1 and ex.eta0 == pytest.approx(0.05)

    def test_shrink_immediate(self):
        assert first_dyadic_level(0.05) == 4
        sh = levelset_shrink(const(UNIT, 0.0), -0.875, 0.05, 0.1, 0.01)
        assert sh.found and sh.j_delta == sh.j0 == 4

    def test_final_immediate(self):
        res = final_degiorgi(const(UNIT, 0.0), 2)
        assert res.converged and res.zero_measure_verified and res.trace == [0.0]

    def test_final_just_below_threshold(self):
        w = GridFunction.from_function(UNIT, lambda xs, t: 1.0 * ((xs[0] == 0.6875) & (np.abs(t) <= 0.25)))
        res = final_degiorgi(w, 3)
        thr = final_threshold(1.0, 1)
        assert 0.5 * thr < res.trace[0] <= thr and res.threshold_met
        assert res.converged and len(res.trace) <= 41 and res.zero_measure_verified

    def test_final_non_convergent(self):
        res = final_degiorgi(const(UNIT, 1.0), 3)
        assert not res.converged and res.failed_step == 40 and not res.threshold_met
