"""Verification campaigns: each returns a list of ``Check`` records.

The same functions back the command line runner and the acceptance tests.
"""

from __future__ import annotations

import math

import numpy as np

from . import calculus, covering, iterate, solver
from .corpus import (
    dipped_caloric,
    mass_for_gradient,
    oracle_corpus,
    peak_location,
    refine,
)
from .mesh import GridFunction, ParabolicCylinder, SpaceTimeGrid, cylinder_mask, discrete_gradient
from .reports import Check
from .rng import generator

# ------------------------------------------------------------------ iteration lemmas


def iteration_threshold() -> list[Check]:
    thr = iterate.geometric_threshold(2.0, 4.0, 1.0)
    low = iterate.fast_geometric(2.0, 4.0, 1.0, thr)
    high = iterate.fast_geometric(2.0, 4.0, 1.0, 1.25)
    peak = float(np.max(high.sequence))
    return [
        Check("geometric threshold", thr, 0.125, thr / 0.125, thr == 0.125, "fast geometric convergence"),
        Check("decay from threshold", float(low.sequence[-1]), 1e-12, 0.0, bool(low.sequence[-1] < 1e-12),
              "fast geometric convergence"),
        Check("blow-up above threshold", peak, 1e6, 0.0, peak > 1e6, "fast geometric convergence"),
    ]


def bounded_recursion(seed: int = 0, count: int = 10_000, length: int = 30) -> list[Check]:
    bound = iterate.bounded_recursive(2.0, 4.0, 0.5)
    rng = generator(seed, stream=2)
    worst = 0.0
    for _ in range(count):
        worst = max(worst, float(iterate.admissible_sequence(2.0, 4.0, 0.5, length, rng)[0]))
    return [
        Check("bounded recursion constant", bound, 256.0, bound / 256.0, math.isclose(bound, 256.0, rel_tol=1e-12),
              "equibounded recursion"),
        Check("random admissible sequences", worst, bound, worst / bound, worst <= bound, "equibounded recursion",
              {"count": count}),
    ]


def exact_inequalities(seed: int = 0, count: int = 1000, nodes: int = 16) -> list[Check]:
    """Level-set Chebyshev bound and the dyadic level comparison on random fields."""
    grid = SpaceTimeGrid(2, 1 / (nodes - 1), 1 / (nodes - 1), ((0, 1), (0, 1)), (0, 1))
    cyl = ParabolicCylinder((0.5, 0.5), 1.0, 0.6, 1.0, backward=True)
    rng = generator(seed, stream=3)
    cheb_fail = rem_fail = 0
    worst_cheb = worst_rem = math.inf
    for _ in range(count):
        scale = 10.0 ** rng.uniform(-2, 2)
        v = GridFunction(grid, scale * rng.random(grid.shape) ** rng.uniform(0.2, 5))
        k = scale * rng.uniform(0.01, 1.0)
        k_next = k + scale * rng.uniform(0.0, 1.0)
        q = rng.uniform(0.5, 6.0)
        ch = calculus.chebyshev_check(v, k, k_next, q, cyl)
        cheb_fail += not ch.holds
        if ch.lhs > 0:
            worst_cheb = min(worst_cheb, ch.rhs / ch.lhs)
        rm = calculus.remark_cheb(v, k, int(rng.integers(0, 12)), rng.uniform(1.01, 6.0), cyl)
        rem_fail += not rm.holds
        if rm.rhs > 0:
            worst_rem = min(worst_rem, rm.ratio)
    return [
        Check("chebyshev on random fields", cheb_fail, 0, worst_cheb, cheb_fail == 0, "level-set chebyshev"),
        Check("dyadic level comparison", rem_fail, 0, worst_rem, rem_fail == 0, "level comparison remark"),
    ]


# ------------------------------------------------------------------ solver


def convergence_orders(p: float, dim: int, hs, t_window=(0.125, 0.25), dt: float = 1 / 256) -> tuple:
    fn = solver.source_solution(p, dim, 1.0)
    errors = []
    for h in hs:
        grid = SpaceTimeGrid(dim, h, dt, tuple((-1.0, 1.0) for _ in range(dim)), t_window)
        run = solver.solve(fn, grid, solver.FluxParams(p), solver.SolveConfig(), oracle=fn)
        exact = GridFunction.from_function(grid, fn)
        cyl = ParabolicCylinder((0.0,) * dim, t_window[1], 0.5, 0.05, backward=True)
        mask = cylinder_mask(grid, cyl)
        errors.append(float(np.max(np.abs(run.field.values - exact.values)[mask])))
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(len(errors) - 1)]
    return errors, orders


def solver_convergence(dims=(1, 2)) -> list[Check]:
    out = []
    plan = {1: ([1 / 32, 1 / 64, 1 / 128], 1.0), 2: ([1 / 16, 1 / 32, 1 / 64], 0.8)}
    for dim in dims:
        hs, need = plan[dim]
        for p in (2.0, 3.0):
            errors, orders = convergence_orders(p, dim, hs)
            worst = min(orders)
            out.append(Check(f"order p={p:g} dim={dim}", worst, need, worst, worst >= need, "solver convergence",
                             {"errors": errors, "orders": orders}))
    return out


def structure(samples: int = 10_000) -> list[Check]:
    out = []
    for p in (1.5, 2.0, 3.0, 4.0):
        rep = solver.verify_structure(solver.FluxParams(p), samples, seed=0)
        out.append(Check(f"structure p={p:g}", rep.worst_lower_ratio, 1 - 1e-12, rep.worst_upper_ratio,
                         rep.passed and rep.worst_lower_ratio >= 1 - 1e-12, "structure conditions"))
    return out


# ------------------------------------------------------------------ energy estimate


def energy_constants(ps=(1.5, 2.0, 3.0), targets=(0.5, 1.0, 2.0), positions=(0.25, 0.5, 1.0, 1.5),
                     fractions=(0.25, 0.5, 0.75), nodes: int = 64) -> dict:
    """Smallest truncated-energy constant valid over the corpus, per ``p``.

    Every field is an exact source solution sampled on ``nodes x nodes``
    space-time points of a unit box ending at ``t = 1``.
    """
    out = {}
    h = 1 / (nodes - 1)
    dt = 0.25 / (nodes - 1)
    for p in ps:
        ex = iterate.choose_exponents("unified", p, 1)
        worst = 0.0
        for target in targets:
            mass = mass_for_gradient(p, 1, 1.0, target)
            x_peak = peak_location(p, 1, mass, 1.0, reach=20.0, samples=40001)
            for pos in positions:
                c = round(pos * x_peak / h) * h
                grid = SpaceTimeGrid(1, h, dt, ((c - 0.5, c + 0.5),), (0.75, 1.0))
                u = GridFunction.from_function(grid, solver.source_solution(p, 1, mass))
                v = discrete_gradient(u).magnitude()
                cut = calculus.CutoffFunction.degiorgi(grid, (c,), 1.0, 0.45, 0.24, 0.5, 0, backward=True)
                top = float(np.max(v.values))
                for frac in fractions:
                    bal = calculus.truncated_energy(v, cut, frac * top, 0, ex, p)
                    worst = max(worst, bal.empirical_C)
        out[p] = worst
    return out


def energy_uniformity() -> list[Check]:
    consts = energy_constants()
    hi, lo = max(consts.values()), min(consts.values())
    return [Check("energy constant spread over p", hi, 3 * lo, hi / lo, hi <= 3 * lo, "unified energy estimate",
                  {str(k): v for k, v in consts.items()})]


# ------------------------------------------------------------------ Lipschitz bounds


def lipschitz_field(p: float, target: float, h: float = 1 / 128, dt: float = 1 / 1024):
    mass = mass_for_gradient(p, 1, 1.0, target)
    x_peak = peak_location(p, 1, mass, 1.0, reach=20.0, samples=40001)
    c = round(x_peak / h) * h
    grid = SpaceTimeGrid(1, h, dt, ((c - 0.5, c + 0.5),), (0.75, 1.0))
    v = discrete_gradient(GridFunction.from_function(grid, solver.source_solution(p, 1, mass))).magnitude()
    return v, (c,)


LIPSCHITZ_TARGETS = (0.5, 2.0, 5.0)
RHO, THETA = 0.4, 0.2


def calibrate_C1(ps=(1.6, 2.0, 2.5, 3.0), targets=LIPSCHITZ_TARGETS) -> float:
    """Largest first-iteration step constant over the calibration corpus."""
    if not ps or not targets:
        raise ValueError("calibration corpus is empty")
    worst = 0.0
    for p in ps:
        consts = iterate.bound_constants(1, p, iterate.choose_exponents("unified", p, 1), RHO, THETA, 0.5, 0.5, 1.0)
        for target in targets:
            v, c = lipschitz_field(p, target)
            tr = iterate.degiorgi_first(v, consts, float(np.max(v.values)), center=c, t0=1.0)
            worst = max(worst, tr.empirical_constant)
    return worst


def _bound_check(name, v, c, consts, topic):
    sup, bound, integral = iterate.bound_for(v, consts, center=c, t0=1.0, backward=True)
    return Check(name, sup, bound, sup / bound, sup <= bound, topic, {"integral": integral})


def lipschitz_unified(C1: float, ps=(1.6, 2.0, 2.5, 3.0), eps: float = 0.5, sigma: float = 0.5) -> list[Check]:
    out = []
    for p in ps:
        consts = iterate.bound_constants(1, p, iterate.choose_exponents("unified", p, 1), RHO, THETA, sigma, eps, C1)
        for target in LIPSCHITZ_TARGETS:
            v, c = lipschitz_field(p, target)
            out.append(_bound_check(f"unified p={p:g} scale={target:g}", v, c, consts, "gradient sup bound"))
    return out


def lipschitz_corollaries(C1: float) -> list[Check]:
    """Degenerate and singular special cases, plus agreement of both formulas at ``p = 2``."""
    out = []
    for mode, p in (("degenerate", 3.0), ("singular", 1.6)):
        consts = iterate.bound_constants(1, p, iterate.choose_exponents(mode, p, 1), RHO, THETA, 0.5, 1.0, C1)
        for target in LIPSCHITZ_TARGETS:
            v, c = lipschitz_field(p, target)
            out.append(_bound_check(f"{mode} p={p:g} scale={target:g}", v, c, consts, f"{mode} sup bound"))
    rel = 0.0
    for integral in (1e-3, 0.37, 12.0):
        for eps in (0.25, 1.0, 2.0):
            deg = iterate.degenerate_bound(integral, 0.5, RHO, THETA, eps, 1, 2.0, C1)
            sing = iterate.singular_bound(integral, 0.5, RHO, THETA, eps, 1, 2.0, C1)
            rel = max(rel, abs(deg - sing) / max(deg, sing))
    out.append(Check("p=2 seam degenerate vs singular", deg, sing, rel, rel <= 1e-10, "mode seam"))
    return out


def lipschitz_end_to_end(C1: float | None = None) -> list[Check]:
    C1 = calibrate_C1() if C1 is None else C1
    return lipschitz_unified(C1) + lipschitz_corollaries(C1)


# ------------------------------------------------------------------ covering


def covering_geometry(seed: int = 0) -> list[Check]:
    grid_vals = [i / 10 for i in range(1, 10)]
    fails = 0
    node_fails = 0
    for eta in grid_vals:
        for sigma in grid_vals:
            for p in (1.5, 2.0, 3.0):
                fails += not covering.check_inclusion(eta, sigma, p)
                node_fails += not covering.inclusion_by_nodes(eta, sigma, p)
    rng = generator(seed, stream=4)
    worst = 0.0
    for _ in range(100):
        eta = rng.uniform(0.05, 0.95)
        sigma = rng.uniform(0.05, 0.95)
        params = covering.CoveringParams(eta=eta, sigma=sigma, p=rng.uniform(1.2, 4.0))
        worst = max(worst, covering.chain([0.0], 0.0, 1.0, 1.0, params).residual)
    return [
        Check("inclusion on parameter grid", fails, 0, 0.0, fails == 0, "cylinder inclusion"),
        Check("inclusion by node sets", node_fails, 0, 0.0, node_fails == 0, "cylinder inclusion"),
        Check("chain identity residual", worst, 1e-12, worst, worst <= 1e-12, "chain identity"),
    ]


def affine_oscillation() -> Check:
    grid = SpaceTimeGrid(1, 1 / 64, 1 / 256, ((-1.0, 1.0),), (-1.0, 1.0))
    grad = GridFunction.from_function(grid, lambda xs, t: np.stack([0.3 * xs[0]], -1))
    params = covering.CoveringParams()
    cyl = covering.intrinsic_cylinder([0.0], 0.0, 0.5, 1.0, 2.0)
    tr = covering.oscillation_decay(grad, cyl, 1.0, params, i_max=4)
    expected = params.delta**2
    err = max(abs(tr.osc[i + 1] / tr.osc[i] - expected) / expected for i in range(len(tr.osc) - 1))
    return Check("affine oscillation scaling", err, 1e-10, err, err <= 1e-10 and len(tr.osc) >= 3,
                 "oscillation decay", {"levels": len(tr.osc)})


def cauchy_for(case):
    grad = case.gradient()
    mag = grad.magnitude()
    params = covering.CoveringParams(p=case.p)
    mu0 = covering.gradient_scale(mag, case.center, case.t0, case.R0)
    S = covering.initial_radius(mu0, case.R0, case.p)
    ch = covering.chain(case.center, case.t0, S, mu0, params, n_max=12)
    sw = covering.switching_radius(mag, ch, params.nu, params.s)
    return covering.cauchy_consequences(grad, ch, sw.n0, params), sw


def cauchy_stability() -> list[Check]:
    out = [affine_oscillation()]
    for case in oracle_corpus():
        coarse, sw = cauchy_for(case)
        fine, _ = cauchy_for(refine(case))
        for key in ("C1", "C2", "C3", "C4", "C5"):
            a, b = coarse.constants[key], fine.constants[key]
            finite = math.isfinite(a) and math.isfinite(b)
            spread = max(a, b) / min(a, b) if min(a, b) > 0 else (1.0 if a == b else math.inf)
            out.append(Check(f"{key} p={case.p:g}", spread, 2.0, b, finite and spread <= 2.0 and coarse.holds[key],
                             "averaged oscillation consequences", {"coarse": a, "fine": b, "switch": sw.n0}))
    return out


def holder(n_pairs: int = 256, seed: int = 0) -> list[Check]:
    out = []
    for case in oracle_corpus():
        params = covering.CoveringParams(p=case.p)
        cert = covering.holder_certificate(case.gradient(), case.center, case.t0, case.R0, params,
                                           n_pairs=n_pairs, seed=seed)
        ok = cert.alpha_fit >= 0.1 and math.isfinite(cert.worst_C)
        out.append(Check(f"holder exponent p={case.p:g}", cert.alpha_fit, 0.1, cert.worst_C, ok,
                         "gradient holder certificate", {"raw_slope": cert.alpha_raw, "a": cert.a}))
        out.append(Check(f"far pairs p={case.p:g}", cert.far_worst_ratio, cert.far_bound,
                         cert.far_worst_ratio / cert.far_bound,
                         cert.far_ok and cert.far_pairs > 0, "far pair bound", {"far_pairs": cert.far_pairs}))
    return out


def derivative_trials(seed: int = 0, trials: int = 100, nu: float = 0.1, h: float = 1 / 32,
                      dt: float = 1 / 256) -> list[Check]:
    grid = covering.unit_grid(1, h, dt)
    rng = generator(seed, stream=5)
    accepted = failures = mismatches = full_runs = tried = 0
    while accepted < trials:
        tried += 1
        if tried > 50 * trials:
            break
        w = dipped_caloric(grid, rng, rng.uniform(0.7, 0.95), n_dips=int(rng.integers(1, 4)),
                           depth=rng.uniform(0.3, 1.5))
        if float(np.max(np.abs(w.values))) > 1:
            continue
        res = covering.derivative_degiorgi(w, 1.0, 1.0, nu)
        if not res.hypothesis_ok:
            continue
        accepted += 1
        full_runs += not res.early_exit
        failures += not (res.converged and res.conclusion_verified)
        dual = covering.dual_derivative_degiorgi(w.with_values(-w.values), 1.0, 1.0, nu)
        mismatches += dual.outcome() != res.outcome()
    return [
        Check("lower bound on half cylinder", failures, 0, full_runs, failures == 0 and accepted == trials,
              "derivative de giorgi", {"accepted": accepted, "tried": tried, "full_iterations": full_runs}),
        Check("dual symmetry", mismatches, 0, 0.0, mismatches == 0, "derivative de giorgi"),
    ]


def second_alternative_trials(seed: int = 0, trials: int = 12, nu: float = 0.1, h: float = 1 / 32,
                              dt: float = 1 / 256) -> list[Check]:
    grid = covering.unit_grid(1, h, dt)
    rng = generator(seed, stream=6)
    records = []
    tried = 0
    while len(records) < trials and tried < 50 * trials:
        tried += 1
        w = dipped_caloric(grid, rng, rng.uniform(0.95, 0.995), n_dips=int(rng.integers(1, 3)),
                           depth=rng.uniform(1.5, 1.9), ripple=0.004)
        if float(np.max(np.abs(w.values))) > 1:
            continue
        up, down = covering.alt2_fractions(w, 1.0)
        if not (up < 1 - nu and down < 1 - nu):
            continue
        records.append(covering.second_alternative(w, nu, 1.0))
    slice_ok = all(r.slice.found and -1 < r.slice.t_star < -nu / 2 for r in records)
    eta_ok = all(r.expansion and r.expansion.found and r.expansion.eta0 < nu
                 and np.all(r.expansion.slice_fractions <= r.expansion.bound) for r in records)
    shrink_ok = all(r.shrink and r.shrink.found and len(r.shrink.per_s) == 5
                    and all(j <= r.shrink.j_delta for j in r.shrink.per_s.values()) for r in records)
    final_ok = all(r.final and r.final.converged and r.final.zero_measure_verified for r in records)
    deepest = max((r.shrink.j_delta - r.shrink.j0 for r in records if r.shrink and r.shrink.found), default=0)
    n = len(records)
    return [
        Check("good time slice", int(slice_ok), 1, 0.0, slice_ok and n == trials, "good slice", {"fields": n}),
        Check("expansion of positivity", int(eta_ok), 1, 0.0, eta_ok and n == trials, "expansion of positivity"),
        Check("level shrinking over five windows", int(shrink_ok), 1, deepest, shrink_ok and n == trials,
              "level shrinking"),
        Check("final iteration zero measure", int(final_ok), 1, 0.0, final_ok and n == trials,
              "final de giorgi"),
    ]
