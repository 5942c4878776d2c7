"""Discrete truncations, level sets and the functional inequalities built on them.

Every check returns its two sides separately together with the smallest
constant that makes the inequality hold on the given data.  A ratio whose
numerator and denominator both vanish is reported as 0 and flagged vacuous.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import (
    GridFunction,
    ParabolicCylinder,
    SpaceTimeGrid,
    cylinder_mask,
    discrete_gradient,
    spatial_gradient,
    spatial_mask,
    time_mask,
)


@dataclass(frozen=True)
class Balance:
    lhs: float
    rhs: float
    empirical_C: float
    vacuous: bool = False
    terms: dict = field(default_factory=dict)


def _ratio(lhs, rhs):
    if rhs == 0:
        return (0.0, True) if lhs <= 0 else (math.inf, False)
    return float(max(lhs, 0.0) / rhs), False


def _positive_power(x, e):
    """``x^e`` on ``x > 0`` and 0 elsewhere (the 0 * inf := 0 convention)."""
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.power(x[pos], e)
    return out


def level(k: int, n: int) -> float:
    """The De Giorgi level ``k - k / 2^n``."""
    return k - k / 2.0**n


# ------------------------------------------------------------------ level sets


@dataclass(frozen=True)
class LevelSetStats:
    level: float
    cylinder: ParabolicCylinder
    measure: float
    integrals: dict


def level_set_stats(v: GridFunction, k: float, cyl: ParabolicCylinder, exponents=(1.0,)) -> LevelSetStats:
    mask = cylinder_mask(v.grid, cyl)
    vals = v.values[mask]
    excess = np.maximum(vals - k, 0.0)
    ints = {q: math.fsum(excess[excess > 0] ** q) * v.grid.cell for q in exponents}
    return LevelSetStats(k, cyl, np.count_nonzero(vals >= k) * v.grid.cell, ints)


def truncate(v: GridFunction, k: float, sign: str = "plus") -> GridFunction:
    if sign == "plus":
        return v.with_values(np.maximum(v.values - k, 0.0))
    if sign == "minus":
        return v.with_values(np.maximum(k - v.values, 0.0))
    raise ValueError("sign must be 'plus' or 'minus'")


@dataclass(frozen=True)
class ChebyshevResult:
    lhs: float
    rhs: float
    holds: bool
    rhs_literal: float
    holds_literal: bool


def chebyshev_check(v: GridFunction, k: float, k_next: float, q: float, cyl: ParabolicCylinder) -> ChebyshevResult:
    """``|{v >= k_next}| <= (k_next - k)^(-q) * int (v - k)_+^q`` on ``cyl``.

    The decision is made on node counts with a correctly rounded sum, so it is
    exact in floating point.  ``rhs_literal`` uses ``k^(-q)`` in place of the
    gap; that form only holds when ``k_next >= 2 k``.
    """
    if not (0 < k <= k_next and q > 0):
        raise ValueError("need 0 < k <= k_next and q > 0")
    vals = v.values[cylinder_mask(v.grid, cyl)]
    count = int(np.count_nonzero(vals >= k_next))
    excess = vals[vals > k] - k
    total = math.fsum(excess**q)
    cell = v.grid.cell
    gap = k_next - k
    if gap > 0:
        gap_q = gap**q
        holds = count * gap_q <= total
        rhs = total / gap_q * cell
    else:
        # a zero gap makes the right side infinite unless the excess vanishes
        holds, rhs = count == 0 or total > 0, (math.inf if total > 0 else 0.0)
    k_q = k**q
    return ChebyshevResult(count * cell, rhs, holds, total / k_q * cell, count * k_q <= total)


@dataclass(frozen=True)
class ShiftedLevelResult:
    lhs: float
    rhs: float
    ratio: float
    rhs_dyadic: float
    holds: bool


def remark_cheb(v: GridFunction, k: float, n: int, delta: float, cyl: ParabolicCylinder) -> ShiftedLevelResult:
    """``int (v - k_n)_+^delta >= c_n^delta int v^delta 1{v >= k_{n+1}}``.

    ``c_n = 1 - (2^(n+1) - 2) / (2^(n+1) - 1)``; the weaker dyadic right side
    ``2^(-(n+1) delta) int v^delta 1{...}`` is reported alongside.
    """
    if delta <= 1:
        raise ValueError("delta must exceed 1")
    k_n, k_next = level(k, n), level(k, n + 1)
    factor = 1.0 - (2.0 ** (n + 1) - 2) / (2.0 ** (n + 1) - 1)
    vals = v.values[cylinder_mask(v.grid, cyl)]
    lhs_terms = (vals[vals > k_n] - k_n) ** delta
    top = vals[vals >= k_next]
    lhs = math.fsum(lhs_terms)
    rhs = math.fsum((factor * top) ** delta)
    moment = math.fsum(top**delta)
    cell = v.grid.cell
    ratio, _ = _ratio(lhs, rhs)
    return ShiftedLevelResult(lhs * cell, rhs * cell, ratio, 2.0 ** (-(n + 1) * delta) * moment * cell, lhs >= rhs)


# ------------------------------------------------------------------ embeddings


def _boundary_trace(v: GridFunction, tol: float) -> float:
    vals = v.values
    rim = np.ones(v.grid.spatial_shape, dtype=bool)
    rim[(slice(1, -1),) * v.grid.dim] = False
    return float(np.max(np.abs(vals[:, rim]))) if vals.size else 0.0


def sobolev_embedding_ratio(v: GridFunction, p_tilde: float, tol: float = 1e-12) -> Balance:
    """``int |v|^q / ((sup_t int v^2)^(p/N) int |grad v|^p)`` with ``q = p (N+2)/N``."""
    if _boundary_trace(v, tol) > tol:
        raise ValueError("field must vanish on the lateral boundary")
    grid = v.grid
    n = grid.dim
    q = p_tilde * (n + 2) / n
    absval = np.abs(v.values)
    lhs = np.sum(absval**q) * grid.cell
    energy = np.max(np.sum(v.values**2, axis=tuple(range(1, n + 1)))) * grid.h**n
    grad = np.linalg.norm(discrete_gradient(v).values, axis=-1)
    rhs = energy ** (p_tilde / n) * np.sum(grad**p_tilde) * grid.cell
    c, vac = _ratio(lhs, rhs)
    return Balance(float(lhs), float(rhs), c, vac)


def sobolev_poincare_ratio(v: GridFunction, cyl: ParabolicCylinder, s_exp: float, tol: float = 1e-12) -> Balance:
    """``||v||_s^s`` against ``|{v != 0}|^(s/(N+s)) (sup_t ||v||_s + ||grad v||_s)^s`` on ``cyl``."""
    if not 1 < s_exp < math.inf:
        raise ValueError("need 1 < s < inf")
    grid = v.grid
    mask = cylinder_mask(grid, cyl)
    n = grid.dim
    vals = np.where(mask, v.values, 0.0)
    absval = np.abs(vals)
    lhs = np.sum(absval**s_exp) * grid.cell
    support = np.count_nonzero(absval > tol) * grid.cell
    slices = np.sum(absval**s_exp, axis=tuple(range(1, n + 1))) * grid.h**n
    grad = np.linalg.norm(discrete_gradient(v).values, axis=-1)
    grad_norm = (np.sum(grad[mask] ** s_exp) * grid.cell) ** (1 / s_exp)
    v_norm = np.max(slices) ** (1 / s_exp) + grad_norm
    rhs = support ** (s_exp / (n + s_exp)) * v_norm**s_exp
    c, vac = _ratio(lhs, rhs)
    return Balance(float(lhs), float(rhs), c, vac, {"support": support})


def levelset_poincare(v: GridFunction, t_index: int, center, rho: float, k: float, l: float) -> Balance:
    """``(l - k)|B ∩ {v > l}|`` against ``rho^(N+1)/|B ∩ {v <= k}| int_{k<v<l} |grad v|`` on one slice."""
    if not k < l:
        raise ValueError("need k < l")
    grid = v.grid
    ball = spatial_mask(grid, center, rho)
    slab = v.values[t_index]
    cell = grid.h**grid.dim
    lhs = (l - k) * np.count_nonzero(ball & (slab > l)) * cell
    low = np.count_nonzero(ball & (slab <= k)) * cell
    grad = np.linalg.norm(spatial_gradient(slab, grid.h), axis=-1)
    band = ball & (slab > k) & (slab < l)
    if low == 0:
        return Balance(float(lhs), math.inf, 0.0, True, {"low_measure": 0.0})
    rhs = rho ** (grid.dim + 1) / low * np.sum(grad[band]) * cell
    c, vac = _ratio(lhs, rhs)
    return Balance(float(lhs), float(rhs), c, vac, {"low_measure": low})


# ------------------------------------------------------------------ cutoffs


def _ramp(x):
    return np.clip(x, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class CutoffFunction:
    """Piecewise-linear cutoff: 1 on ``inner``, 0 off ``outer``.

    The ramps are linear so the certified bounds ``1/(r_out - r_in)`` and
    ``1/(lower_in - lower_out)`` are attained exactly; any C^1 profile over the
    same gap would exceed them somewhere.  Gradients are the exact ones.
    """

    inner: ParabolicCylinder
    outer: ParabolicCylinder
    values: np.ndarray
    grad: np.ndarray
    dtime: np.ndarray
    grad_bound: float
    time_bound: float

    @classmethod
    def build(cls, grid: SpaceTimeGrid, inner: ParabolicCylinder, outer: ParabolicCylinder) -> CutoffFunction:
        gap_x = outer.radius - inner.radius
        lo_out, hi_out = outer.time_bounds
        lo_in, hi_in = inner.time_bounds
        gap_t = lo_in - lo_out
        if gap_x <= 0 or gap_t <= 0 or hi_in > hi_out + 1e-15:
            raise ValueError("inner cylinder must sit strictly inside the outer one")
        xs = grid.coordinates()
        offset = [x - c for x, c in zip(xs, outer.center)]
        dist = np.sqrt(sum(o * o for o in offset))
        space = _ramp((outer.radius - dist) / gap_x)
        in_ramp = (space > 0) & (space < 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            dspace = [np.where(in_ramp, -o / dist / gap_x, 0.0) for o in offset]
        t = grid.times
        inside_t = time_mask(grid, lo_out, hi_out)
        tprof = np.where(inside_t, _ramp((t - lo_out) / gap_t), 0.0)
        dtprof = np.where(inside_t & (t > lo_out) & (t < lo_in), 1.0 / gap_t, 0.0)
        shape_t = (-1,) + (1,) * grid.dim
        values = tprof.reshape(shape_t) * space[None]
        grad = np.stack([tprof.reshape(shape_t) * d[None] for d in dspace], axis=-1)
        dtime = dtprof.reshape(shape_t) * space[None]
        gb, tb = 1.0 / gap_x, 1.0 / gap_t
        slack = 1 + 1e-12
        assert np.all((values >= 0) & (values <= 1))
        assert np.max(np.linalg.norm(grad, axis=-1), initial=0.0) <= gb * slack
        assert np.max(np.abs(dtime), initial=0.0) <= tb * slack
        return cls(inner, outer, values, grad, dtime, gb, tb)

    @classmethod
    def degiorgi(cls, grid, center, t0, rho, theta, sigma, n, backward=True) -> CutoffFunction:
        """Cutoff between the n-th shrinking cylinder and its midpoint cylinder."""
        r_n, r_next = shrinking_radius(rho, sigma, n), shrinking_radius(rho, sigma, n + 1)
        th_n, th_next = shrinking_radius(theta, sigma, n), shrinking_radius(theta, sigma, n + 1)
        outer = ParabolicCylinder.standard(center, t0, r_n, th_n, backward)
        inner = ParabolicCylinder.standard(center, t0, 0.5 * (r_n + r_next), 0.5 * (th_n + th_next), backward)
        return cls.build(grid, inner, outer)


def shrinking_radius(r: float, sigma: float, n: int) -> float:
    return sigma * r + (1 - sigma) * r / 2.0**n


# ------------------------------------------------------------------ energy estimates


@dataclass(frozen=True)
class WeightFunction:
    """Nonnegative weight ``f`` with derivative ``fprime``; ``primitive`` is ``int_0^v s f(s) ds``."""

    f: object
    fprime: object
    exact_primitive: object = None

    def primitive(self, v: np.ndarray, samples: int = 1 << 14) -> np.ndarray:
        if self.exact_primitive is not None:
            return self.exact_primitive(v)
        top = float(np.max(v, initial=0.0))
        if top <= 0:
            return np.zeros_like(v)
        s = np.linspace(0.0, top, samples + 1)
        integrand = s * self.f(s)
        table = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s))])
        return np.interp(v, s, table)

    @classmethod
    def constant(cls) -> WeightFunction:
        return cls(np.ones_like, np.zeros_like, lambda v: 0.5 * v * v)

    @classmethod
    def truncated_power(cls, alpha: float, beta: float, k: float) -> WeightFunction:
        """``f(v) = v^alpha (v - k)_+^beta``."""

        def f(v):
            return _positive_power(v, alpha) * _positive_power(v - k, beta)

        def fprime(v):
            d = alpha * _positive_power(v, alpha - 1) * _positive_power(v - k, beta) if alpha else 0.0
            return d + beta * _positive_power(v, alpha) * _positive_power(v - k, beta - 1)

        return cls(f, fprime)


def hessian_level(level: np.ndarray, h: float) -> np.ndarray:
    """Second central differences with symmetrically averaged mixed partials."""
    n = level.ndim
    first = spatial_gradient(level, h)
    out = np.empty(level.shape + (n, n))
    for i in range(n):
        d2 = np.gradient(first[..., i], h, axis=i, edge_order=2)
        core = [slice(None)] * n
        core[i] = slice(1, -1)
        lo = [slice(None)] * n
        lo[i] = slice(None, -2)
        hi = [slice(None)] * n
        hi[i] = slice(2, None)
        d2[tuple(core)] = (level[tuple(hi)] - 2 * level[tuple(core)] + level[tuple(lo)]) / h**2
        out[..., i, i] = d2
        for j in range(i + 1, n):
            mixed = 0.5 * (
                np.gradient(first[..., i], h, axis=j, edge_order=2)
                + np.gradient(first[..., j], h, axis=i, edge_order=2)
            )
            out[..., i, j] = out[..., j, i] = mixed
    return out


def energy_balance(u: GridFunction, weight: WeightFunction, cyl: ParabolicCylinder,
                   cutoff: CutoffFunction, p: float) -> Balance:
    """Four left and two right terms of the weighted energy identity for ``v = |grad u|``.

    The time-derivative term on the right is taken in absolute value,
    ``int F(v) zeta |zeta_t|``.
    """
    grid = u.grid
    mask = cylinder_mask(grid, cyl)
    grads = discrete_gradient(u).values
    v = np.linalg.norm(grads, axis=-1)
    grad_v = discrete_gradient(GridFunction(grid, v)).values
    hess2 = np.stack([np.sum(hessian_level(level, grid.h) ** 2, axis=(-1, -2)) for level in u.values])
    zeta = cutoff.values
    fv, fpv = weight.f(v), weight.fprime(v)
    big_f = weight.primitive(v)
    cell = grid.cell
    space_cell = grid.h**grid.dim

    slices = np.sum(np.where(mask, big_f * zeta**2, 0.0), axis=tuple(range(1, grid.dim + 1))) * space_cell
    sup_term = float(np.max(slices, initial=0.0))

    def over(arr):
        return float(np.sum(arr[mask]) * cell)

    dot = np.sum(grad_v * grads, axis=-1)
    t2 = over(_positive_power(v, p - 2) * hess2 * fv * zeta**2)
    t3 = over(_positive_power(v, p - 1) * np.sum(grad_v**2, axis=-1) * fpv * zeta**2)
    t4 = (p - 2) * over(_positive_power(v, p - 3) * dot**2 * fpv * zeta**2)
    grad_zeta2 = np.sum(cutoff.grad**2, axis=-1)
    r1 = over(_positive_power(v, p) * fv * grad_zeta2)
    r2 = over(big_f * zeta * np.abs(cutoff.dtime))
    lhs = sup_term + t2 + t3 + t4
    rhs = r1 + r2
    c, vac = _ratio(lhs, rhs)
    terms = {"sup": sup_term, "hessian": t2, "grad_v": t3, "mixed": t4, "cutoff_grad": r1, "cutoff_time": r2}
    return Balance(lhs, rhs, c, vac, terms)


def truncated_energy(v: GridFunction, cutoff: CutoffFunction, k: float, n: int, exponents, p: float) -> Balance:
    """Both sides of the truncated energy estimate for ``(v - k_{n+1})_+`` on ``cutoff.outer``.

    ``exponents`` carries ``alpha, beta, gamma``; the gradient is the discrete
    gradient of the product ``(v - k_{n+1})_+^{a/2} zeta`` with
    ``a = alpha + beta + 2 - gamma``.
    """
    a_, b_, g_ = exponents.alpha, exponents.beta, exponents.gamma
    a = a_ + b_ + 2 - g_
    grid = v.grid
    mask = cylinder_mask(grid, cutoff.outer)
    k_next = level(k, n + 1)
    excess = np.maximum(v.values - k_next, 0.0)
    w = excess ** (a / 2) * cutoff.values
    space_cell = grid.h**grid.dim
    slices = np.sum(np.where(mask, w * w, 0.0), axis=tuple(range(1, grid.dim + 1))) * space_cell
    lhs_sup = a * (k / 2) ** g_ * float(np.max(slices, initial=0.0))
    gw = discrete_gradient(GridFunction(grid, np.where(mask, w, 0.0))).values
    lhs_grad = (k / 2) ** (p - 2 + g_) * float(np.sum(np.sum(gw**2, axis=-1)[mask]) * grid.cell)
    above = mask & (v.values >= k_next)
    vv = v.values[above]
    rhs1 = (a_ + b_ + 2) ** 2 * float(np.sum(vv ** (p + a_ + b_) * np.sum(cutoff.grad**2, axis=-1)[above]) * grid.cell)
    rhs2 = (a_ + b_ + 2) * float(np.sum(vv ** (2 + a_ + b_) * np.abs(cutoff.dtime)[above]) * grid.cell)
    lhs, rhs = lhs_sup + lhs_grad, rhs1 + rhs2
    c, vac = _ratio(lhs, rhs)
    return Balance(lhs, rhs, c, vac, {"lhs_sup": lhs_sup, "lhs_grad": lhs_grad, "rhs1": rhs1, "rhs2": rhs2})


# ------------------------------------------------------------------ logarithmic weight


def log_weight(z, nu: float, eta0: float):
    """``log+ (nu / (nu - (z - (1 - nu))_+ + eta0))``."""
    if not 0 < eta0 < nu:
        raise ValueError("need 0 < eta0 < nu")
    z = np.asarray(z, dtype=float)
    denom = nu - np.maximum(z - (1 - nu), 0.0) + eta0
    if np.any(denom <= 0):
        raise ValueError("log weight argument is not positive (z exceeds 1 + eta0)")
    return np.maximum(np.log(nu / denom), 0.0)


def log_estimate_check(w: GridFunction, k: float, nu: float, eta0: float, t1: float, t2: float,
                       s_radius: float) -> Balance:
    """Smallest ``C`` with ``int_{B_s} Psi^2(t2) <= int_{B_1} Psi^2(t1) + C/(1-s)^2 int int Psi``.

    ``Psi`` is evaluated at ``(w - k)_+`` on the unit ball around the origin.
    """
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    grid = w.grid
    origin = (0.0,) * grid.dim
    k1, k2 = grid.time_index(t1), grid.time_index(t2)
    psi = log_weight(np.maximum(w.values - k, 0.0), nu, eta0)
    unit = spatial_mask(grid, origin, 1.0)
    inner = spatial_mask(grid, origin, s_radius)
    space_cell = grid.h**grid.dim
    lhs = float(np.sum(psi[k2][inner] ** 2) * space_cell)
    start = float(np.sum(psi[k1][unit] ** 2) * space_cell)
    bulk = float(np.sum(psi[k1 + 1 : k2 + 1][:, unit]) * grid.cell) / (1 - s_radius) ** 2
    excess = lhs - start
    if excess <= 0:
        c, vac = 0.0, bulk == 0
    else:
        c, vac = _ratio(excess, bulk)
    return Balance(lhs, start + c * bulk, c, vac, {"initial": start, "bulk": bulk})


def derivative_energy_check(w: GridFunction, k: float, cutoff: CutoffFunction, t0: float, t1: float) -> Balance:
    """Smallest ``C`` with ``sup int (w-k)_+^2 zeta^2 + int |grad (w-k)_+|^2 zeta^2``
    bounded by ``int_{t0} (w-k)_+^2 zeta^2 + C (int (w-k)_+^2 |grad zeta|^2 + int (w-k)_+^2 zeta |zeta_t|)``.
    """
    grid = w.grid
    k0, k1 = grid.time_index(t0), grid.time_index(t1)
    excess = np.maximum(w.values - k, 0.0)
    zeta = cutoff.values
    space_cell = grid.h**grid.dim
    axes = tuple(range(1, grid.dim + 1))
    slices = np.sum(excess**2 * zeta**2, axis=axes) * space_cell
    window = slice(k0 + 1, k1 + 1)
    sup_term = float(np.max(slices[window], initial=0.0))
    gx = discrete_gradient(GridFunction(grid, excess)).values
    grad_term = float(np.sum((np.sum(gx**2, axis=-1) * zeta**2)[window]) * grid.cell)
    initial = float(slices[k0])
    r1 = float(np.sum((excess**2 * np.sum(cutoff.grad**2, axis=-1))[window]) * grid.cell)
    r2 = float(np.sum((excess**2 * zeta * np.abs(cutoff.dtime))[window]) * grid.cell)
    lhs = sup_term + grad_term
    c, vac = _ratio(lhs - initial, r1 + r2)
    terms = {"sup": sup_term, "grad": grad_term, "initial": initial, "cutoff_grad": r1, "cutoff_time": r2}
    return Balance(lhs, initial + c * (r1 + r2), c, vac, terms)
