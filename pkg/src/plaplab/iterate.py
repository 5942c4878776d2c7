"""Level-set iterations for sup bounds of the gradient magnitude.

Exponent triples, the closed-form bound constants, the two numeric iteration
lemmas and the traced first/second iterations on grid data.  All large
quantities are assembled in log space so bounds that overflow a double are
reported as ``inf`` instead of raising.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import level, shrinking_radius
from .mesh import GridFunction, ParabolicCylinder, cylinder_mask

MODES = ("unified", "degenerate", "singular")
N_MAX = 40
Y_TOL = 1e-14


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def floor_one(x: float) -> float:
    """The ``x ∧ 1`` convention, read as ``max(x, 1)``."""
    return max(x, 1.0)


# ------------------------------------------------------------------ exponents


@dataclass(frozen=True)
class ExponentSet:
    mode: str
    alpha: float
    beta: float
    gamma: float

    @property
    def power(self) -> float:
        """Integrand exponent ``alpha + beta + 2 - gamma`` of the level-set integrals."""
        return self.alpha + self.beta + 2 - self.gamma


def critical_p(dim: int) -> float:
    return 2 * dim / (dim + 2)


def choose_exponents(mode: str, p: float, dim: int) -> ExponentSet:
    lower = critical_p(dim)
    if mode == "unified":
        if not p > lower:
            raise ValueError(f"unified mode needs p > {lower}")
        g = 4 / (dim + 2)
        out = ExponentSet(mode, g, p - 1 + g, g)
        assert p - 2 + out.gamma > 0
    elif mode == "degenerate":
        if p < 2:
            raise ValueError("degenerate mode needs p >= 2")
        out = ExponentSet(mode, 0.0, p - 1, 0.0)
    elif mode == "singular":
        if not lower < p <= 2:
            raise ValueError(f"singular mode needs {lower} < p <= 2")
        out = ExponentSet(mode, 2 - p, 1.0, 2 - p)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    assert out.alpha >= out.gamma and out.beta >= 1
    return out


# ------------------------------------------------------------------ constants


@dataclass(frozen=True)
class BoundConstants:
    dim: int
    p: float
    exponents: ExponentSet
    B: float
    Sigma: float
    A: float
    X: float
    rho: float
    theta: float
    sigma: float
    eps: float
    C1: float

    @property
    def mode(self) -> str:
        return self.exponents.mode

    @property
    def sup_power(self) -> float:
        """Exponent of ``sup v`` in the first-iteration recursion."""
        return {"unified": self.p + self.exponents.gamma, "degenerate": self.p - 2,
                "singular": 2 - self.p}[self.mode]

    @property
    def effective_eps(self) -> float:
        """Offset entering the second iteration, ``alpha = 2 e / X``."""
        return self.eps + self.p - 2 if self.mode == "singular" else self.eps

    @property
    def integrand_power(self) -> float:
        """Exponent of ``v`` in the integral controlling the final bound."""
        return {"unified": self.p + self.eps, "degenerate": self.p - 2 + self.eps,
                "singular": self.eps}[self.mode]


def default_eps(mode: str, p: float) -> float:
    """Interior points of the admissible ranges; the singular default is the midpoint."""
    if mode == "singular":
        return 0.5 * ((2 - p) + 3)
    return 0.5 if mode == "unified" else 1.0


def _check_eps(mode, p, eps):
    if mode == "unified" and not 0 < eps <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if mode == "degenerate" and not 0 < eps <= 2:
        raise ValueError("epsilon must lie in (0, 2]")
    if mode == "singular" and not 2 - p < eps <= 3:
        raise ValueError("epsilon must lie in (2 - p, 3]")


def x_exponent(mode: str, p: float, dim: int, gamma: float, literal: bool = False) -> float:
    if mode == "unified":
        return p * dim + 4 + 2 * (p + 1 + gamma)
    if mode == "degenerate":
        return dim * (p - 2) + 2 * (p + 1)
    return 6 + p * (dim + 2) if literal else (2 - p) * dim + 6


def bound_constants(dim: int, p: float, exponents: ExponentSet, rho: float, theta: float,
                    sigma: float = 0.5, eps: float | None = None, C1: float = 1.0,
                    literal: bool = False) -> BoundConstants:
    """Closed-form constants for the given exponent triple.

    ``literal=True`` uses ``6 + p (N+2)`` for the singular X; the default keeps
    ``Sigma * X = N + 2``.
    """
    if not 0 < sigma < 1:
        raise ValueError("sigma must lie in (0, 1)")
    mode = exponents.mode
    eps = default_eps(mode, p) if eps is None else eps
    _check_eps(mode, p, eps)
    g = exponents.gamma
    q = exponents.power
    b_const = 2.0 ** (p + 2 + g - 2 * q / (dim + 2))
    x = x_exponent(mode, p, dim, g, literal)
    sig = (dim + 2) / x_exponent(mode, p, dim, g)
    a_const = 2.0**g / rho**2 + 2.0 ** (p + g - 2) / theta
    return BoundConstants(dim, p, exponents, b_const, sig, a_const, x, rho, theta, sigma, eps, C1)


# ------------------------------------------------------------------ iteration lemmas


@dataclass(frozen=True)
class GeometricRun:
    threshold: float
    sequence: np.ndarray
    converged: bool
    diverged: bool


def geometric_threshold(C: float, b: float, alpha: float) -> float:
    return C ** (-1 / alpha) * b ** (-1 / alpha**2)


def fast_geometric(C: float, b: float, alpha: float, X0: float, n_max: int = N_MAX) -> GeometricRun:
    """Run the extremal recursion ``X_{n+1} = C b^n X_n^(1+alpha)`` in log space."""
    if not (C > 1 and b > 1 and alpha > 0 and X0 > 0):
        raise ValueError("need C, b > 1, alpha > 0 and X0 > 0")
    logs = np.empty(n_max + 1)
    logs[0] = math.log(X0)
    lc, lb = math.log(C), math.log(b)
    for n in range(n_max):
        logs[n + 1] = lc + n * lb + (1 + alpha) * logs[n]
    with np.errstate(over="ignore"):
        seq = np.exp(logs)
    return GeometricRun(geometric_threshold(C, b, alpha), seq, bool(seq[-1] < 1e-12),
                        bool(not np.isfinite(seq[-1]) or seq[-1] > 1e300))


def bounded_recursive(C: float, b: float, alpha: float) -> float:
    """Bound on ``Y_0`` for equibounded ``Y_n <= C b^n Y_{n+1}^(1-alpha)``."""
    if not (C > 1 and b > 1 and 0 < alpha < 1):
        raise ValueError("need C, b > 1 and 0 < alpha < 1")
    return _exp(_log_bounded_recursive(math.log(C), math.log(b), alpha))


def _log_bounded_recursive(log_c, log_b, alpha):
    return (math.log(2) + log_c + (1 / alpha - 1) * log_b) / alpha


def admissible_sequence(C: float, b: float, alpha: float, length: int, rng: np.random.Generator,
                        tail_max: float = 1e3) -> np.ndarray:
    """Random equibounded sequence obeying ``Y_n <= C b^n Y_{n+1}^(1-alpha)``.

    It is built backwards from a random tail value and continued as a constant
    beyond ``length``, which stays admissible since ``C b^n`` grows.
    """
    y = np.empty(length)
    # the constant continuation needs tail^alpha <= C b^(length-1)
    cap = min(tail_max, _exp((math.log(C) + (length - 1) * math.log(b)) / alpha))
    y[-1] = min(rng.uniform(0.0, cap) ** rng.uniform(0.2, 1.0) + 1e-300, cap)
    assert y[-1] ** alpha <= C * b ** (length - 1)
    for n in range(length - 2, -1, -1):
        y[n] = rng.uniform(0.0, 1.0) ** rng.uniform(0.0, 0.2) * C * b**n * y[n + 1] ** (1 - alpha)
    return y


# ------------------------------------------------------------------ first iteration


def _anchor(v: GridFunction, center, t0):
    grid = v.grid
    if center is None:
        center = tuple(0.5 * (lo + hi) for lo, hi in grid.spatial_box)
    if t0 is None:
        t0 = grid.time_interval[1]
    return tuple(np.atleast_1d(center).astype(float)), float(t0)


def _cyl(center, t0, r, th, backward):
    return ParabolicCylinder.standard(center, t0, r, th, backward)


def _power_integral(v: GridFunction, mask: np.ndarray, level_value: float, q: float) -> float:
    vals = v.values[mask]
    excess = vals[vals > level_value] - level_value
    return math.fsum(excess**q) * v.grid.cell


@dataclass
class StepRecord:
    n: int
    k_n: float
    rho_n: float
    theta_n: float
    rho_tilde: float
    theta_tilde: float
    Y_n: float
    step_constant: float = math.nan


@dataclass
class DeGiorgiTrace:
    k: float
    steps: list
    empirical_constant: float
    converged: bool
    sup_inner: float
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "k_n", "rho_n", "theta_n", "Y_n", "step_constant"])
            for s in self.steps:
                w.writerow([s.n, repr(s.k_n), repr(s.rho_n), repr(s.theta_n), repr(s.Y_n), repr(s.step_constant)])


def degiorgi_first(v: GridFunction, constants: BoundConstants, k: float, center=None, t0=None,
                   backward: bool = True, n_max: int = N_MAX, tol: float = Y_TOL) -> DeGiorgiTrace:
    """Trace ``Y_n`` over the shrinking cylinders and the smallest step constant.

    The step constant at ``n`` is ``Y_{n+1}`` divided by
    ``B^n k^(-X/(N+2)) (1-sigma)^-2 (sup v)^e Y_n^(1+2/(N+2)) A``.
    """
    if np.any(v.values < 0):
        raise ValueError("v must be nonnegative")
    c = constants
    center, t0 = _anchor(v, center, t0)
    rho, theta, sigma, n_dim = c.rho, c.theta, c.sigma, c.dim
    q = c.exponents.power
    outer = cylinder_mask(v.grid, _cyl(center, t0, rho, theta, backward))
    sup_v = float(np.max(v.values[outer], initial=0.0))
    inner = cylinder_mask(v.grid, _cyl(center, t0, sigma * rho, sigma * theta, backward))
    sup_inner = float(np.max(v.values[inner], initial=0.0))
    log_fixed = (math.log(c.C1) - c.X / (n_dim + 2) * math.log(k) - 2 * math.log(1 - sigma)
                 + math.log(c.A) + (c.sup_power * math.log(sup_v) if sup_v > 0 else -math.inf))
    steps = []
    worst = 0.0
    converged = False
    for n in range(n_max + 1):
        r_n, th_n = shrinking_radius(rho, sigma, n), shrinking_radius(theta, sigma, n)
        r_t = 0.5 * (r_n + shrinking_radius(rho, sigma, n + 1))
        th_t = 0.5 * (th_n + shrinking_radius(theta, sigma, n + 1))
        mask = cylinder_mask(v.grid, _cyl(center, t0, r_n, th_n, backward))
        y = _power_integral(v, mask, level(k, n), q)
        steps.append(StepRecord(n, level(k, n), r_n, th_n, r_t, th_t, y))
        if n > 0:
            prev = steps[n - 1].Y_n
            if y > 0:
                denom = log_fixed + (n - 1) * math.log(c.B) + (1 + 2 / (n_dim + 2)) * math.log(prev)
                sc = _exp(math.log(y) - denom)
            else:
                sc = 0.0
            steps[n - 1].step_constant = sc
            worst = max(worst, sc)
        if y < tol:
            converged = True
            break
    return DeGiorgiTrace(k, steps, worst, converged, sup_inner, {"sup_v": sup_v, "mode": c.mode})


def choose_k(v: GridFunction, constants: BoundConstants, center=None, t0=None, backward: bool = True) -> float:
    """Level making the first iteration converge, floored at 1."""
    c = constants
    center, t0 = _anchor(v, center, t0)
    mask = cylinder_mask(v.grid, _cyl(center, t0, c.rho, c.theta, backward))
    vals = v.values[mask]
    y0 = math.fsum(vals[vals > 0] ** c.exponents.power) * v.grid.cell
    sup_v = float(np.max(vals, initial=0.0))
    if y0 == 0 or sup_v == 0:
        return 1.0
    n2 = c.dim + 2
    log_bracket = (n2 / 2 * math.log(c.B) + 2 / n2 * math.log(y0) + math.log(c.C1 * c.A)
                   - 2 * math.log(1 - c.sigma) + c.sup_power * math.log(sup_v))
    return floor_one(_exp(c.Sigma * log_bracket))


# ------------------------------------------------------------------ final bounds


def log_bracket(integral: float, constants: BoundConstants) -> float:
    """Log of ``B^((N+2)/2) I^(2/(N+2)) C1 A / (1 - sigma)^2``."""
    c = constants
    if integral <= 0:
        return -math.inf
    n2 = c.dim + 2
    return (n2 / 2 * math.log(c.B) + 2 / n2 * math.log(integral) + math.log(c.C1 * c.A)
            - 2 * math.log(1 - c.sigma))


def log_general_bound(integral: float, constants: BoundConstants) -> float:
    c = constants
    e = c.effective_eps
    lb = log_bracket(integral, c)
    if lb == -math.inf:
        return 0.0
    head = (math.log(2) / c.Sigma + lb) * c.X * c.Sigma / (2 * e)
    tail = c.Sigma * math.log(4) * c.X * (c.X - 2 * e) / (4 * e * e)
    return max(head + tail, 0.0)


def general_bound(integral: float, constants: BoundConstants) -> float:
    """Final sup bound for any mode's constants, including the floor at 1."""
    return floor_one(_exp(log_general_bound(integral, constants)))


def lipschitz_bound(v_integral: float, sigma: float, rho: float, theta: float, eps: float,
                    dim: int, p: float, C1: float) -> float:
    if not (0 < eps < 1 and 0 < sigma < 1):
        raise ValueError("need epsilon and sigma in (0, 1)")
    c = bound_constants(dim, p, choose_exponents("unified", p, dim), rho, theta, sigma, eps, C1)
    return general_bound(v_integral, c)


def degenerate_bound(v_integral: float, sigma: float, rho: float, theta: float, eps: float,
                     dim: int, p: float, C1: float) -> float:
    """``v_integral`` is the integral of ``v^(p-2+eps)``."""
    c = bound_constants(dim, p, choose_exponents("degenerate", p, dim), rho, theta, sigma, eps, C1)
    return general_bound(v_integral, c)


def singular_bound(v_integral: float, sigma: float, rho: float, theta: float, eps: float,
                   dim: int, p: float, C1: float, literal: bool = False) -> float:
    """``v_integral`` is the integral of ``v^eps``."""
    c = bound_constants(dim, p, choose_exponents("singular", p, dim), rho, theta, sigma, eps, C1, literal)
    return general_bound(v_integral, c)


def bound_for(v: GridFunction, constants: BoundConstants, center=None, t0=None, backward: bool = False):
    """Measured ``sup`` over the inner cylinder and the mode's bound for it."""
    c = constants
    center, t0 = _anchor(v, center, t0)
    outer = cylinder_mask(v.grid, _cyl(center, t0, c.rho, c.theta, backward))
    inner = cylinder_mask(v.grid, _cyl(center, t0, c.sigma * c.rho, c.sigma * c.theta, backward))
    vals = v.values[outer]
    integral = math.fsum(vals[vals > 0] ** c.integrand_power) * v.grid.cell
    return float(np.max(v.values[inner], initial=0.0)), general_bound(integral, c), integral


# ------------------------------------------------------------------ second iteration


@dataclass
class SecondIteration:
    M: np.ndarray
    radii: np.ndarray
    recursion_rhs: np.ndarray
    recursion_holds: bool
    final_bound: float
    lipschitz: float


def growing_radius(r: float, sigma: float, n: int) -> float:
    return sigma * r + (1 - sigma) * r * (1 - 2.0**-n)


def second_iteration(v: GridFunction, constants: BoundConstants, center=None, t0=None,
                     backward: bool = True, n_max: int = N_MAX) -> SecondIteration:
    """Sup over growing cylinders, the recursion between neighbours, and the iterated bound."""
    c = constants
    center, t0 = _anchor(v, center, t0)
    full = cylinder_mask(v.grid, _cyl(center, t0, c.rho, c.theta, backward))
    vals = v.values[full]
    integral = math.fsum(vals[vals > 0] ** c.integrand_power) * v.grid.cell
    e = c.effective_eps
    m = np.empty(n_max + 1)
    radii = np.empty(n_max + 1)
    for n in range(n_max + 1):
        r, th = growing_radius(c.rho, c.sigma, n), growing_radius(c.theta, c.sigma, n)
        radii[n] = r
        mask = cylinder_mask(v.grid, _cyl(center, t0, r, th, backward))
        m[n] = float(np.max(v.values[mask], initial=0.0))
    lb = log_bracket(integral, c)
    rhs = np.empty(n_max)
    for n in range(n_max):
        if lb == -math.inf or m[n + 1] == 0:
            rhs[n] = 1.0
        else:
            log_r = 2 * n * c.Sigma * math.log(2) + (1 - 2 * e / c.X) * math.log(m[n + 1]) + c.Sigma * lb
            rhs[n] = floor_one(_exp(log_r))
    holds = bool(np.all(m[:-1] <= rhs))
    if lb == -math.inf:
        final = 1.0
    else:
        final = floor_one(_exp(_log_bounded_recursive(c.Sigma * lb, c.Sigma * math.log(4), 2 * e / c.X)))
    lip = general_bound(integral, c)
    if math.isfinite(final) and math.isfinite(lip):
        assert math.isclose(final, lip, rel_tol=1e-9), (final, lip)
    return SecondIteration(m, radii, rhs, holds, final, lip)


# ------------------------------------------------------------------ rough bound


@dataclass
class RoughRecursion:
    E: float
    D: float
    B1_empirical: float
    threshold: float
    threshold_met: bool
    converged: bool
    trace: DeGiorgiTrace


def rough_constants(dim: int, p: float, exponents: ExponentSet) -> tuple:
    a, b, g = exponents.alpha, exponents.beta, exponents.gamma
    e_const = ((p - 2 + g) * dim + 2 * (a + b + 2)) / (dim + 2)
    d_const = 2.0 ** (2 + 2 * (a + b + 2 - g) / (dim + 2))
    return e_const, d_const


def rough_lipschitz_recursion(v: GridFunction, constants: BoundConstants, k: float, center=None, t0=None,
                              backward: bool = True, n_max: int = N_MAX) -> RoughRecursion:
    """Measure the smallest ``B1`` with ``Y_{n+1} <= B1 k^-E Y_n^(1+1/(N+2)) D^n``."""
    c = constants
    e_const, d_const = rough_constants(c.dim, c.p, c.exponents)
    trace = degiorgi_first(v, c, k, center, t0, backward, n_max)
    n2 = c.dim + 2
    b1 = 0.0
    ys = [s.Y_n for s in trace.steps]
    for n in range(len(ys) - 1):
        if ys[n + 1] > 0:
            b1 = max(b1, ys[n + 1] * k**e_const / (ys[n] ** (1 + 1 / n2) * d_const**n))
    b1_eff = max(b1, 1.0 + 1e-12)
    log_thr = -n2 * (math.log(b1_eff) - e_const * math.log(k)) - n2 * n2 * math.log(d_const)
    threshold = _exp(log_thr)
    return RoughRecursion(e_const, d_const, b1, threshold, ys[0] <= threshold, trace.converged, trace)
