"""Intrinsic cylinder chains, the two gradient alternatives and the derivative-level De Giorgi steps.

Cylinders ``Q_R^mu(z)`` are ``B_{R/mu}(x) x (t - mu^-p R^2, t + mu^-p R^2)``.
Unit cylinders ``Q_rho`` are ``B_rho(0) x (-rho^2, rho^2)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.stats import qmc

from .calculus import CutoffFunction, derivative_energy_check, levelset_poincare, log_estimate_check
from .iterate import geometric_threshold
from .mesh import (
    GridFunction,
    OffGridError,
    ParabolicCylinder,
    SpaceTimeGrid,
    cylinder_mask,
    cylinder_values,
    parabolic_distance,
    spatial_mask,
)

_REL = 1e-12


class HypothesisError(ValueError):
    """A field violates the standing hypothesis of a routine."""


class EllipticityError(ValueError):
    pass


@dataclass(frozen=True)
class CoveringParams:
    p: float = 2.0
    dim: int = 1
    nu: float = 0.1
    kappa: float = 0.5
    delta: float = 0.5
    sigma: float = 0.5
    eta: float = 0.75
    A: float = 1.0
    s: float = 0.0
    alpha2_literal: bool = False

    def __post_init__(self):
        if not 0 < self.nu < 0.5:
            raise ValueError("nu must lie in (0, 1/2)")
        for name in ("kappa", "delta", "sigma", "eta"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.A < 1:
            raise ValueError("A must be at least 1")
        if not 0 <= self.s <= 1:
            raise ValueError("s must lie in [0, 1]")
        if self.p <= 1 or self.dim < 1:
            raise ValueError("need p > 1 and dim >= 1")

    @property
    def c0(self) -> float:
        return contraction_factor(self.eta, self.sigma, self.p)

    @property
    def alpha1(self) -> float:
        return math.log(self.eta) / math.log(self.c0)

    @property
    def alpha2(self) -> float:
        if self.alpha2_literal:
            return math.log(self.delta) / math.log(self.eta)
        return math.log(self.kappa) / math.log(self.delta)

    @property
    def alpha3(self) -> float:
        return min(self.alpha1, self.alpha2 / 2)


def contraction_factor(eta: float, sigma: float, p: float) -> float:
    return 0.5 * sigma * min(eta, eta ** (p / 2))


def intrinsic_cylinder(center, t0: float, R: float, mu: float, p: float) -> ParabolicCylinder:
    return ParabolicCylinder.scaled(np.atleast_1d(np.asarray(center, dtype=float)), t0, R, mu, p)


def unit_cylinder(dim: int, rho: float = 1.0) -> ParabolicCylinder:
    return ParabolicCylinder(np.zeros(dim), 0.0, rho, rho * rho)


def unit_grid(dim: int, h: float = 1 / 16, dt: float = 1 / 64) -> SpaceTimeGrid:
    """Grid over ``[-1, 1]^dim x [-1, 1]``, the home of every rescaled field."""
    return SpaceTimeGrid(dim, h, dt, tuple((-1.0, 1.0) for _ in range(dim)), (-1.0, 1.0))


def _inside_grid(grid: SpaceTimeGrid, cyl: ParabolicCylinder) -> bool:
    lo, hi = cyl.time_bounds
    t_lo, t_hi = grid.time_interval
    tol_t, tol_x = 1e-9 * grid.dt, 1e-9 * grid.h
    if lo < t_lo - tol_t or hi > t_hi + tol_t:
        return False
    return all(b0 - tol_x <= c - cyl.radius and c + cyl.radius <= b1 + tol_x
               for c, (b0, b1) in zip(cyl.center, grid.spatial_box))


# ------------------------------------------------------------------ inclusion and chains


def check_inclusion(eta: float, sigma: float, p: float, mu: float = 1.0, R: float = 1.0, c0=None) -> bool:
    """Whether ``Q_{c0 R}^{eta mu}`` sits inside ``Q_{sigma R}^mu`` (radius comparisons only)."""
    if not (0 < eta < 1 and 0 < sigma < 1 and p > 1 and mu > 0 and R > 0):
        raise ValueError("parameters out of range")
    c0 = contraction_factor(eta, sigma, p) if c0 is None else c0
    # radius c0 R/(eta mu) <= sigma R/mu and time (eta mu)^-p c0^2 R^2 <= mu^-p sigma^2 R^2
    return c0 <= eta * sigma and c0 * c0 <= eta**p * sigma * sigma


def inclusion_by_nodes(eta: float, sigma: float, p: float, mu: float = 1.0, R: float = 1.0, c0=None,
                       resolution: int = 40) -> bool:
    """Node-set version of ``check_inclusion`` on a grid sized to the larger cylinder."""
    c0 = contraction_factor(eta, sigma, p) if c0 is None else c0
    inner = intrinsic_cylinder([0.0], 0.0, c0 * R, eta * mu, p)
    outer = intrinsic_cylinder([0.0], 0.0, sigma * R, mu, p)
    reach = max(inner.radius, outer.radius)
    span_t = max(inner.half_time, outer.half_time)
    h = reach / resolution
    dt = span_t / resolution
    m = resolution + 5
    grid = SpaceTimeGrid(1, h, dt, ((-m * h, m * h),), (-m * dt, m * dt))
    a = cylinder_mask(grid, inner)
    b = cylinder_mask(grid, outer)
    return bool(np.all(b[a]))


@dataclass
class CylinderChain:
    center: tuple
    t0: float
    S: float
    mu0: float
    c0: float
    eta: float
    p: float
    radii: np.ndarray
    levels: np.ndarray
    alpha1: float
    residual: float

    def __len__(self):
        return len(self.radii)

    def cylinder(self, n: int) -> ParabolicCylinder:
        return intrinsic_cylinder(self.center, self.t0, self.radii[n], self.levels[n], self.p)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "R_n", "mu_n", "spatial_radius", "half_time"])
            for n in range(len(self)):
                cyl = self.cylinder(n)
                w.writerow([n, repr(self.radii[n]), repr(self.levels[n]), repr(cyl.radius), repr(cyl.half_time)])


def gradient_scale(grad_mag: GridFunction, center, t0: float, R0: float) -> float:
    """``max(1, sup |grad u|)`` over ``4 Q0``, clipped to the grid."""
    big = ParabolicCylinder(np.atleast_1d(np.asarray(center, dtype=float)), t0, 4 * R0, 16 * R0 * R0)
    vals = cylinder_values(grad_mag, big)
    return max(1.0, float(np.max(vals, initial=0.0)))


def initial_radius(mu0: float, R0: float, p: float) -> float:
    return R0 * min(mu0, mu0 ** (p / 2))


def chain(center, t0: float, S: float, mu0: float, params: CoveringParams, n_max: int = 50) -> CylinderChain:
    if S <= 0 or mu0 < 1:
        raise ValueError("need S > 0 and mu0 >= 1")
    c0 = params.c0
    n = np.arange(n_max + 1)
    radii = S * c0**n
    levels = mu0 * params.eta**n
    a1 = params.alpha1
    residual = float(np.max(np.abs(params.eta**n - (radii / S) ** a1)))
    return CylinderChain(tuple(np.atleast_1d(np.asarray(center, dtype=float))), t0, S, mu0, c0,
                         params.eta, params.p, radii, levels, a1, residual)


# ------------------------------------------------------------------ alternatives and switching


@dataclass(frozen=True)
class Alternative:
    measure_small: bool
    s_ok: bool
    fraction: float
    nodes: int


def measure_alternative(grad_mag: GridFunction, cyl: ParabolicCylinder, mu: float, nu: float, s: float) -> Alternative:
    """Fraction of ``cyl`` where ``|grad u| < mu/2`` compared with ``nu``; plus ``s <= mu``."""
    vals = cylinder_values(grad_mag, cyl)
    if vals.size == 0:
        raise OffGridError("cylinder contains no grid nodes")
    small = int(np.count_nonzero(vals < mu / 2))
    frac = small / vals.size
    return Alternative(frac < nu, s <= mu, frac, int(vals.size))


@dataclass
class SwitchingRecord:
    n0: int
    reason: str
    fraction: float
    mu: float
    R: float
    trace: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "fraction", "measure_small", "s_ok", "nodes"])
            for row in self.trace:
                w.writerow(row)


def switching_radius(grad_mag: GridFunction, ch: CylinderChain, nu: float, s: float) -> SwitchingRecord:
    """First ``n >= 1`` at which the second-alternative hypothesis stops holding."""
    trace = []
    last = len(ch) - 1
    for n in range(1, len(ch)):
        cyl = ch.cylinder(n)
        try:
            alt = measure_alternative(grad_mag, cyl, ch.levels[n], nu, s)
        except OffGridError:
            return SwitchingRecord(n, "unresolved", float("nan"), ch.levels[n], ch.radii[n], trace)
        trace.append([n, alt.fraction, alt.measure_small, alt.s_ok, alt.nodes])
        if alt.measure_small or not alt.s_ok:
            reason = "both" if alt.measure_small and not alt.s_ok else (
                "measure_fails" if alt.measure_small else "s_exceeds")
            return SwitchingRecord(n, reason, alt.fraction, ch.levels[n], ch.radii[n], trace)
    return SwitchingRecord(last, "exhausted", trace[-1][1] if trace else float("nan"),
                           ch.levels[last], ch.radii[last], trace)


# ------------------------------------------------------------------ sampling on reference cylinders


class FieldSampler:
    """Piecewise-linear interpolation of a grid function at arbitrary space-time points."""

    def __init__(self, f: GridFunction):
        grid = f.grid
        self.grid = grid
        self.vector = f.is_vector
        axes = (grid.times,) + tuple(grid.axis(i) for i in range(grid.dim))
        values = f.values if f.is_vector else f.values[..., None]
        self._lo = np.array([a[0] for a in axes])
        self._hi = np.array([a[-1] for a in axes])
        self._tol = np.array([grid.dt] + [grid.h] * grid.dim) * 1e-9
        self._interp = RegularGridInterpolator(axes, values, method="linear", bounds_error=True)

    def __call__(self, xs, ts) -> np.ndarray:
        xs = np.asarray(xs, dtype=float).reshape(-1, self.grid.dim)
        ts = np.broadcast_to(np.asarray(ts, dtype=float), (xs.shape[0],))
        pts = np.column_stack([ts, xs])
        if np.any(pts < self._lo - self._tol) or np.any(pts > self._hi + self._tol):
            raise OffGridError("interpolation point outside the source domain")
        out = self._interp(np.clip(pts, self._lo, self._hi))
        return out if self.vector else out[:, 0]


def reference_points(dim: int, n_space: int = 20, n_time: int = 16):
    """Cell-centred points of the unit ball times ``(-1, 1)``, equal weights."""
    c = -1 + (np.arange(n_space) + 0.5) * 2 / n_space
    mesh = np.stack(np.meshgrid(*([c] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    mesh = mesh[np.sum(mesh**2, axis=1) < 1]
    tau = -1 + (np.arange(n_time) + 0.5) * 2 / n_time
    xi = np.tile(mesh, (n_time, 1))
    tt = np.repeat(tau, len(mesh))
    return xi, tt


def _cylinder_sample(sampler: FieldSampler, cyl: ParabolicCylinder, ref) -> np.ndarray:
    xi, tau = ref
    lo, hi = cyl.time_bounds
    xs = np.asarray(cyl.center) + cyl.radius * xi
    ts = lo + (tau + 1) / 2 * (hi - lo)
    return sampler(xs, ts)


def _mean_and_osc(values: np.ndarray):
    vals = values.reshape(len(values), -1)
    avg = vals.mean(axis=0)
    osc = float(np.mean(np.sum((vals - avg) ** 2, axis=1)))
    return avg, osc


def _resolved(grid: SpaceTimeGrid, cyl: ParabolicCylinder, factor: float = 2.0) -> bool:
    return cyl.radius >= factor * grid.h and cyl.half_time >= factor * grid.dt


# ------------------------------------------------------------------ oscillation decay


@dataclass
class OscillationTrace:
    osc: list
    integrals: list
    step_holds: list
    mean_holds: list
    kappa_measured: float
    usable: int
    stop_reason: str

    @property
    def holds(self) -> bool:
        return all(self.step_holds) and all(self.mean_holds)


def oscillation_decay(grad: GridFunction, cyl: ParabolicCylinder, mu: float, params: CoveringParams,
                      i_max: int = 8, ref=None) -> OscillationTrace:
    """Mean oscillations of ``grad u`` on ``Q_{delta^i R}^mu`` for ``i = 0..i_max``."""
    if not grad.is_vector:
        raise ValueError("grad must be a vector field")
    local = cylinder_values(grad, cyl)
    if local.size and float(np.max(np.linalg.norm(local, axis=-1))) > mu * (1 + 1e-9):
        raise HypothesisError("sup |grad u| exceeds mu on the starting cylinder")
    ref = ref or reference_points(grad.grid.dim)
    sampler = FieldSampler(grad)
    d, N = params.delta, grad.grid.dim
    osc, integ = [], []
    stop = "i_max"
    for i in range(i_max + 1):
        ci = ParabolicCylinder(cyl.center, cyl.t0, cyl.radius * d**i, cyl.half_time * d ** (2 * i), cyl.backward)
        if not _inside_grid(grad.grid, ci):
            stop = "off_grid"
            break
        if not _resolved(grad.grid, ci, 1.0):
            stop = "resolution"
            break
        _, o = _mean_and_osc(_cylinder_sample(sampler, ci, ref))
        osc.append(o)
        integ.append(o * ci.volume())
    step, mean = [], []
    ratios = []
    for i, o in enumerate(osc):
        mean.append(o <= params.kappa**i * mu * mu * (1 + _REL))
        if i + 1 < len(osc):
            step.append(integ[i + 1] <= params.kappa * d ** (N + 2) * integ[i] * (1 + _REL) + 1e-300)
            if o > 0:
                ratios.append(osc[i + 1] / o)
    kappa = max(ratios) if ratios else 0.0
    return OscillationTrace(osc, integ, step, mean, kappa, len(osc), stop)


# ------------------------------------------------------------------ Cauchy-average consequences


@dataclass
class CauchyReport:
    constants: dict
    holds: dict
    samples: dict
    flagged: int

    def as_dict(self) -> dict:
        return {"constants": self.constants, "holds": self.holds, "samples": self.samples, "flagged": self.flagged}


def _bracket_index(rho: float, R: float, delta: float) -> int:
    """Smallest ``i`` with ``delta^i R <= rho``; then ``rho <= delta^(i-1) R`` too."""
    return max(0, math.ceil(math.log(rho / R) / math.log(delta) - 1e-12))


def cauchy_consequences(grad: GridFunction, ch: CylinderChain, n0: int, params: CoveringParams,
                        i_max: int = 8, rho_samples: int = 12, ref=None) -> CauchyReport:
    """Empirical constants of the five consequences of the averaged oscillation decay."""
    grid = grad.grid
    N = grid.dim
    ref = ref or reference_points(N)
    sampler = FieldSampler(grad)
    mu, R = float(ch.levels[n0]), float(ch.radii[n0])
    kap, d = params.kappa, params.delta
    g0 = sampler(np.asarray(ch.center)[None], ch.t0)[0]
    flagged = 0

    def average(rho, level):
        cyl = intrinsic_cylinder(ch.center, ch.t0, rho, level, params.p)
        if not (_inside_grid(grid, cyl) and _resolved(grid, cyl)):
            return None
        return _mean_and_osc(_cylinder_sample(sampler, cyl, ref))

    avgs = []
    for i in range(i_max + 1):
        got = average(R * d**i, mu)
        if got is None:
            break
        avgs.append(got[0])
    if not avgs:
        raise OffGridError("no resolved cylinder at the switching radius")
    scale = [kap**i * mu * mu for i in range(len(avgs))]

    c1 = [float(np.sum((avgs[i + 1] - avgs[i]) ** 2)) for i in range(len(avgs) - 1)]
    holds1 = all(v <= 2 * scale[i] * (kap + d ** (-(N + 2))) * (1 + _REL) for i, v in enumerate(c1))
    C1 = max((v / scale[i] for i, v in enumerate(c1)), default=0.0)
    C2 = max(float(np.sum((g0 - a) ** 2)) / scale[i] for i, a in enumerate(avgs))

    inner = R * d ** np.linspace(0, len(avgs) - 1, rho_samples)
    C3 = 0.0
    for rho in inner:
        i = _bracket_index(rho, R, d)
        got = average(rho, mu)
        if got is None:
            flagged += 1
            continue
        C3 = max(C3, float(np.sum((g0 - got[0]) ** 2)) / (kap**i * mu * mu))

    S, mu0, a3 = ch.S, ch.mu0, params.alpha3
    rho_all = np.concatenate([inner, np.geomspace(R, S, rho_samples)])
    C4 = C5 = 0.0
    for rho in rho_all:
        if rho <= R:
            level = mu
        else:
            n = max(k for k in range(n0 + 1) if ch.radii[k] >= rho * (1 - 1e-12))
            level = float(ch.levels[n])
        got = average(rho, level)
        if got is None:
            flagged += 1
            continue
        ratio = (rho / S) ** a3
        C4 = max(C4, float(np.linalg.norm(g0 - got[0])) / (mu0 * ratio))
        C5 = max(C5, got[1] / (mu0 * mu0 * ratio * ratio))
    constants = {"C1": C1, "C2": C2, "C3": C3, "C4": C4, "C5": C5}
    holds = {"C1": bool(holds1)}
    holds.update({k: bool(np.isfinite(v)) for k, v in constants.items() if k != "C1"})
    samples = {"levels": len(avgs), "rho": int(len(rho_all))}
    return CauchyReport(constants, holds, samples, flagged)


# ------------------------------------------------------------------ Hoelder certificate


@dataclass
class HolderCertificate:
    alpha_fit: float
    alpha_raw: float
    worst_C: float
    a: float
    mu0: float
    S: float
    cases: dict
    bins: list
    dropped_bins: list
    excluded: int
    far_pairs: int
    far_ok: bool
    far_worst_ratio: float
    far_bound: float

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, default=float)


def case_exponent(kind: str, p: float, alpha3: float) -> float:
    """Power of ``mu0`` collected by each branch of the pair analysis (``mu0 >= 1``)."""
    if kind == "time":
        return 1 + alpha3 * max(0.0, p / 2 - 1)
    if kind == "space":
        return 1 + alpha3 * max(0.0, 1 - p / 2)
    if kind == "general":
        return 1 + alpha3 * abs(p / 2 - 1)
    if kind == "far":
        return 1 + abs(p / 2 - 1)
    raise ValueError(kind)


def _subcase(levels, radii, ns, rho, p, kind) -> str:
    scaled = []
    for n in ns:
        mu_n = levels[n]
        S_i = mu_n ** (p / 2) * rho if kind == "time" else mu_n * rho
        scaled.append(radii[n] / S_i)
    if min(scaled) >= 2:
        return "inner"
    if max(scaled) <= 2:
        return "outer"
    return "mixed"


def holder_certificate(grad: GridFunction, center, t0: float, R0: float, params: CoveringParams,
                       n_pairs: int = 256, seed: int = 0, mu0=None, S=None, n_bins: int = 6,
                       classify: bool = True) -> HolderCertificate:
    """Fit a gradient Hoelder exponent from stratified point pairs in ``Q0``."""
    grid = grad.grid
    N, p = grid.dim, params.p
    center = np.atleast_1d(np.asarray(center, dtype=float))
    mag = grad.magnitude()
    mu0 = gradient_scale(mag, center, t0, R0) if mu0 is None else mu0
    S = initial_radius(mu0, R0, p) if S is None else S
    sampler = FieldSampler(grad)
    lo_f, hi_f = min(mu0, mu0 ** (p / 2)), max(mu0, mu0 ** (p / 2))
    far_bound = 2 * mu0 / R0 * hi_f / lo_f
    floor = 2 * max(grid.h, math.sqrt(grid.dt))
    edges = R0 * 2.0 ** np.arange(-n_bins + 1, 2)  # distances up to 2 R0
    engine = qmc.Sobol(d=N + 3, scramble=True, seed=seed)
    draws = engine.random(n_pairs)
    kinds = ("time", "space", "general")
    cases: dict = {}
    per_bin: dict = {}
    pairs = []
    excluded = far_count = 0
    far_ok, far_worst = True, 0.0
    switch_cache: dict = {}

    def switch_at(x, t):
        key = (tuple(np.round(x, 12)), round(t, 12))
        if key not in switch_cache:
            ch = chain(x, t, S, mu0, params, n_max=20)
            switch_cache[key] = (switching_radius(mag, ch, params.nu, params.s).n0, ch)
        return switch_cache[key]

    for j, u in enumerate(draws):
        kind = kinds[j % 3]
        b = j % n_bins
        dist = edges[b] * 2.0 ** u[0]
        x0 = center + R0 * (2 * u[1 : 1 + N] - 1) / math.sqrt(N)
        s0 = t0 + R0 * R0 * (2 * u[1 + N] - 1)
        direction = np.zeros(N)
        direction[0] = 1.0
        if N > 1:
            ang = 2 * math.pi * u[2 + N]
            direction[:2] = [math.cos(ang), math.sin(ang)]
        sign = 1.0 if u[2 + N] < 0.5 else -1.0
        if kind == "time":
            dx, dt_ = np.zeros(N), sign * dist * dist
        elif kind == "space":
            dx, dt_ = dist * direction, 0.0
        else:
            dx, dt_ = dist * direction / math.sqrt(2), sign * dist * dist / 2
        x1, s1 = x0 + dx, s0 + dt_
        if np.linalg.norm(x1 - center) >= R0 or abs(s1 - t0) >= R0 * R0:
            x1, s1 = x0 - dx, s0 - dt_
        if np.linalg.norm(x1 - center) >= R0 or abs(s1 - t0) >= R0 * R0 or np.linalg.norm(x0 - center) >= R0:
            excluded += 1
            continue
        d = parabolic_distance((x0, s0), (x1, s1))
        if d <= 0:
            continue
        g = sampler(np.stack([x0, x1]), np.array([s0, s1]))
        diff = float(np.linalg.norm(g[0] - g[1]))
        q_box = intrinsic_cylinder(x0, s0, S, mu0, p)
        far = np.linalg.norm(x1 - x0) >= q_box.radius or abs(s1 - s0) >= q_box.half_time
        if far:
            far_count += 1
            ratio = diff / d
            far_worst = max(far_worst, ratio)
            far_ok = far_ok and ratio <= far_bound * (1 + 1e-12)
            label = "far"
            a_case = case_exponent("far", p, params.alpha3)
        else:
            clip = not (_inside_grid(grid, q_box) and _inside_grid(grid, intrinsic_cylinder(x1, s1, S, mu0, p)))
            if clip:
                excluded += 1
                continue
            label = kind
            a_case = case_exponent(kind, p, params.alpha3)
            if classify and kind in ("time", "space"):
                n_a, ch_a = switch_at(x0, s0)
                n_b, ch_b = switch_at(x1, s1)
                rho = math.sqrt(abs(s1 - s0)) if kind == "time" else float(np.linalg.norm(x1 - x0))
                sub = _subcase(ch_a.levels, ch_a.radii, [n_a, n_b], rho, p, kind)
                label = f"{kind}/{sub}"
        entry = cases.setdefault(label, {"count": 0, "worst_diff": 0.0, "a": a_case})
        entry["count"] += 1
        entry["worst_diff"] = max(entry["worst_diff"], diff)
        if not far:
            pairs.append((d, diff, a_case))
    a = max((c["a"] for c in cases.values()), default=1.0)
    dropped = []
    for d, diff, _ in pairs:
        k = int(math.floor(math.log2(d / R0)))
        if d < floor:
            if k not in dropped:
                dropped.append(k)
            continue
        q = diff / mu0**a
        if k not in per_bin or q > per_bin[k][1]:
            per_bin[k] = (d, q)
    usable = sorted(per_bin.items())
    positive = [(d, q) for _, (d, q) in usable if q > 0]
    if len(positive) >= 2:
        xs = np.log([d / R0 for d, _ in positive])
        ys = np.log([q for _, q in positive])
        raw = float(np.polyfit(xs, ys, 1)[0])
    else:
        raw = 1.0
    alpha = min(1.0, max(raw, 0.0))
    worst = 0.0
    for d, diff, _ in pairs:
        if d >= floor:
            worst = max(worst, diff / mu0**a / (d / R0) ** alpha)
    bins = [{"bin": k, "distance": d, "worst_quotient": q} for k, (d, q) in usable]
    return HolderCertificate(alpha, raw, worst, a, mu0, S, cases, bins, sorted(dropped), excluded,
                             far_count, far_ok, far_worst, far_bound)


# ------------------------------------------------------------------ rescaling


def rescale_to_unit(u: GridFunction, center, t0: float, r: float, mu: float, p: float, h: float = 1 / 16,
                    dt: float = 1 / 64, A=None, derivative: bool = False) -> GridFunction:
    """Pull ``u`` back to the unit cylinder through ``x = x0 + (r/mu) xi``, ``t = t0 + mu^-p r^2 tau``.

    Plain fields are divided by ``r/mu`` (or by ``r A`` when ``A`` is given).
    With ``derivative=True`` the field is a gradient or a component of one
    and is divided by ``1`` (or ``mu A``), matching the chain rule.
    """
    grid = unit_grid(u.grid.dim, h, dt)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if derivative:
        norm = 1.0 if A is None else mu * A
    else:
        norm = r / mu if A is None else r * A
    xs = np.stack(grid.coordinates(), axis=-1).reshape(-1, grid.dim)
    sampler = FieldSampler(u)
    levels = []
    for tau in grid.times:
        vals = sampler(center + (r / mu) * xs, t0 + mu ** (-p) * r * r * tau)
        levels.append(vals.reshape(grid.spatial_shape + vals.shape[1:]))
    return GridFunction(grid, np.stack(levels) / norm)


# ------------------------------------------------------------------ first alternative, derivative level


@dataclass
class DerivativeDeGiorgi:
    hypothesis_ok: bool
    fraction: float
    early_exit: bool
    converged: bool
    conclusion_verified: bool
    H: float
    levels: list
    trace: list
    empirical_C: float
    threshold: float
    threshold_met: bool

    def outcome(self) -> tuple:
        return (self.hypothesis_ok, self.fraction, self.early_exit, self.converged,
                self.conclusion_verified, self.H, tuple(self.trace))


def _unit_values(w: GridFunction, rho: float) -> np.ndarray:
    return cylinder_values(w, unit_cylinder(w.grid.dim, rho))


def _check_bound(w: GridFunction, mu: float, A: float, s: float, grad_sup):
    sup = float(np.max(np.abs(_unit_values(w, 1.0)))) if grad_sup is None else grad_sup
    if s + sup > A * mu * (1 + 1e-12):
        raise HypothesisError(f"s + sup|grad w| = {s + sup} exceeds A mu = {A * mu}")


def _recursion_constant(trace, N, base):
    e = 1 + 2 / (N + 2)
    cs = [trace[m + 1] / (base**m * trace[m] ** e) for m in range(len(trace) - 1) if trace[m] > 0]
    return max(cs, default=0.0)


def derivative_degiorgi(w: GridFunction, mu: float, A: float, nu: float, s: float = 0.0, grad_sup=None,
                        C: float = 2.0, m_max: int = 40) -> DerivativeDeGiorgi:
    """Lower bound ``w >= mu/4`` on ``Q_{1/2}`` from smallness of ``{w < mu/2}`` in ``Q_1``."""
    _check_bound(w, mu, A, s, grad_sup)
    grid, N = w.grid, w.grid.dim
    q1 = _unit_values(w, 1.0)
    frac = int(np.count_nonzero(q1 < mu / 2)) / q1.size
    thr = geometric_threshold(C, 16.0, 2 / (N + 2))
    if frac > nu:
        return DerivativeDeGiorgi(False, frac, False, False, False, float("nan"), [], [], 0.0, thr, False)
    k0 = mu / 2
    H = max(0.0, float(np.max(k0 - q1)))
    half = _unit_values(w, 0.5)
    if 4 * H < mu:
        ok = bool(np.all(half >= mu / 4))
        return DerivativeDeGiorgi(True, frac, True, True, ok, H, [k0], [0.0], 0.0, thr, True)
    step = H / (8 * (1 + A))
    levels, trace = [], []
    converged = False
    for m in range(m_max + 1):
        k_m = k0 - step * (1 - 2.0**-m)
        vals = _unit_values(w, 0.5 + 2.0 ** (-m - 1))
        measure = int(np.count_nonzero(vals < k_m)) * grid.cell
        levels.append(k_m)
        trace.append(measure)
        if measure == 0:
            converged = True
            break
    ok = bool(np.all(half >= mu / 4))
    return DerivativeDeGiorgi(True, frac, False, converged, ok, H, levels, trace,
                              _recursion_constant(trace, N, 16.0), thr, trace[0] <= thr)


def dual_derivative_degiorgi(w: GridFunction, mu: float, A: float, nu: float, s: float = 0.0, grad_sup=None,
                             C: float = 2.0, m_max: int = 40) -> DerivativeDeGiorgi:
    """Upper bound ``w <= -mu/4`` on ``Q_{1/2}`` from smallness of ``{w > -mu/2}`` in ``Q_1``."""
    _check_bound(w, mu, A, s, grad_sup)
    grid, N = w.grid, w.grid.dim
    q1 = _unit_values(w, 1.0)
    frac = int(np.count_nonzero(q1 > -mu / 2)) / q1.size
    thr = geometric_threshold(C, 16.0, 2 / (N + 2))
    if frac > nu:
        return DerivativeDeGiorgi(False, frac, False, False, False, float("nan"), [], [], 0.0, thr, False)
    k0 = -mu / 2
    H = max(0.0, float(np.max(q1 - k0)))
    half = _unit_values(w, 0.5)
    if 4 * H < mu:
        ok = bool(np.all(half <= -mu / 4))
        return DerivativeDeGiorgi(True, frac, True, True, ok, H, [k0], [0.0], 0.0, thr, True)
    step = H / (8 * (1 + A))
    levels, trace = [], []
    converged = False
    for m in range(m_max + 1):
        k_m = k0 + step * (1 - 2.0**-m)
        vals = _unit_values(w, 0.5 + 2.0 ** (-m - 1))
        measure = int(np.count_nonzero(vals > k_m)) * grid.cell
        levels.append(k_m)
        trace.append(measure)
        if measure == 0:
            converged = True
            break
    ok = bool(np.all(half <= -mu / 4))
    return DerivativeDeGiorgi(True, frac, False, converged, ok, H, levels, trace,
                              _recursion_constant(trace, N, 16.0), thr, trace[0] <= thr)


# ------------------------------------------------------------------ linear equation spot checks


def _as_matrix_field(B, grid: SpaceTimeGrid) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    N = grid.dim
    if B.shape == grid.shape:
        B = B[..., None, None] * np.eye(N)
    if B.shape != grid.shape + (N, N):
        raise ValueError("coefficient field must be scalar per node or an N x N matrix per node")
    return B


def check_ellipticity(B, grid: SpaceTimeGrid, bound: float) -> tuple:
    """Smallest and largest ``<B z, z>`` and largest ``|B z|`` over unit ``z``; raise outside ``[1/bound, bound]``."""
    Bm = _as_matrix_field(B, grid)
    sym = 0.5 * (Bm + np.swapaxes(Bm, -1, -2))
    eig = np.linalg.eigvalsh(sym)
    low = float(eig.min())
    op = float(np.max(np.linalg.norm(Bm, ord=2, axis=(-2, -1))))
    if low < 1 / bound or op > bound:
        raise EllipticityError(f"ellipticity bounds violated: min {low}, max {op}, allowed [{1 / bound}, {bound}]")
    return low, op


def linear_solve(B, v0: GridFunction) -> GridFunction:
    """Explicit divergence-form scheme for ``v_t = div(B grad v)``; boundary values kept from ``v0``."""
    grid = v0.grid
    Bm = _as_matrix_field(B, grid)
    h, N = grid.h, grid.dim
    lam = float(np.max(np.abs(Bm)))
    sub = max(1, math.ceil(grid.dt * 2 * N * N * lam / (0.45 * h * h)))
    tau = grid.dt / sub
    out = np.array(v0.values, dtype=float)
    for k in range(grid.nt - 1):
        v = out[k].copy()
        Bk = Bm[k]
        for _ in range(sub):
            v = v + tau * _divergence(v, Bk, h)
        inner = (slice(1, -1),) * N
        out[k + 1][inner] = v[inner]
    return GridFunction(grid, out)


def _divergence(v: np.ndarray, B: np.ndarray, h: float) -> np.ndarray:
    N = v.ndim
    res = np.zeros_like(v)
    if N == 1:
        bf = 0.5 * (B[1:, 0, 0] + B[:-1, 0, 0])
        flux = bf * np.diff(v) / h
        res[1:-1] = (flux[1:] - flux[:-1]) / h
        return res
    gx, gy = np.gradient(v, h)
    bf = 0.5 * (B[1:] + B[:-1])
    dx = np.diff(v, axis=0) / h
    dy = 0.5 * (gy[1:] + gy[:-1])
    fx = bf[..., 0, 0] * dx + bf[..., 0, 1] * dy
    bf = 0.5 * (B[:, 1:] + B[:, :-1])
    dy = np.diff(v, axis=1) / h
    dx = 0.5 * (gx[:, 1:] + gx[:, :-1])
    fy = bf[..., 1, 0] * dx + bf[..., 1, 1] * dy
    res[1:-1, 1:-1] = (fx[1:, 1:-1] - fx[:-1, 1:-1]) / h + (fy[1:-1, 1:] - fy[1:-1, :-1]) / h
    return res


@dataclass(frozen=True)
class LinearDecay:
    harnack_ratio: float
    decay_ratio: float
    vacuous: bool
    ellipticity: tuple


def linear_decay_check(B, v: GridFunction, delta: float = 0.5, q: float = 2.0, bound: float = 4.0) -> LinearDecay:
    """Sup-to-mean ratio on ``Q_{1/2}`` and the ``delta``-oscillation ratio of ``v`` about the origin."""
    ell = check_ellipticity(B, v.grid, bound)
    N = v.grid.dim
    full = _unit_values(v, 1.0)
    small = _unit_values(v, delta)
    half = _unit_values(v, 0.5)
    mean_q = float(np.mean(np.abs(full) ** q)) ** (1 / q)
    sup_half = float(np.max(np.abs(half)))
    harnack = sup_half / mean_q if mean_q > 0 else (0.0 if sup_half == 0 else float("inf"))

    def osc(vals):
        return float(np.mean(np.abs(vals - vals.mean()) ** q)) ** (1 / q)

    big, little = osc(full), osc(small)
    scale = 1e-12 * max(1.0, float(np.max(np.abs(full))))
    if big <= scale:
        return LinearDecay(harnack, 0.0, True, ell)
    return LinearDecay(harnack, little / big, False, ell)


# ------------------------------------------------------------------ second alternative


@dataclass
class SliceSearch:
    found: bool
    t_star: float | None
    fraction: float
    threshold: float
    alt2_holds: bool
    scanned: int


def alt2_fractions(w: GridFunction, A: float) -> tuple:
    vals = _unit_values(w, 1.0)
    up = int(np.count_nonzero(vals >= 1 / (2 * A))) / vals.size
    down = int(np.count_nonzero(vals <= -1 / (2 * A))) / vals.size
    return up, down


def _ball(grid: SpaceTimeGrid) -> np.ndarray:
    return spatial_mask(grid, np.zeros(grid.dim), 1.0)


def good_time_slice(w: GridFunction, nu: float, A: float) -> SliceSearch:
    """First time in ``(-1, -nu/2)`` whose positive superlevel set in ``B_1`` is small enough."""
    grid = w.grid
    ball = _ball(grid)
    up, down = alt2_fractions(w, A)
    alt2 = up < 1 - nu and down < 1 - nu
    bound = (1 - nu) / (1 - nu / 2)
    tol = 1e-9 * grid.dt
    scanned = 0
    frac = float("nan")
    for k, t in enumerate(grid.times):
        if not (-1 + tol < t < -nu / 2 - tol):
            continue
        scanned += 1
        frac = int(np.count_nonzero(w.values[k][ball] >= 1 / (2 * A))) / int(ball.sum())
        if frac <= bound:
            return SliceSearch(True, float(t), frac, bound, alt2, scanned)
    return SliceSearch(False, None, frac, bound, alt2, scanned)


@dataclass
class Expansion:
    found: bool
    eta0: float | None
    k: int
    slice_fractions: np.ndarray
    bound: float
    evidence: list


def _later_slices(grid: SpaceTimeGrid, t_star: float) -> list:
    tol = 1e-9 * grid.dt
    return [k for k, t in enumerate(grid.times) if t_star + tol < t < 1 - tol]


def expansion_of_positivity(w: GridFunction, nu: float, A: float, t_star: float, k_max: int = 30,
                            evidence: bool = True) -> Expansion:
    """Largest ``eta0 = nu/2^k`` keeping ``{w > 1 - eta0}`` below ``(1 - nu^2/4)|B_1|`` after ``t_star``."""
    grid = w.grid
    ball = _ball(grid)
    nb = int(ball.sum())
    bound = 1 - nu * nu / 4
    later = _later_slices(grid, t_star)
    for k in range(1, k_max + 1):
        eta0 = nu / 2**k
        fr = np.array([np.count_nonzero(w.values[j][ball] > 1 - eta0) / nb for j in later])
        if np.all(fr <= bound):
            ev = []
            if evidence and later:
                pick = later[:: max(1, len(later) // 4)]
                for j in pick:
                    ev.append(log_estimate_check(w, 1 / (4 * A), nu, eta0, t_star, float(grid.times[j]), 0.5))
            return Expansion(True, eta0, k, fr, bound, ev)
    return Expansion(False, None, k_max, np.array([]), bound, [])


@dataclass
class LevelShrink:
    found: bool
    j0: int
    j_delta: int | None
    per_s: dict
    measures: dict
    evidence: dict


def first_dyadic_level(eta0: float) -> int:
    """Largest positive ``j`` with ``2^-j >= eta0``."""
    return max(1, int(math.floor(math.log2(1 / eta0) + 1e-12)))


def levelset_shrink(w: GridFunction, t_star: float, eta0: float, nu: float, delta_target: float,
                    s_values=None, j_max: int = 60, evidence: bool = False) -> LevelShrink:
    """First dyadic level whose time-integrated superlevel measure is below ``delta_target |B_1| (s - t_star)``."""
    grid = w.grid
    ball = _ball(grid)
    ball_measure = int(ball.sum()) * grid.h**grid.dim
    later = _later_slices(grid, t_star)
    ends = [k for k in later if grid.times[k] - t_star >= 1 / 8 - 1e-9 * grid.dt]
    if not ends:
        raise ValueError("no window endpoint s with s - t_star >= 1/8")
    if s_values is None:
        pick = np.linspace(0, len(ends) - 1, min(5, len(ends))).round().astype(int)
        s_idx = [ends[i] for i in sorted(set(pick))]
    else:
        s_idx = [grid.time_index(s) for s in s_values]
    j0 = first_dyadic_level(eta0)
    slab = w.values[later][:, ball]
    cum_index = {k: i for i, k in enumerate(later)}
    per_s = {}
    measures = {}
    j_delta = None
    for j in range(j0, j_max + 1):
        counts = np.count_nonzero(slab > 1 - 2.0**-j, axis=1) * grid.h**grid.dim
        running = np.cumsum(counts) * grid.dt
        ok_all = True
        for k in s_idx:
            s = float(grid.times[k])
            a_js = float(running[cum_index[k]])
            measures[(j, s)] = a_js
            ok = a_js <= delta_target * ball_measure * (s - t_star)
            if ok and s not in per_s:
                per_s[s] = j
            ok_all = ok_all and ok
        if ok_all:
            j_delta = j
            break
    ev = {}
    if evidence and j_delta is not None:
        ev = _shrink_evidence(w, t_star, j0, j_delta)
    return LevelShrink(j_delta is not None, j0, j_delta, per_s, measures, ev)


def _shrink_evidence(w: GridFunction, t_star: float, j0: int, j_delta: int) -> dict:
    grid = w.grid
    later = _later_slices(grid, t_star)
    pick = later[:: max(1, len(later) // 4)]
    origin = np.zeros(grid.dim)
    poincare, energy = [], []
    cutoff = CutoffFunction.build(grid, unit_cylinder(grid.dim, 1.0), ParabolicCylinder(origin, 0.0, 2.0, 4.0))
    for j in range(j0, j_delta):
        k, l = 1 - 2.0**-j, 1 - 2.0 ** -(j + 1)
        for idx in pick:
            poincare.append(levelset_poincare(w, idx, origin, 1.0, k, l).empirical_C)
        t1 = float(grid.times[later[-1]])
        energy.append(derivative_energy_check(w, k, cutoff, t_star, t1).empirical_C)
    return {"poincare_max": max(poincare, default=0.0), "energy_max": max(energy, default=0.0)}


@dataclass
class FinalDeGiorgi:
    eta: float
    converged: bool
    zero_measure_verified: bool
    trace: list
    empirical_C: float
    threshold: float
    threshold_met: bool
    failed_step: int | None


def final_threshold(C: float, dim: int) -> float:
    return C ** (-(dim + 2) / 2) * 4.0 ** (-(((dim + 2) / 2) ** 2))


def final_degiorgi(w: GridFunction, j_star: int, C: float = 1.0, n_max: int = 40) -> FinalDeGiorgi:
    """Upper De Giorgi run down to ``w <= 1 - 2^-(j*+2)`` on ``Q_{1/2}``."""
    grid, N = w.grid, w.grid.dim
    eta = 2.0 ** -(j_star + 2)
    trace = []
    converged = False
    for n in range(n_max + 1):
        k_n = 1 - eta - 2.0 ** -(j_star + 2 + n)
        vals = _unit_values(w, 0.5 + 2.0 ** (-n - 2))
        trace.append(int(np.count_nonzero(vals > k_n)) * grid.cell)
        if trace[-1] == 0:
            converged = True
            break
    zero = int(np.count_nonzero(_unit_values(w, 0.5) > 1 - eta)) == 0
    thr = final_threshold(C, N)
    failed = None if converged else len(trace) - 1
    return FinalDeGiorgi(eta, converged, zero, trace, _recursion_constant(trace, N, 4.0), thr,
                         trace[0] <= thr, failed)


@dataclass
class SecondAlternative:
    slice: SliceSearch
    expansion: Expansion | None
    shrink: LevelShrink | None
    final: FinalDeGiorgi | None

    @property
    def passed(self) -> bool:
        return bool(self.slice.found and self.expansion and self.expansion.found and self.shrink
                    and self.shrink.found and self.final and self.final.converged
                    and self.final.zero_measure_verified)


def second_alternative(w: GridFunction, nu: float, A: float, C_final: float = 1.0) -> SecondAlternative:
    """Good slice, expansion of positivity, level shrinking and the final De Giorgi run in sequence."""
    sl = good_time_slice(w, nu, A)
    if not sl.found:
        return SecondAlternative(sl, None, None, None)
    ex = expansion_of_positivity(w, nu, A, sl.t_star)
    if not ex.found:
        return SecondAlternative(sl, ex, None, None)
    shrink = levelset_shrink(w, sl.t_star, ex.eta0, nu, final_threshold(C_final, w.grid.dim))
    if not shrink.found:
        return SecondAlternative(sl, ex, shrink, None)
    return SecondAlternative(sl, ex, shrink, final_degiorgi(w, shrink.j_delta, C_final))
