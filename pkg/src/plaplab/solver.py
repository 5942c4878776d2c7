"""Time stepping for ``u_t = div((|grad u|^2 + s^2)^((p-2)/2) grad u)`` plus exact oracles."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn

from . import kernels
from .mesh import GridFunction, SpaceTimeGrid, spatial_gradient
from .rng import generator


class CFLViolation(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class FluxParams:
    p: float
    s: float = 0.0
    C0: float | None = None
    C1: float | None = None

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not 0 <= self.s <= 1:
            raise ValueError("s must lie in [0, 1]")
        if self.C0 is None:
            object.__setattr__(self, "C0", min(1.0, self.p - 1))
        if self.C1 is None:
            object.__setattr__(self, "C1", 2 * max(1.0, self.p - 1))
        if not 0 < self.C0 <= self.C1:
            raise ValueError("need 0 < C0 <= C1")

    @property
    def eigen_factor(self) -> float:
        """Largest eigenvalue of the flux Jacobian relative to the diffusivity."""
        return max(1.0, self.p - 1)


@dataclass(frozen=True)
class SolveConfig:
    scheme: str = "explicit"
    cfl_safety: float = 0.9
    boundary: str = "dirichlet"
    max_steps: int = 10_000_000
    picard_iterations: int = 50
    picard_tol: float = 1e-10

    def __post_init__(self):
        if self.scheme not in ("explicit", "semi-implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.boundary not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not 0 < self.cfl_safety < 1:
            raise ValueError("cfl_safety must lie in (0, 1)")


def _diffusivity(q, p):
    """``q^((p-2)/2)`` with the value at ``q = 0`` left to the caller."""
    if p == 2:
        return np.ones_like(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.power(q, 0.5 * (p - 2))


def flux(zeta, params: FluxParams) -> np.ndarray:
    """Regularized p-Laplace flux; components on the last axis, 0 where ``|zeta|^2 + s^2 = 0``."""
    z = np.asarray(zeta, dtype=float)
    q = np.sum(z * z, axis=-1, keepdims=True) + params.s**2
    m = _diffusivity(q, params.p)
    with np.errstate(invalid="ignore"):
        return np.where(q > 0, m * z, 0.0)


def flux_jacobian(zeta, params: FluxParams) -> np.ndarray:
    z = np.asarray(zeta, dtype=float)
    q = np.sum(z * z, axis=-1)[..., None, None] + params.s**2
    if np.any(q == 0):
        if params.p < 2:
            raise ValueError("flux Jacobian is singular at zeta = 0 when s = 0 and p < 2")
    eye = np.eye(z.shape[-1])
    outer = z[..., :, None] * z[..., None, :]
    with np.errstate(invalid="ignore"):
        rank_one = np.where(q > 0, outer / q, 0.0)
    m = np.where(q > 0, _diffusivity(q, params.p), 1.0 if params.p == 2 else 0.0)
    return m * (eye + (params.p - 2) * rank_one)


@dataclass(frozen=True)
class StructureReport:
    worst_upper_ratio: float
    worst_lower_ratio: float
    worst_jacobian_ratio: float
    samples: int
    passed: bool


def verify_structure(params: FluxParams, sample_count: int, dim: int = 2, seed: int = 0,
                     rtol: float = 1e-12) -> StructureReport:
    """Check both structure inequalities on random ``(zeta, eta)`` pairs.

    The upper ratio is ``(|A| + |A'| q^(1/2)) / (C1 q^((p-1)/2))`` and must not
    exceed 1; the lower ratio is ``<A' eta, eta> / (C0 q^((p-2)/2) |eta|^2)`` and
    must be at least 1. Both are compared with a relative rounding slack ``rtol``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    rng = generator(seed, stream=1)
    direction = rng.standard_normal((sample_count, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    zeta = direction * 10.0 ** rng.uniform(-3, 3, (sample_count, 1))
    eta = rng.standard_normal((sample_count, dim))
    p, s = params.p, params.s
    z2 = np.sum(zeta**2, axis=1)
    q = z2 + s * s
    m = np.power(q, 0.5 * (p - 2))
    # eigenvalues of A'(zeta) are m (multiplicity dim-1) and m (1 + (p-2) |zeta|^2 / q)
    jac_norm = m * np.maximum(1.0, np.abs(1.0 + (p - 2) * z2 / q))
    a_norm = m * np.sqrt(z2)
    scale = params.C1 * np.power(q, 0.5 * (p - 1))
    upper = (a_norm + jac_norm * np.sqrt(q)) / scale
    jac_ratio = jac_norm * np.sqrt(q) / scale
    quad = m * (np.sum(eta**2, axis=1) + (p - 2) * np.sum(zeta * eta, axis=1) ** 2 / q)
    lower = quad / (params.C0 * m * np.sum(eta**2, axis=1))
    worst_up, worst_low = float(upper.max()), float(lower.min())
    ok = worst_up <= 1 + rtol and worst_low >= 1 - rtol
    return StructureReport(worst_up, worst_low, float(jac_ratio.max()), sample_count, ok)


# ---------------------------------------------------------------- time stepping


def stable_dt(level: np.ndarray, grid: SpaceTimeGrid, params: FluxParams, safety: float) -> float:
    """Largest explicit step ``safety h^2 / (2 dim Lambda)`` for this level."""
    kern = kernels.max_coefficient_1d if grid.dim == 1 else kernels.max_coefficient_2d
    lam = kern(np.ascontiguousarray(level, dtype=np.float64), grid.h, params.p, params.s)
    lam *= params.eigen_factor
    if lam == 0:
        return math.inf
    return safety * grid.h**2 / (2 * grid.dim * lam)


def _distinct(level):
    """Periodic grids repeat the first node at the end of each axis."""
    return level[(slice(0, -1),) * level.ndim]


def _periodic_full(distinct):
    return np.pad(distinct, [(0, 1)] * distinct.ndim, mode="wrap")


def _explicit_update(level, grid, params, dt, periodic):
    kern = kernels.flux_update_1d if grid.dim == 1 else kernels.flux_update_2d
    if periodic:
        padded = np.pad(_distinct(level), 1, mode="wrap")
        new = kern(np.ascontiguousarray(padded), grid.h, dt, params.p, params.s)
        return _periodic_full(new[(slice(1, -1),) * grid.dim])
    return kern(np.ascontiguousarray(level, dtype=np.float64), grid.h, dt, params.p, params.s)


def _face_coefficients(arr, h, p, s):
    """Diffusivity on faces (i+1/2, j) with the edge-averaged tangential gradient."""
    gn = np.diff(arr, axis=0) / h
    q = gn * gn + s * s
    if arr.ndim == 2:
        gt = (arr[:-1, 2:] - arr[:-1, :-2] + arr[1:, 2:] - arr[1:, :-2]) * (0.25 / h)
        gn = gn[:, 1:-1]
        q = gn * gn + gt * gt + s * s
    m = _diffusivity(q, p)
    return np.where(q > 0, m, 0.0 if p < 2 else m)


def _implicit_update(level, grid, params, dt, periodic, boundary_values, config):
    """Picard iteration on the frozen-coefficient backward Euler step."""
    if periodic:
        base = _distinct(level)
        ids = np.pad(np.arange(base.size).reshape(base.shape), 1, mode="wrap")
        known = np.zeros(ids.shape)
        old = base.ravel()

        def pad(v):
            return np.pad(v.reshape(base.shape), 1, mode="wrap")
    else:
        inner = tuple(slice(1, -1) for _ in range(grid.dim))
        ids = -np.ones(level.shape, dtype=int)
        count = int(np.prod([n - 2 for n in level.shape]))
        ids[inner] = np.arange(count).reshape([n - 2 for n in level.shape])
        known = boundary_values
        old = level[inner].ravel()

        def pad(v):
            full = known.copy()
            full[inner] = v.reshape([n - 2 for n in level.shape])
            return full

    n_unknown = old.size
    r = dt / grid.h**2
    current = old.copy()
    for _ in range(config.picard_iterations):
        arr = pad(current)
        rows, cols, vals = [], [], []
        rhs = old.copy()
        diag = np.ones(n_unknown)
        for axis in range(grid.dim):
            moved = np.moveaxis(arr, axis, 0)
            ids_m = np.moveaxis(ids, axis, 0)
            known_m = np.moveaxis(known, axis, 0)
            coef = _face_coefficients(moved, grid.h, params.p, params.s)
            core = (slice(None),) + (slice(1, -1),) * (grid.dim - 1)
            a_ids, b_ids = ids_m[:-1][core], ids_m[1:][core]
            a_known, b_known = known_m[:-1][core], known_m[1:][core]
            c = coef * r
            # a face (i+1/2) enters the equation of node i when i is not padding,
            # and the equation of node i+1 when i+1 is not padding
            sides = ((a_ids, b_ids, b_known, slice(1, None)), (b_ids, a_ids, a_known, slice(None, -1)))
            for me, other, other_val, owned in sides:
                me, other, other_val, cc = me[owned], other[owned], other_val[owned], c[owned]
                np.add.at(diag, me.ravel(), cc.ravel())
                couple = other >= 0
                rows.append(me[couple])
                cols.append(other[couple])
                vals.append(-cc[couple])
                fixed = ~couple
                np.add.at(rhs, me[fixed], cc[fixed] * other_val[fixed])
        rows.append(np.arange(n_unknown))
        cols.append(np.arange(n_unknown))
        vals.append(diag)
        mat = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_unknown, n_unknown),
        )
        nxt = spla.spsolve(mat.tocsc(), rhs)
        change = np.linalg.norm(nxt - current)
        current = nxt
        if change <= config.picard_tol * max(np.linalg.norm(nxt), 1e-300):
            full = pad(current)
            if periodic:
                return _periodic_full(full[(slice(1, -1),) * grid.dim])
            return full
    raise ConvergenceError(f"Picard iteration did not converge in {config.picard_iterations} iterations")


def step(level: np.ndarray, grid: SpaceTimeGrid, params: FluxParams, config: SolveConfig,
         t: float = 0.0, oracle=None, dt: float | None = None) -> np.ndarray:
    """Advance one time level by ``dt`` (default ``grid.dt``).

    ``oracle(xs, t)`` supplies Dirichlet data at the new time; without it the
    boundary values are held fixed.
    """
    dt = grid.dt if dt is None else dt
    level = np.asarray(level, dtype=np.float64)
    periodic = config.boundary == "periodic"
    if config.scheme == "explicit":
        limit = stable_dt(level if not periodic else np.pad(_distinct(level), 1, mode="wrap"),
                          grid, params, config.cfl_safety)
        if dt > limit * (1 + 1e-12):
            raise CFLViolation(f"dt={dt:.3e} exceeds the stable limit {limit:.3e}")
        new = _explicit_update(level, grid, params, dt, periodic)
        if not periodic:
            _impose_boundary(new, grid, oracle, t + dt, level)
        return new
    boundary = level.copy()
    if not periodic:
        _impose_boundary(boundary, grid, oracle, t + dt, level)
    return _implicit_update(level, grid, params, dt, periodic, boundary, config)


def _boundary_mask(shape):
    mask = np.ones(shape, dtype=bool)
    mask[(slice(1, -1),) * len(shape)] = False
    return mask


def _impose_boundary(new, grid, oracle, t, old):
    mask = _boundary_mask(new.shape)
    if oracle is None:
        new[mask] = old[mask]
    else:
        new[mask] = np.broadcast_to(oracle(grid.coordinates(), t), new.shape)[mask]


@dataclass
class SolveResult:
    field: GridFunction
    steps: int
    substeps: int
    cfl_margin: float
    wall_time: float
    meta: dict = field(default_factory=dict)


def solve(initial, grid: SpaceTimeGrid, params: FluxParams, config: SolveConfig = SolveConfig(),
          oracle=None) -> SolveResult:
    """Integrate from ``grid.time_interval[0]`` and record every grid time level.

    ``initial`` is an array for the first level or a callable ``f(xs, t)``.
    Explicit runs subdivide each grid step so every substep obeys the CFL
    bound; ``cfl_margin`` is the smallest ratio of stable to used substep.
    """
    start = time.perf_counter()
    times = grid.times
    if callable(initial):
        level = np.array(np.broadcast_to(initial(grid.coordinates(), times[0]), grid.spatial_shape))
    else:
        level = np.array(initial, dtype=np.float64)
    out = [level.copy()]
    substeps, margin = 0, math.inf
    periodic = config.boundary == "periodic"
    for k in range(1, grid.nt):
        t = times[k - 1]
        if config.scheme == "semi-implicit":
            level = step(level, grid, params, config, t=t, oracle=oracle)
            substeps += 1
        else:
            remaining = grid.dt
            while remaining > 1e-15 * grid.dt:
                probe = np.pad(_distinct(level), 1, mode="wrap") if periodic else level
                limit = stable_dt(probe, grid, params, config.cfl_safety)
                n_sub = max(1, math.ceil(remaining / limit))
                h_sub = remaining / n_sub
                margin = min(margin, limit / h_sub)
                level = step(level, grid, params, config, t=t, oracle=oracle, dt=h_sub)
                t += h_sub
                remaining -= h_sub
                substeps += 1
                if substeps > config.max_steps:
                    raise ConvergenceError("max_steps exceeded")
        out.append(level.copy())
    wall = time.perf_counter() - start
    return SolveResult(GridFunction(grid, np.stack(out)), grid.nt - 1, substeps, margin, wall,
                       {"backend": kernels.BACKEND})


def write_manifest(path, result: SolveResult, params: FluxParams, config: SolveConfig) -> None:
    grid = result.field.grid
    doc = {
        "params": asdict(params),
        "config": asdict(config),
        "grid": {
            "dim": grid.dim,
            "h": grid.h,
            "dt": grid.dt,
            "spatial_box": [list(b) for b in grid.spatial_box],
            "time_interval": list(grid.time_interval),
        },
        "steps": result.steps,
        "substeps": result.substeps,
        "wall_time": result.wall_time,
        "cfl_margin": result.cfl_margin,
        "backend": result.meta.get("backend"),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------- oracles


def _radius2(point, dim):
    x = np.asarray(point, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x * x
    return np.sum(x * x, axis=-1)


def heat_kernel(point, t: float, dim: int):
    """Gaussian fundamental solution; ``point`` has its components on the last axis."""
    if t <= 0:
        raise ValueError("time must be positive")
    return (4 * math.pi * t) ** (-dim / 2) * np.exp(-_radius2(point, dim) / (4 * t))


def _sphere_area(dim):
    return 2 * math.pi ** (dim / 2) / gamma_fn(dim / 2)


@dataclass(frozen=True)
class _SelfSimilar:
    alpha: float
    beta: float
    k: float
    const: float


def _barenblatt_profile(p, dim, mass) -> _SelfSimilar:
    beta = 1.0 / (dim * (p - 2) + p)
    alpha = dim * beta
    a = p / (p - 1)
    if p > 2:
        b = (p - 1) / (p - 2)
        k = (p - 2) / p * beta ** (1 / (p - 1))
        # mass = area/a * k^(-N/a) * B(N/a, b+1) * C^(b + N/a)
        unit = _sphere_area(dim) / a * k ** (-dim / a) * beta_fn(dim / a, b + 1)
        const = (mass / unit) ** (1 / (b + dim / a))
    else:
        b = (p - 1) / (2 - p)
        k = (2 - p) / p * beta ** (1 / (p - 1))
        unit = _sphere_area(dim) / a * k ** (-dim / a) * beta_fn(dim / a, b - dim / a)
        const = (mass / unit) ** (1 / (dim / a - b))
    return _SelfSimilar(alpha, beta, k, const)


def barenblatt(point, t: float, p: float, dim: int, mass: float = 1.0):
    """Compactly supported source solution of the p-Laplace evolution (p > 2)."""
    if p <= 2:
        raise ValueError("the compactly supported source solution needs p > 2")
    if t <= 0:
        raise ValueError("time must be positive")
    prof = _barenblatt_profile(p, dim, mass)
    xi = np.sqrt(_radius2(point, dim)) * t ** (-prof.beta)
    body = np.maximum(prof.const - prof.k * xi ** (p / (p - 1)), 0.0)
    return t ** (-prof.alpha) * body ** ((p - 1) / (p - 2))


def barenblatt_radius(t: float, p: float, dim: int, mass: float = 1.0) -> float:
    prof = _barenblatt_profile(p, dim, mass)
    return (prof.const / prof.k) ** ((p - 1) / p) * t**prof.beta


def singular_barenblatt(point, t: float, p: float, dim: int, mass: float = 1.0):
    """Positive source solution with algebraic tails for ``2N/(N+1) < p < 2``."""
    if not 2 * dim / (dim + 1) < p < 2:
        raise ValueError("the singular source solution needs 2N/(N+1) < p < 2")
    if t <= 0:
        raise ValueError("time must be positive")
    prof = _barenblatt_profile(p, dim, mass)
    xi = np.sqrt(_radius2(point, dim)) * t ** (-prof.beta)
    body = prof.const + prof.k * xi ** (p / (p - 1))
    return t ** (-prof.alpha) * body ** (-(p - 1) / (2 - p))


def source_solution(p: float, dim: int, mass: float = 1.0):
    """Exact oracle ``f(xs, t)`` on grid coordinates for any admissible ``p``."""

    def fn(xs, t):
        pts = np.stack(xs, axis=-1)
        if p == 2:
            return mass * heat_kernel(pts, t, dim)
        if p > 2:
            return barenblatt(pts, t, p, dim, mass)
        return singular_barenblatt(pts, t, p, dim, mass)

    return fn


# ---------------------------------------------------------------- weak form


def _lag_steps(grid, h_lag):
    m = int(round(h_lag / grid.dt))
    if m < 1 or abs(m * grid.dt - h_lag) > 1e-9 * grid.dt:
        raise ValueError("h_lag must be a positive multiple of dt")
    if m >= grid.nt:
        raise ValueError("h_lag exceeds the time extent")
    return m


def _steklov_values(values, m):
    """Trapezoidal running mean over ``m`` steps; trailing levels set to 0."""
    nt = values.shape[0]
    out = np.zeros_like(values)
    csum = np.cumsum(values, axis=0)
    for k in range(nt - m):
        inner = csum[k + m - 1] - csum[k]  # levels k+1 .. k+m-1
        out[k] = (0.5 * values[k] + inner + 0.5 * values[k + m]) / m
    return out


def steklov_average(u: GridFunction, h_lag: float) -> GridFunction:
    m = _lag_steps(u.grid, h_lag)
    return GridFunction(u.grid, _steklov_values(u.values, m))


def residual_weak(u: GridFunction, params: FluxParams, test_fn, h_lag: float) -> float:
    """Largest absolute weak-form residual over the admissible time levels.

    ``test_fn`` is a GridFunction (time dependent) or a spatial array; it must
    vanish on the two outermost node layers.
    """
    grid = u.grid
    m = _lag_steps(grid, h_lag)
    phi = test_fn.values if isinstance(test_fn, GridFunction) else np.asarray(test_fn, float)
    static = phi.ndim == grid.dim
    rim = np.ones(grid.spatial_shape, dtype=bool)
    rim[(slice(2, -2),) * grid.dim] = False
    if np.any(phi[..., rim] != 0) if not static else np.any(phi[rim] != 0):
        raise ValueError("test function support touches the spatial boundary")
    grads = np.stack([spatial_gradient(level, grid.h) for level in u.values])
    fluxes = _steklov_values(flux(grads, params), m)
    worst = 0.0
    cell = grid.h**grid.dim
    for k in range(grid.nt - m):
        phik = phi if static else phi[k]
        dphi = spatial_gradient(phik, grid.h)
        du = (u.values[k + m] - u.values[k]) / h_lag
        r = (np.sum(du * phik) + np.sum(fluxes[k] * dphi)) * cell
        worst = max(worst, abs(r))
    return worst
