"""Uniform space-time grids, grid functions and parabolic cylinders.

Array layout is ``(nt, nx)`` in one space dimension and ``(nt, nx, ny)`` in
two; vector-valued fields carry one extra trailing axis.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# relative slack used when deciding strict membership and extent divisibility
_TIE = 1e-9


class OffGridError(ValueError):
    """Raised when a cylinder's center lies outside the grid extents."""


@dataclass(frozen=True)
class SpaceTimeGrid:
    dim: int
    h: float
    dt: float
    spatial_box: tuple
    time_interval: tuple
    counts: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("only 1 or 2 spatial dimensions are supported")
        if not (self.h > 0 and self.dt > 0):
            raise ValueError("h and dt must be positive")
        box = tuple((float(lo), float(hi)) for lo, hi in self.spatial_box)
        if len(box) != self.dim:
            raise ValueError("spatial_box needs one [lo, hi] pair per axis")
        t_lo, t_hi = (float(v) for v in self.time_interval)
        counts = [_node_count(t_hi - t_lo, self.dt)]
        counts += [_node_count(hi - lo, self.h) for lo, hi in box]
        object.__setattr__(self, "spatial_box", box)
        object.__setattr__(self, "time_interval", (t_lo, t_hi))
        object.__setattr__(self, "counts", tuple(counts))

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def spatial_shape(self) -> tuple:
        return self.counts[1:]

    @property
    def nt(self) -> int:
        return self.counts[0]

    @property
    def cell(self) -> float:
        """Space-time volume attached to every node."""
        return self.h**self.dim * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.time_interval[0] + self.dt * np.arange(self.nt)

    def axis(self, i: int) -> np.ndarray:
        lo = self.spatial_box[i][0]
        return lo + self.h * np.arange(self.counts[1 + i])

    def coordinates(self) -> list[np.ndarray]:
        """Spatial coordinate arrays broadcastable against one time level."""
        return list(np.meshgrid(*(self.axis(i) for i in range(self.dim)), indexing="ij"))

    def contains(self, x, t) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (self.dim,):
            raise ValueError("point dimension does not match grid")
        slack_x = _TIE * self.h
        slack_t = _TIE * self.dt
        inside = all(lo - slack_x <= xi <= hi + slack_x for xi, (lo, hi) in zip(x, self.spatial_box))
        t_lo, t_hi = self.time_interval
        return inside and t_lo - slack_t <= t <= t_hi + slack_t

    def time_index(self, t: float) -> int:
        k = int(round((t - self.time_interval[0]) / self.dt))
        if not 0 <= k < self.nt or abs(self.times[k] - t) > 1e-6 * self.dt:
            raise ValueError(f"time {t} is not a grid level")
        return k

    def node_index(self, x) -> tuple:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for i, xi in enumerate(x):
            j = int(round((xi - self.spatial_box[i][0]) / self.h))
            if not 0 <= j < self.counts[1 + i] or abs(self.axis(i)[j] - xi) > 1e-6 * self.h:
                raise ValueError(f"coordinate {xi} is not a grid node")
            idx.append(j)
        return tuple(idx)


def _node_count(length: float, spacing: float) -> int:
    cells = length / spacing
    n = int(round(cells))
    if abs(cells - n) > _TIE * max(1.0, cells):
        raise ValueError(f"extent {length} is not a multiple of spacing {spacing}")
    if n + 1 < 3:
        raise ValueError("every axis needs at least 3 nodes")
    return n + 1


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values at every node of a grid; scalar or with a trailing component axis."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        if arr.shape != self.grid.shape and arr.shape[:-1] != self.grid.shape:
            raise ValueError(f"values shape {arr.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("grid function values must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def is_vector(self) -> bool:
        return self.values.shape != self.grid.shape

    @property
    def ncomp(self) -> int:
        return self.values.shape[-1] if self.is_vector else 1

    @classmethod
    def from_function(cls, grid: SpaceTimeGrid, fn) -> GridFunction:
        """Sample ``fn(x, t)`` where ``x`` is a list of coordinate arrays.

        A trailing extra axis in the result makes a vector field.
        """
        xs = grid.coordinates()
        levels = []
        for t in grid.times:
            out = np.asarray(fn(xs, t), dtype=float)
            tail = out.shape[grid.dim:] if out.ndim > grid.dim else ()
            levels.append(np.broadcast_to(out, grid.spatial_shape + tail))
        return cls(grid, np.stack(levels))

    def with_values(self, values) -> GridFunction:
        return GridFunction(self.grid, values)

    def magnitude(self) -> GridFunction:
        if not self.is_vector:
            return GridFunction(self.grid, np.abs(self.values))
        return GridFunction(self.grid, np.sqrt(np.sum(self.values**2, axis=-1)))

    def component(self, i: int) -> GridFunction:
        return GridFunction(self.grid, self.values[..., i])


@dataclass(frozen=True)
class ParabolicCylinder:
    """Ball times time interval; symmetric in time unless ``backward``."""

    center: tuple
    t0: float
    radius: float
    half_time: float
    backward: bool = False
    kind: str = "standard"

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not (self.radius > 0 and self.half_time > 0):
            raise ValueError("cylinder radii must be positive")

    @classmethod
    def standard(cls, center, t0, a, b, backward=False) -> ParabolicCylinder:
        return cls(center, float(t0), float(a), float(b), backward, "standard")

    @classmethod
    def intrinsic(cls, center, t0, rho, lam, p, backward=False) -> ParabolicCylinder:
        if lam < 1:
            raise ValueError("intrinsic scale must be at least 1")
        return cls(center, float(t0), rho / lam, lam ** (-p) * rho**2, backward, "intrinsic")

    @classmethod
    def scaled(cls, center, t0, r, mu, p, backward=False) -> ParabolicCylinder:
        """``B_{r/mu} x (t0 -+ mu^{-p} r^2)`` without the ``mu >= 1`` restriction."""
        return cls(center, float(t0), r / mu, mu ** (-p) * r**2, backward, "intrinsic")

    @property
    def time_bounds(self) -> tuple:
        upper = self.t0 if self.backward else self.t0 + self.half_time
        return self.t0 - self.half_time, upper

    @property
    def dim(self) -> int:
        return len(self.center)

    def volume(self) -> float:
        """Continuous volume, for comparison with the cell-counting measure."""
        n = self.dim
        ball = math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius**n
        lo, hi = self.time_bounds
        return ball * (hi - lo)


def parabolic_distance(z1, z2) -> float:
    """``max(|x1 - x2|, |t1 - t2|^(1/2))`` for points given as ``(x, t)``."""
    x1, t1 = z1
    x2, t2 = z2
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != x2.shape:
        raise ValueError("points have different spatial dimension")
    return max(float(np.linalg.norm(x1 - x2)), math.sqrt(abs(t1 - t2)))


def spatial_mask(grid: SpaceTimeGrid, center, radius: float) -> np.ndarray:
    """Nodes of one time level strictly inside the open ball."""
    xs = grid.coordinates()
    dist2 = sum((x - c) ** 2 for x, c in zip(xs, center))
    r = radius - _TIE * grid.h
    return dist2 < r * r if r > 0 else np.zeros(grid.spatial_shape, dtype=bool)


def time_mask(grid: SpaceTimeGrid, lo: float, hi: float) -> np.ndarray:
    t = grid.times
    slack = _TIE * grid.dt
    return (t > lo + slack) & (t < hi - slack)


def cylinder_mask(grid: SpaceTimeGrid, cyl: ParabolicCylinder) -> np.ndarray:
    """Boolean array over the grid marking the nodes of ``cyl``."""
    if cyl.dim != grid.dim:
        raise ValueError("cylinder and grid dimensions differ")
    if not grid.contains(cyl.center, cyl.t0):
        raise OffGridError(f"cylinder center {cyl.center}, t={cyl.t0} lies outside the grid")
    tm = time_mask(grid, *cyl.time_bounds)
    sm = spatial_mask(grid, cyl.center, cyl.radius)
    return tm.reshape((-1,) + (1,) * grid.dim) & sm[None]


def cylinder_values(f: GridFunction, cyl: ParabolicCylinder) -> np.ndarray:
    """Values of ``f`` at the nodes of ``cyl``; same node set as ``cylinder_mask``.

    Only the index window around the cylinder is touched, so this is cheap
    for small cylinders on large grids.  Vector fields keep their component axis.
    """
    grid = f.grid
    if cyl.dim != grid.dim:
        raise ValueError("cylinder and grid dimensions differ")
    if not grid.contains(cyl.center, cyl.t0):
        raise OffGridError(f"cylinder center {cyl.center}, t={cyl.t0} lies outside the grid")
    lo, hi = cyl.time_bounds
    t = grid.times
    k0 = int(np.searchsorted(t, lo, side="left"))
    k1 = int(np.searchsorted(t, hi, side="right"))
    tsel = t[k0:k1]
    slack = _TIE * grid.dt
    tkeep = (tsel > lo + slack) & (tsel < hi - slack)
    window = [slice(k0, k1)]
    axes = []
    for i, c in enumerate(cyl.center):
        ax = grid.axis(i)
        i0 = int(np.searchsorted(ax, c - cyl.radius, side="left"))
        i1 = int(np.searchsorted(ax, c + cyl.radius, side="right"))
        window.append(slice(i0, i1))
        axes.append(ax[i0:i1] - c)
    r = cyl.radius - _TIE * grid.h
    if r <= 0 or not tkeep.any():
        shape = (0,) + ((f.ncomp,) if f.is_vector else ())
        return np.empty(shape)
    dist2 = sum(d**2 for d in np.meshgrid(*axes, indexing="ij"))
    keep = tkeep.reshape((-1,) + (1,) * grid.dim) & (dist2 < r * r)[None]
    return f.values[tuple(window)][keep]


def cylinder_nodes(grid: SpaceTimeGrid, cyl: ParabolicCylinder) -> np.ndarray:
    """Node indices ``(k, i[, j])`` in lexicographic order."""
    return np.argwhere(cylinder_mask(grid, cyl))


def measure(grid: SpaceTimeGrid, node_set) -> float:
    """Cell-counting measure of a node set given as a mask or an index array."""
    nodes = np.asarray(node_set)
    count = int(np.count_nonzero(nodes)) if nodes.dtype == bool else len(nodes)
    return count * grid.cell


def discrete_gradient(u: GridFunction) -> GridFunction:
    """Spatial gradient: central inside, one-sided second order at the boundary."""
    grid = u.grid
    parts = [np.gradient(u.values, grid.h, axis=1 + i, edge_order=2) for i in range(grid.dim)]
    return GridFunction(grid, np.stack(parts, axis=-1))


def spatial_gradient(level: np.ndarray, h: float) -> np.ndarray:
    """Gradient of a single time level, components on the last axis."""
    parts = [np.gradient(level, h, axis=i, edge_order=2) for i in range(level.ndim)]
    return np.stack(parts, axis=-1)


def integrate(f: GridFunction, cyl: ParabolicCylinder):
    """Cell-counting quadrature of ``f`` over the nodes of ``cyl``."""
    mask = cylinder_mask(f.grid, cyl)
    return np.sum(f.values[mask], axis=0) * f.grid.cell


def cylinder_max(f: GridFunction, cyl: ParabolicCylinder) -> float:
    """Maximum over the cylinder's nodes; ``-inf`` on an empty node set."""
    vals = f.values[cylinder_mask(f.grid, cyl)]
    return float(vals.max()) if vals.size else -math.inf


def write_grid_function(path, f: GridFunction) -> None:
    """Text header line followed by the raw float64 values."""
    if f.is_vector:
        raise ValueError("only scalar grid functions can be written")
    g = f.grid
    header = [str(g.dim), repr(g.h), repr(g.dt)]
    header += [str(n) for n in g.spatial_shape] + [str(g.nt)]
    header += [repr(lo) for lo, _ in g.spatial_box] + [repr(g.time_interval[0])]
    with open(path, "wb") as fh:
        fh.write((" ".join(header) + "\n").encode("ascii"))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_grid_function(path) -> GridFunction:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        payload = fh.read()
    dim = int(header[0])
    h, dt = float(header[1]), float(header[2])
    spatial = [int(v) for v in header[3 : 3 + dim]]
    nt = int(header[3 + dim])
    lows = [float(v) for v in header[4 + dim : 4 + 2 * dim]]
    t_lo = float(header[4 + 2 * dim])
    grid = SpaceTimeGrid(
        dim,
        h,
        dt,
        tuple((lo, lo + (n - 1) * h) for lo, n in zip(lows, spatial)),
        (t_lo, t_lo + (nt - 1) * dt),
    )
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape)
    return GridFunction(grid, values)


def write_csv(path, f: GridFunction) -> None:
    """One node per row: spatial coordinates, time, value."""
    g = f.grid
    names = ["x", "y"][: g.dim]
    xs = g.coordinates()
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["t", "value"])
        for k, t in enumerate(g.times):
            level = f.values[k]
            for idx in np.ndindex(*g.spatial_shape):
                w.writerow([repr(float(x[idx])) for x in xs] + [repr(float(t)), repr(float(level[idx]))])
