"""Reference fields: exact source solutions sized to a target gradient, and manufactured caloric fields."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .mesh import GridFunction, SpaceTimeGrid, discrete_gradient
from .solver import source_solution


@dataclass(frozen=True)
class OracleCase:
    name: str
    p: float
    dim: int
    mass: float
    h: float
    dt: float
    center: tuple = (0.0,)
    t0: float = 1.0
    R0: float = 0.1
    half_width: float = 0.5
    time_half: float = 0.03125

    def grid(self) -> SpaceTimeGrid:
        """Box of half-width ``half_width`` around the base point; covers ``4 Q0`` in space."""
        box = tuple((c - self.half_width, c + self.half_width) for c in self.center)
        return SpaceTimeGrid(self.dim, self.h, self.dt, box, (self.t0 - self.time_half, self.t0 + self.time_half))

    def field(self) -> GridFunction:
        return GridFunction.from_function(self.grid(), source_solution(self.p, self.dim, self.mass))

    def gradient(self) -> GridFunction:
        return discrete_gradient(self.field())


def _radial_slope(p, dim, mass, t, reach, samples):
    r = np.linspace(0.0, reach, samples)
    xs = [r] + [np.zeros_like(r)] * (dim - 1)
    u = source_solution(p, dim, mass)(xs, t)
    return r, np.abs(np.gradient(u, r))


def peak_gradient(p: float, dim: int, mass: float, t: float, reach: float = 2.0, samples: int = 4001) -> float:
    """Largest radial slope of the source solution at time ``t`` along one axis."""
    return float(np.max(_radial_slope(p, dim, mass, t, reach, samples)[1]))


def peak_location(p: float, dim: int, mass: float, t: float, reach: float = 2.0, samples: int = 4001) -> float:
    r, slope = _radial_slope(p, dim, mass, t, reach, samples)
    return float(r[int(np.argmax(slope))])


def mass_for_gradient(p: float, dim: int, t: float, target: float) -> float:
    """Mass whose source solution has peak slope ``target`` at time ``t``."""
    f = lambda lm: math.log(peak_gradient(p, dim, math.exp(lm), t, reach=20.0, samples=40001)) - math.log(target)
    return math.exp(brentq(f, math.log(1e-3), math.log(1e3), xtol=1e-10))


def oracle_corpus(ps=(1.6, 2.0, 3.0), dim: int = 1, h: float = 1 / 256, dt: float = 1 / 65536,
                  target: float = 3.0) -> list[OracleCase]:
    """One case per ``p``, each with ``sup |grad u|`` near ``target`` at the reference time."""
    out = []
    for p in ps:
        mass = mass_for_gradient(p, dim, 1.0, target)
        x_peak = round(peak_location(p, dim, mass, 1.0, reach=20.0, samples=40001) / h) * h
        center = (x_peak,) + (0.0,) * (dim - 1)
        out.append(OracleCase(f"source-p{p:g}", p, dim, mass, h, dt, center=center))
    return out


def refine(case: OracleCase, factor: int = 2) -> OracleCase:
    return dataclasses.replace(case, h=case.h / factor, dt=case.dt / factor**2)


# ------------------------------------------------------------------ manufactured caloric fields


def caloric_field(grid: SpaceTimeGrid, base: float, modes, bumps=()) -> GridFunction:
    """Exact solution of the heat equation built from decaying Fourier modes and source kernels.

    ``modes`` holds ``(amplitude, wavevector, phase)``; ``bumps`` holds
    ``(weight, center, time)`` with the source time before the grid starts.
    """
    t_start = grid.time_interval[0]
    for _, _, tb in bumps:
        if tb >= t_start:
            raise ValueError("source times must precede the grid")

    def fn(xs, t):
        out = np.full(xs[0].shape, base, dtype=float)
        for amp, wave, phase in modes:
            k = np.atleast_1d(np.asarray(wave, dtype=float))
            arg = sum(ki * x for ki, x in zip(k, xs)) + phase
            out = out + amp * np.cos(arg) * math.exp(-float(k @ k) * (t - t_start))
        for weight, c, tb in bumps:
            r2 = sum((x - ci) ** 2 for x, ci in zip(xs, np.atleast_1d(c)))
            lag = t - tb
            out = out + weight * (4 * math.pi * lag) ** (-grid.dim / 2) * np.exp(-r2 / (4 * lag))
        return out

    return GridFunction.from_function(grid, fn)


def random_caloric(grid: SpaceTimeGrid, rng: np.random.Generator, base: float, amplitude: float,
                   n_modes: int = 3, n_bumps: int = 1, max_wave: float = 3.0) -> GridFunction:
    """Random caloric field whose oscillating part has sup norm exactly ``amplitude``."""
    dim = grid.dim
    modes = []
    for _ in range(n_modes):
        wave = rng.uniform(-max_wave, max_wave, dim)
        modes.append((rng.uniform(-1, 1), wave, rng.uniform(0, 2 * math.pi)))
    bumps = []
    for _ in range(n_bumps):
        c = rng.uniform(-1.5, 1.5, dim)
        tb = grid.time_interval[0] - rng.uniform(0.05, 0.5)
        bumps.append((rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 1.0), c, tb))
    raw = caloric_field(grid, 0.0, modes, bumps)
    peak = float(np.max(np.abs(raw.values)))
    scale = amplitude / peak if peak > 0 else 0.0
    return GridFunction(grid, base + scale * raw.values)


def dipped_caloric(grid: SpaceTimeGrid, rng: np.random.Generator, base: float, n_dips: int = 2,
                   depth: float = 0.6, ripple: float = 0.05) -> GridFunction:
    """Level ``base`` with a small ripple and narrow cold sources released just before the grid starts."""
    t_start = grid.time_interval[0]
    bumps = []
    for _ in range(n_dips):
        lag = rng.uniform(0.002, 0.05)
        weight = depth * rng.uniform(0.3, 1.0) * math.sqrt(4 * math.pi * lag) ** grid.dim
        bumps.append((-weight, rng.uniform(-1, 1, grid.dim), t_start - lag))
    wave = rng.uniform(-2, 2, grid.dim)
    modes = [(ripple * rng.uniform(-1, 1), wave, rng.uniform(0, 2 * math.pi))]
    return caloric_field(grid, base, modes, bumps)


def cooling_paraboloid(grid: SpaceTimeGrid, rng: np.random.Generator, peak: float, curvature: float,
                       ripple: float = 0.0) -> GridFunction:
    """``b - a(|x|^2 + 2N t)`` plus a decaying ripple; largest value ``peak`` at the origin and first time."""
    t_start = grid.time_interval[0]
    N = grid.dim
    b = peak - ripple + curvature * 2 * N * t_start
    wave = rng.uniform(-2, 2, N)
    phase = rng.uniform(0, 2 * math.pi)

    def fn(xs, t):
        r2 = sum(x * x for x in xs)
        arg = sum(k * x for k, x in zip(wave, xs)) + phase
        return b - curvature * (r2 + 2 * N * t) + ripple * np.cos(arg) * math.exp(-float(wave @ wave) * (t - t_start))

    return GridFunction.from_function(grid, fn)
