"""Command line runner: ``solve``, ``verify <scenario>``, ``calibrate`` and ``report``.

Exit codes: 0 every check passed, 1 some check failed, 2 unreadable or
malformed configuration (nothing is written), 3 a scenario precondition failed.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, iterate, scenarios, solver
from .mesh import GridFunction, ParabolicCylinder, SpaceTimeGrid, cylinder_mask, write_grid_function
from .reports import Check, RunReport, digest, find_reports, format_table, load_report

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_PRECONDITION = 0, 1, 2, 3
LOCK_FILE = "constants.lock"

VERIFY_SCENARIOS = (
    "verify-lemmas",
    "verify-energy",
    "verify-lipschitz",
    "verify-corollaries",
    "verify-covering",
    "verify-holder",
)


class ConfigError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


@dataclass
class ExperimentConfig:
    seed: int = 0
    dim: int = 1
    h: float = 1 / 64
    dt: float = 1 / 1024
    box: tuple = (-1.0, 1.0)
    time_interval: tuple = (0.125, 0.25)
    p: float = 2.0
    s: float = 0.0
    scheme: str = "explicit"
    mass: float = 1.0
    tolerance: float = 0.05
    lipschitz_ps: tuple = (1.6, 2.0, 2.5, 3.0)
    eps: float = 0.5
    sigma: float = 0.5
    C1: float | None = None
    constants: str | None = None
    calibration_ps: tuple = (1.6, 2.0, 2.5, 3.0)
    calibration_targets: tuple = scenarios.LIPSCHITZ_TARGETS
    nu: float = 0.1
    trials: int = 100
    source_text: str = field(default="", repr=False)

    def digest(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if k != "source_text"}
        return digest(repr(sorted(doc.items())))


def read_config(path: str | None, seed: int | None) -> ExperimentConfig:
    """Parse an INI-style file; any problem raises ``ConfigError``."""
    cfg = ExperimentConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            text = Path(path).read_text()
            parser.read_string(text, source=str(path))
            run = parser["run"] if parser.has_section("run") else {}
            grid = parser["grid"] if parser.has_section("grid") else {}
            flux = parser["flux"] if parser.has_section("flux") else {}
            solve = parser["solve"] if parser.has_section("solve") else {}
            lip = parser["lipschitz"] if parser.has_section("lipschitz") else {}
            cal = parser["calibrate"] if parser.has_section("calibrate") else {}
            cov = parser["covering"] if parser.has_section("covering") else {}
            cfg = ExperimentConfig(
                seed=int(run.get("seed", cfg.seed)),
                dim=int(grid.get("dim", cfg.dim)),
                h=float(grid.get("h", cfg.h)),
                dt=float(grid.get("dt", cfg.dt)),
                box=_floats(grid["box"]) if "box" in grid else cfg.box,
                time_interval=_floats(grid["time"]) if "time" in grid else cfg.time_interval,
                p=float(flux.get("p", cfg.p)),
                s=float(flux.get("s", cfg.s)),
                scheme=solve.get("scheme", cfg.scheme),
                mass=float(solve.get("mass", cfg.mass)),
                tolerance=float(solve.get("tolerance", cfg.tolerance)),
                lipschitz_ps=_floats(lip["p"]) if "p" in lip else cfg.lipschitz_ps,
                eps=float(lip.get("eps", cfg.eps)),
                sigma=float(lip.get("sigma", cfg.sigma)),
                C1=float(lip["C1"]) if "C1" in lip else None,
                constants=lip.get("constants"),
                calibration_ps=_floats(cal["p"]) if "p" in cal else cfg.calibration_ps,
                calibration_targets=_floats(cal["targets"]) if "targets" in cal else cfg.calibration_targets,
                nu=float(cov.get("nu", cfg.nu)),
                trials=int(cov.get("trials", cfg.trials)),
                source_text=text,
            )
        except (OSError, configparser.Error, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if len(cfg.box) != 2 or len(cfg.time_interval) != 2:
            raise ConfigError("box and time need two values each")
        if cfg.scheme not in ("explicit", "semi-implicit"):
            raise ConfigError(f"unknown scheme {cfg.scheme!r}")
    if seed is not None:
        cfg.seed = seed
    return cfg


# ------------------------------------------------------------------ constants file


def write_lock(path: Path, C1: float, cfg: ExperimentConfig) -> None:
    lines = [
        "[constants]",
        f"C1 = {C1!r}",
        f"nu = {cfg.nu!r}",
        "kappa = 0.5",
        "delta = 0.5",
        "sigma = 0.5",
        "eta = 0.75",
        "",
        "[corpus]",
        "p = " + ", ".join(repr(p) for p in cfg.calibration_ps),
        "targets = " + ", ".join(repr(t) for t in cfg.calibration_targets),
        f"seed = {cfg.seed}",
        "",
    ]
    path.write_text("\n".join(lines))


def read_lock(path) -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(path):
        raise ConfigError(f"cannot read constants file {path}")
    return {k: float(v) for k, v in parser["constants"].items()}


def _resolve_C1(cfg: ExperimentConfig) -> float:
    if cfg.C1 is not None:
        return cfg.C1
    if cfg.constants is not None:
        return read_lock(cfg.constants)["C1"]
    return scenarios.calibrate_C1(cfg.calibration_ps, cfg.calibration_targets)


# ------------------------------------------------------------------ scenarios


def _check_lipschitz(cfg: ExperimentConfig) -> None:
    for p in cfg.lipschitz_ps:
        if p <= max(1.0, iterate.critical_p(cfg.dim)):
            raise PreconditionError(f"p = {p} is not above the critical exponent {iterate.critical_p(cfg.dim):g}")
    if cfg.dim != 1:
        raise PreconditionError("the Lipschitz corpus is one-dimensional")
    if not (0 < cfg.eps <= 1 and 0 < cfg.sigma < 1):
        raise PreconditionError("need 0 < eps <= 1 and 0 < sigma < 1")


def run_verify(name: str, cfg: ExperimentConfig) -> list[Check]:
    if name == "verify-lemmas":
        return (scenarios.iteration_threshold() + scenarios.bounded_recursion(cfg.seed)
                + scenarios.exact_inequalities(cfg.seed) + scenarios.structure())
    if name == "verify-energy":
        return scenarios.energy_uniformity()
    if name == "verify-lipschitz":
        _check_lipschitz(cfg)
        return scenarios.lipschitz_unified(_resolve_C1(cfg), cfg.lipschitz_ps, cfg.eps, cfg.sigma)
    if name == "verify-corollaries":
        return scenarios.lipschitz_corollaries(_resolve_C1(cfg))
    if name == "verify-covering":
        if not 0 < cfg.nu < 1:
            raise PreconditionError("nu must lie in (0, 1)")
        return (scenarios.covering_geometry(cfg.seed) + scenarios.cauchy_stability()
                + scenarios.derivative_trials(cfg.seed, cfg.trials, cfg.nu)
                + scenarios.second_alternative_trials(cfg.seed, nu=cfg.nu))
    if name == "verify-holder":
        return scenarios.holder(seed=cfg.seed)
    raise ConfigError(f"unknown scenario {name!r}")


def run_solve(cfg: ExperimentConfig, out: Path) -> list[Check]:
    if cfg.p <= 1:
        raise PreconditionError("p must exceed 1")
    grid = SpaceTimeGrid(cfg.dim, cfg.h, cfg.dt, tuple(cfg.box for _ in range(cfg.dim)), cfg.time_interval)
    params = solver.FluxParams(cfg.p, cfg.s)
    config = solver.SolveConfig(scheme=cfg.scheme)
    exact_fn = solver.source_solution(cfg.p, cfg.dim, cfg.mass)
    result = solver.solve(exact_fn, grid, params, config, oracle=exact_fn)
    out.mkdir(parents=True, exist_ok=True)
    write_grid_function(out / "solution.field", result.field)
    solver.write_manifest(out / "manifest.json", result, params, config)
    exact = GridFunction.from_function(grid, exact_fn)
    mid = 0.5 * (cfg.box[0] + cfg.box[1])
    half = 0.25 * (cfg.box[1] - cfg.box[0])
    t_end = grid.times[-1]
    cyl = ParabolicCylinder((mid,) * cfg.dim, t_end, half, 0.5 * (t_end - grid.times[0]), backward=True)
    err = float(np.max(np.abs(result.field.values - exact.values)[cylinder_mask(grid, cyl)]))
    return [Check("interior error against source solution", err, cfg.tolerance, err / cfg.tolerance,
                  err <= cfg.tolerance, "solver accuracy", {"substeps": result.substeps})]


def _finish(scenario: str, cfg: ExperimentConfig, checks: list, out: Path, start: float) -> int:
    report = RunReport(scenario, cfg.digest(), cfg.seed, checks, time.perf_counter() - start)
    report.write(out)
    for c in checks:
        print(f"{'pass' if c.passed else 'FAIL'}  {c.name}")
    print(f"{scenario}: {'PASS' if report.passed else 'FAIL'} ({len(checks)} checks)")
    return EXIT_PASS if report.passed else EXIT_FAIL


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style configuration file")
    common.add_argument("--out", default="run", help="output directory")
    common.add_argument("--seed", type=int, help="overrides the configured seed")
    common.add_argument("--threads", type=int, default=None, help="limit for native thread pools")

    parser = argparse.ArgumentParser(prog="plaplab", description="p-Laplace solver and estimate checks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="run the solver against the source solution")
    verify = sub.add_parser("verify", parents=[common], help="run a verification scenario")
    verify.add_argument("scenario", choices=VERIFY_SCENARIOS)
    sub.add_parser("calibrate", parents=[common], help="measure constants and write constants.lock")
    rep = sub.add_parser("report", help="summarise run directories")
    rep.add_argument("run_dir", nargs="+")
    return parser


def _report(dirs) -> int:
    docs = []
    try:
        for d in dirs:
            for run in find_reports(d):
                docs.append((run.name or str(run), load_report(run)))
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_table(docs))
    return EXIT_PASS if all(doc["passed"] for _, doc in docs) else EXIT_FAIL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        return _report(args.run_dir)
    try:
        cfg = read_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    start = time.perf_counter()
    with threadpool_limits(limits=args.threads):
        try:
            if args.command == "solve":
                return _finish("solve", cfg, run_solve(cfg, out), out, start)
            if args.command == "calibrate":
                C1 = scenarios.calibrate_C1(cfg.calibration_ps, cfg.calibration_targets)
                if not (math.isfinite(C1) and C1 > 0):
                    raise PreconditionError(f"no admissible value for C1 (measured {C1})")
                out.mkdir(parents=True, exist_ok=True)
                write_lock(out / LOCK_FILE, C1, cfg)
                check = Check("first iteration constant", C1, math.inf, C1, True, "constant calibration")
                return _finish("calibrate", cfg, [check], out, start)
            return _finish(args.scenario, cfg, run_verify(args.scenario, cfg), out, start)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (PreconditionError, ValueError) as exc:
            print(f"precondition failed: {exc}", file=sys.stderr)
            return EXIT_PRECONDITION
