"""Check records, run reports and their on-disk formats."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

REPORT_FILE = "report.json"
CHECKS_FILE = "checks.csv"


@dataclass
class Check:
    name: str
    lhs: float
    rhs: float
    empirical_C: float
    passed: bool
    topic: str = ""
    detail: dict = field(default_factory=dict)


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item"):
        return _clean(x.item())
    return x


def digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class RunReport:
    scenario: str
    config_digest: str
    seed: int
    checks: list
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "passed": self.passed,
            "checks": [_clean(asdict(c)) for c in self.checks],
            "wall_time": self.wall_time,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / REPORT_FILE, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / CHECKS_FILE, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "topic", "lhs", "rhs", "empirical_C", "passed"])
            for c in self.checks:
                w.writerow([c.name, c.topic, repr(float(c.lhs)), repr(float(c.rhs)),
                            repr(float(c.empirical_C)), int(c.passed)])


def load_report(run_dir) -> dict:
    path = Path(run_dir) / REPORT_FILE
    if not path.is_file():
        raise FileNotFoundError(f"no {REPORT_FILE} in {run_dir}")
    with open(path) as fh:
        return json.load(fh)


def find_reports(root) -> list[Path]:
    """Run directories under ``root`` (itself included) holding a report."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    found = sorted({p.parent for p in root.rglob(REPORT_FILE)})
    if not found:
        raise FileNotFoundError(f"no run reports under {root}")
    return found


def format_table(reports: list[tuple[str, dict]]) -> str:
    lines = [f"{'run':<20} {'check':<44} {'topic':<34} {'emp. C':>11} result"]
    total = passed = 0
    for label, doc in reports:
        for c in doc["checks"]:
            total += 1
            passed += bool(c["passed"])
            emp = c["empirical_C"]
            emp_s = f"{emp:11.4g}" if isinstance(emp, (int, float)) else f"{emp:>11}"
            lines.append(f"{label:<20} {c['name']:<44} {c.get('topic', ''):<34} {emp_s} "
                         f"{'pass' if c['passed'] else 'FAIL'}")
    lines.append(f"{passed}/{total} checks passed")
    return "\n".join(lines)
