"""
Experiment Reports
==================

JSON report plus flat CSV tables per run. Reports carry no wall-clock
timestamps so a rerun with the same settings writes identical files.
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from . import __version__

logger = logging.getLogger(__name__)


def summarize(values: Sequence[float]) -> Dict[str, float]:
    values = np.asarray([v for v in values if v is not None], dtype=float)
    if values.size == 0:
        return {"n": 0, "mean": float("nan"), "std": float("nan"), "median": float("nan"),
                "min": float("nan"), "max": float("nan")}
    return {
        "n": int(values.size),
        "mean": float(values.mean()),
        "std": float(values.std()),
        "median": float(np.median(values)),
        "min": float(values.min()),
        "max": float(values.max()),
    }


@dataclass
class Table:
    header: List[str]
    rows: List[list] = field(default_factory=list)

    def add(self, *row) -> None:
        self.rows.append(list(row))


@dataclass
class Report:
    protocol: str
    config: Dict
    class_names: List[str]
    results: Dict = field(default_factory=dict)
    checks: Dict[str, bool] = field(default_factory=dict)
    extras: Dict = field(default_factory=dict)
    tables: Dict[str, Table] = field(default_factory=dict)
    version: str = __version__

    def table(self, name: str, header: Sequence[str]) -> Table:
        if name not in self.tables:
            self.tables[name] = Table(list(header))
        return self.tables[name]

    def to_dict(self) -> Dict:
        return {
            "protocol": self.protocol,
            "version": self.version,
            "config": self.config,
            "class_names": self.class_names,
            "results": self.results,
            "checks": self.checks,
            "extras": self.extras,
        }


def _builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}")


def report_json(report: Report) -> str:
    return json.dumps(report.to_dict(), default=_builtin, sort_keys=True, indent=2)


def write_report(report: Report, output_dir) -> List[Path]:
    """Write <protocol>.json and one <protocol>_<table>.csv per table; returns the written paths."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = [output_dir / f"{report.protocol}.json"]
    paths[0].write_text(report_json(report))

    for name, table in sorted(report.tables.items()):
        path = output_dir / f"{report.protocol}_{name}.csv"
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(table.header)
            writer.writerows(table.rows)
        paths.append(path)

    logger.info(f"Report written to {paths[0]}")
    return paths


def print_report_summary(report: Report) -> None:
    print("=" * 60)
    print(f"REPORT: {report.protocol}")
    print("=" * 60)
    for name, table in sorted(report.tables.items()):
        if name != "summary":
            continue
        for row in table.rows:
            print("  " + "  ".join(str(v) if not isinstance(v, float) else f"{v:.4f}" for v in row))
    for name, held in sorted(report.checks.items()):
        print(f"  {'✅' if held else '❌'} {name}")
    print("=" * 60)
