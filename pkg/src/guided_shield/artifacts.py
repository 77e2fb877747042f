"""Stage artifacts: JSON documents and the per-episode / report CSV files."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable, Sequence

from .env import EpisodeMetrics, Terminal
from .shield import RunReport, format_one_decimal

logger = logging.getLogger(__name__)

POLICY_FILE = "policy.json"
VERDICTS_FILE = "verdicts.json"
REGIONS_FILE = "regions.json"
CLUSTERED_FILE = "clustered.json"
SMT_FILE = "unsafe.smt2"
METRICS_FILE = "metrics.csv"
REPORT_FILE = "report.csv"

METRICS_FIELDS = [
    "mode", "seed", "map", "steps", "invocations", "interventions",
    "collision", "success", "wall_ns",
]
REPORT_FIELDS = [
    "seed", "mode", "episodes", "active_time_pct", "interventions_pct",
    "collisions_pct", "success_pct", "overhead", "gain_pct",
]


def write_json(payload: dict[str, Any], path: str | Path) -> None:
    """Write `payload` with the version stamp every stored document carries."""
    data = {"version": "1.0", "last_updated": datetime.now().isoformat(), **payload}
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(data, f, ensure_ascii=False, indent=2)
    logger.info("wrote %s", target)


def read_json(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    data.pop("version", None)
    data.pop("last_updated", None)
    return data


# === Episode metrics ===

def metrics_row(m: EpisodeMetrics) -> dict[str, Any]:
    return {
        "mode": m.mode,
        "seed": m.seed,
        "map": m.map_id,
        "steps": m.steps,
        "invocations": m.shield_invocations,
        "interventions": m.interventions,
        "collision": m.collisions,
        "success": int(m.success),
        "wall_ns": m.wall_time_ns,
    }


def write_metrics_csv(runs: Iterable[EpisodeMetrics], path: str | Path) -> int:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(target, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_FIELDS)
        writer.writeheader()
        for m in runs:
            writer.writerow(metrics_row(m))
            count += 1
    logger.info("wrote %d episode rows to %s", count, target)
    return count


def read_metrics_csv(path: str | Path) -> list[EpisodeMetrics]:
    runs = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            collision = int(row["collision"])
            success = bool(int(row["success"]))
            terminal = (
                Terminal.COLLISION if collision
                else Terminal.TARGET_REACHED if success
                else Terminal.TIMEOUT
            )
            runs.append(
                EpisodeMetrics(
                    steps=int(row["steps"]),
                    shield_invocations=int(row["invocations"]),
                    interventions=int(row["interventions"]),
                    collisions=collision,
                    success=success,
                    wall_time_ns=int(row["wall_ns"]),
                    terminal=terminal,
                    map_id=int(row["map"]),
                    seed=int(row["seed"]),
                    mode=row["mode"],
                )
            )
    return runs


# === Reports ===

def report_row(r: RunReport) -> dict[str, Any]:
    row = asdict(r)
    row["seed"] = "all" if r.seed is None else r.seed
    for key in ("active_time_pct", "interventions_pct", "collisions_pct", "success_pct"):
        row[key] = format_one_decimal(row[key])
    row["overhead"] = format_one_decimal(r.overhead)
    row["gain_pct"] = "" if r.gain_pct is None else format_one_decimal(r.gain_pct)
    return {k: row[k] for k in REPORT_FIELDS}


def write_report_csv(reports: Sequence[RunReport], path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for r in reports:
            writer.writerow(report_row(r))
    logger.info("wrote %d report rows to %s", len(reports), target)
