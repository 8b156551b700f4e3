"""Loading and grouping of run metrics files.

A run directory holds ``metrics.csv`` (the fixed seven-column table) and
``manifest.json`` (config, seed, runtime breakdown).  A RunSet groups
runs by (mode, F) with one entry per seed.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

EXPECTED_COLUMNS = ["global_step", "agent_id", "eval_return", "eval_se",
                    "aip_ce", "phase", "wall_s"]


class SchemaError(ValueError):
    """A metrics file does not match the expected table schema."""


@dataclass
class Run:
    mode: str
    F: int
    seed: int
    env: str
    grid_side: int
    rows: list
    runtime: dict

    def eval_rows(self):
        return [r for r in self.rows if r["phase"] == "eval"]


@dataclass
class RunSet:
    runs: list = field(default_factory=list)

    def __len__(self):
        return len(self.runs)

    def groups(self, by=("mode",)):
        """Dict mapping the grouping key to lists of runs (all seeds)."""
        out: dict = {}
        for run in self.runs:
            key = tuple(getattr(run, k) for k in by)
            out.setdefault(key, []).append(run)
        return out

    def environments(self):
        return sorted({r.env for r in self.runs})


def _parse_row(raw: dict) -> dict:
    return {
        "global_step": int(raw["global_step"]),
        "agent_id": int(raw["agent_id"]),
        "eval_return": float(raw["eval_return"]) if raw["eval_return"] else None,
        "eval_se": float(raw["eval_se"]) if raw["eval_se"] else None,
        "aip_ce": float(raw["aip_ce"]) if raw["aip_ce"] else None,
        "phase": raw["phase"],
        "wall_s": float(raw["wall_s"]) if raw["wall_s"] else 0.0,
    }


def load_run(run_dir) -> Run:
    metrics_path = os.path.join(run_dir, "metrics.csv")
    manifest_path = os.path.join(run_dir, "manifest.json")
    if not os.path.exists(metrics_path):
        raise SchemaError(f"{run_dir}: missing metrics.csv")
    if not os.path.exists(manifest_path):
        raise SchemaError(f"{run_dir}: missing manifest.json")
    with open(metrics_path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = reader.fieldnames or []
        missing = [c for c in EXPECTED_COLUMNS if c not in columns]
        if missing:
            raise SchemaError(
                f"{metrics_path}: missing column(s) {', '.join(missing)}")
        extra = [c for c in columns if c not in EXPECTED_COLUMNS]
        if extra:
            raise SchemaError(
                f"{metrics_path}: unexpected column(s) {', '.join(extra)}")
        rows = [_parse_row(r) for r in reader]
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    cfg = manifest.get("config", {})
    return Run(
        mode=cfg.get("mode", "unknown"),
        F=int(cfg.get("F", 0)),
        seed=int(cfg.get("seed", 0)),
        env=cfg.get("env", "unknown"),
        grid_side=int(cfg.get("grid_side", 0)),
        rows=rows,
        runtime=manifest.get("runtime_breakdown", {}),
    )


def load_runset(root) -> RunSet:
    """Load every run directory found under root (or root itself)."""
    runs = []
    if os.path.exists(os.path.join(root, "metrics.csv")):
        runs.append(load_run(root))
    else:
        for name in sorted(os.listdir(root)):
            path = os.path.join(root, name)
            if os.path.isdir(path) and os.path.exists(os.path.join(path, "metrics.csv")):
                runs.append(load_run(path))
    if not runs:
        raise SchemaError(f"no runs found under {root}")
    return RunSet(runs=runs)
