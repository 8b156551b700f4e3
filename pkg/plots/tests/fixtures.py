"""Deterministic synthetic run directories for figure tests.

The numbers are hand-shaped, not sampled: learning curves that rise at
mode-dependent rates, runtimes with a known 40x ratio, and CE series
that drop at retraining rounds.
"""

import csv
import json
import os

COLUMNS = ["global_step", "agent_id", "eval_return", "eval_se",
           "aip_ce", "phase", "wall_s"]


def _write_run(root, name, config, runtime, rows):
    run_dir = os.path.join(root, name)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row in rows:
            writer.writerow([row.get(c, "") for c in COLUMNS])
    manifest = {"config": config, "runtime_breakdown": runtime}
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return run_dir


def _eval_rows(steps, returns, ces, wall_per_step=0.001, n_agents=2):
    rows = []
    for step, ret, ce in zip(steps, returns, ces):
        for agent in range(n_agents):
            rows.append({
                "global_step": step,
                "agent_id": agent,
                "eval_return": repr(ret + 0.1 * agent),
                "eval_se": repr(0.05),
                "aip_ce": repr(ce) if ce is not None else "",
                "phase": "eval",
                "wall_s": repr(step * wall_per_step),
            })
    return rows


def curves_fixture(root, modes=("dials", "untrained"), seeds=(0, 1, 2)):
    """Learning-curve runs: dials improves fast, untrained slowly."""
    steps = [0, 1000, 2000, 3000, 4000]
    rates = {"dials": 2.0, "untrained": 0.7, "gs": 1.2}
    for mode in modes:
        for seed in seeds:
            returns = [rates[mode] * (s / 1000.0) + 0.3 * seed for s in steps]
            ces = [5.5 - 0.5 * (s / 1000.0) for s in steps]
            _write_run(
                root, f"{mode}-s{seed}",
                {"mode": mode, "F": 2000, "seed": seed, "env": "warehouse",
                 "grid_side": 2},
                {"total_s": 100.0 + seed,
                 "agents_training_s": 90.0,
                 "data_collection_plus_influence_training_s": 10.0},
                _eval_rows(steps, returns, ces),
            )
    return root


def runtime_fixture(root, ratio=40.0, equal=False):
    """One GS and one DIALS run per grid size with a known runtime ratio."""
    for grid, base in ((2, 60.0), (5, 240.0)):
        dials_total = base
        gs_total = base if equal else base * ratio
        for mode, total in (("dials", dials_total), ("gs", gs_total)):
            _write_run(
                root, f"{mode}-g{grid}",
                {"mode": mode, "F": 2000, "seed": 0, "env": "warehouse",
                 "grid_side": grid},
                {"total_s": total},
                _eval_rows([0, 1000], [0.0, 1.0], [None, None]),
            )
    return root


def runtime_zero_fixture(root):
    _write_run(
        root, "dials-broken",
        {"mode": "dials", "F": 1000, "seed": 0, "env": "warehouse",
         "grid_side": 2},
        {"total_s": 0.0},
        _eval_rows([0], [0.0], [None]),
    )
    return root


def ce_fixture(root):
    """Stepwise CE drops at retraining rounds for small F; flat uniform
    line for the untrained mode."""
    steps = list(range(0, 8001, 1000))
    uniform = 5.545
    # F=2000: retrains at 2000/4000/6000/8000 -> drops after each round
    ces_small_f = []
    level = uniform
    for s in steps:
        if s and s % 2000 == 0:
            level -= 0.9
        ces_small_f.append(level)
    for seed in (0, 1):
        _write_run(
            root, f"dials-F2000-s{seed}",
            {"mode": "dials", "F": 2000, "seed": seed, "env": "warehouse",
             "grid_side": 2},
            {"total_s": 80.0},
            _eval_rows(steps, [s / 4000.0 for s in steps], ces_small_f),
        )
        _write_run(
            root, f"untrained-s{seed}",
            {"mode": "untrained", "F": 8000, "seed": seed, "env": "warehouse",
             "grid_side": 2},
            {"total_s": 50.0},
            _eval_rows(steps, [s / 8000.0 for s in steps],
                       [uniform] * len(steps)),
        )
    return root


def missing_column_fixture(root):
    run_dir = os.path.join(root, "bad")
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([c for c in COLUMNS if c != "aip_ce"])
        writer.writerow([0, 0, 1.0, 0.0, "eval", 0.1])
    with open(os.path.join(run_dir, "manifest.json"), "w") as fh:
        json.dump({"config": {}, "runtime_breakdown": {}}, fh)
    return root
