"""Paper-style figures from run metrics.

All output is deterministic SVG: fixed style, pinned hash salt, no
timestamps, so renders of the same inputs are byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .runset import RunSet, SchemaError

matplotlib.rcParams.update({
    "svg.hashsalt": "dials-plots",
    "svg.fonttype": "none",  # keep text as text: smaller, diffable output
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
})

MODE_COLORS = {
    "dials": "tab:green",
    "gs": "tab:orange",
    "untrained": "tab:purple",
}

_SAVE_KW = dict(format="svg", metadata={"Date": None})


def _mode_label(mode: str, F: int | None = None) -> str:
    if mode == "gs":
        return "GS"
    if mode == "untrained":
        return "untrained-DIALS"
    if F:
        return f"DIALS F={F // 1000}K" if F >= 1000 else f"DIALS F={F}"
    return "DIALS"


def _mean_return_series(run):
    """Per eval point: (global_step, mean over agents of eval_return)."""
    by_step: dict = {}
    for row in run.eval_rows():
        by_step.setdefault(row["global_step"], []).append(row["eval_return"])
    steps = sorted(by_step)
    return steps, [float(np.mean(by_step[s])) for s in steps]


def _require_nonempty(runset: RunSet):
    if not len(runset):
        raise SchemaError("empty run set")


def plot_learning_curves(runset: RunSet, out_path) -> None:
    """Mean return vs steps, mean +- standard error across seeds per mode;
    one panel per environment."""
    _require_nonempty(runset)
    envs = runset.environments()
    fig, axes = plt.subplots(1, len(envs), figsize=(5 * len(envs), 3.4),
                             squeeze=False)
    for ax, env in zip(axes[0], envs):
        env_runs = [r for r in runset.runs if r.env == env]
        groups: dict = {}
        for run in env_runs:
            groups.setdefault(run.mode, []).append(run)
        for mode in sorted(groups):
            series = [_mean_return_series(r) for r in groups[mode]]
            steps = series[0][0]
            for s, _ in series:
                if s != steps:
                    raise SchemaError(
                        f"{env}/{mode}: runs disagree on evaluation steps")
            values = np.array([v for _, v in series])  # (seeds, points)
            mean = values.mean(axis=0)
            se = values.std(axis=0, ddof=1) / np.sqrt(len(values)) \
                if len(values) > 1 else np.zeros(len(steps))
            color = MODE_COLORS.get(mode, "tab:blue")
            ax.plot(steps, mean, label=_mode_label(mode), color=color)
            ax.fill_between(steps, mean - se, mean + se, alpha=0.25,
                            color=color, linewidth=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("mean return")
        ax.set_title(env)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def plot_runtime_bars(runset: RunSet, out_path) -> None:
    """Total runtime per (mode, grid size), log2 vertical axis, annotated
    with the GS-over-DIALS speedup per grid size."""
    _require_nonempty(runset)
    totals: dict = {}
    for run in runset.runs:
        total = float(run.runtime.get("total_s", 0.0))
        if total <= 0.0:
            raise SchemaError(
                f"run (mode={run.mode}, seed={run.seed}): total runtime is "
                "zero; cannot draw a log-scale bar")
        totals.setdefault((run.mode, run.grid_side), []).append(total)
    grids = sorted({g for _, g in totals})
    modes = sorted({m for m, _ in totals})
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(grids), 3.4))
    width = 0.8 / len(modes)
    for k, mode in enumerate(modes):
        xs, ys = [], []
        for i, g in enumerate(grids):
            if (mode, g) in totals:
                xs.append(i + (k - (len(modes) - 1) / 2) * width)
                ys.append(float(np.mean(totals[(mode, g)])))
        ax.bar(xs, ys, width=width, label=_mode_label(mode),
               color=MODE_COLORS.get(mode, "tab:blue"))
    for i, g in enumerate(grids):
        gs_t = totals.get(("gs", g))
        dials_t = totals.get(("dials", g))
        if gs_t and dials_t:
            ratio = float(np.mean(gs_t)) / float(np.mean(dials_t))
            top = max(float(np.mean(v)) for (m, gg), v in totals.items() if gg == g)
            ax.text(i, top * 1.15, f"{ratio:.1f}x", ha="center", fontsize=9)
    ax.set_yscale("log", base=2)
    ax.set_xticks(range(len(grids)))
    ax.set_xticklabels([f"{g}x{g}" for g in grids])
    ax.set_xlabel("grid size")
    ax.set_ylabel("total runtime (s)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def plot_ce_curves(runset: RunSet, out_path) -> None:
    """Influence-predictor cross-entropy against wall-clock time, one curve
    per (mode, F) group averaged over seeds and agents."""
    _require_nonempty(runset)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    groups = runset.groups(by=("mode", "F"))
    palette = plt.get_cmap("tab10")
    for k, key in enumerate(sorted(groups)):
        mode, F = key
        runs = groups[key]
        curves = []
        for run in runs:
            by_step: dict = {}
            for row in run.eval_rows():
                if row["aip_ce"] is None:
                    continue
                by_step.setdefault(row["global_step"], {"ce": [], "wall": row["wall_s"]})
                by_step[row["global_step"]]["ce"].append(row["aip_ce"])
            if not by_step:
                continue
            steps = sorted(by_step)
            curves.append((
                [by_step[s]["wall"] for s in steps],
                [float(np.mean(by_step[s]["ce"])) for s in steps],
            ))
        if not curves:
            continue
        walls = np.mean([c[0] for c in curves], axis=0)
        ces = np.mean([c[1] for c in curves], axis=0)
        ax.plot(walls, ces, marker="o", markersize=2.5,
                label=_mode_label(mode, F), color=palette(k % 10))
    if not ax.lines:
        raise SchemaError("no influence-predictor CE values in the run set")
    ax.set_xlabel("wall-clock time (s)")
    ax.set_ylabel("evaluation CE (nats)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
