"""Report emission: normalized score tables, rank histogram, learning curve.

Tables show normalized scores only (raw scores live in scores.csv). SVG
output is made reproducible by pinning the matplotlib hash salt and
stripping the date metadata.
"""

from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "txnlm"

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .probe import TASK_SPECS, ScoreEntry, rank_distribution  # noqa: E402
from .util import provenance_line  # noqa: E402

GROUP_ORDER = ("demographics", "risk", "banking", "geolocation")

_SAVEFIG_KW = {"metadata": {"Date": None}, "format": "svg"}


def primary_rows(entries: list[ScoreEntry]):
    """(task, primary metric) → {method: normalized}, in task-table order."""
    methods = sorted({e.method for e in entries})
    lookup = {(e.task, e.metric, e.method): e.normalized for e in entries}
    rows = defaultdict(list)
    for task_id, spec in TASK_SPECS.items():
        primary = spec.metric_ids[0]
        cells = {m: lookup.get((task_id, primary, m)) for m in methods}
        if all(v is None for v in cells.values()):
            continue
        rows[spec.group].append((task_id, primary, cells))
    return methods, rows


def write_group_tables(entries: list[ScoreEntry], out_dir: str, cfg_hash: str,
                       seed: int) -> list[str]:
    """One CSV per task group plus a combined markdown file."""
    methods, rows = primary_rows(entries)
    paths = []
    md_lines = []
    for group in GROUP_ORDER:
        if group not in rows:
            continue
        path = os.path.join(out_dir, f"table_{group}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(provenance_line(cfg_hash, seed))
            fh.write("task,metric," + ",".join(methods) + "\n")
            for task_id, metric, cells in rows[group]:
                vals = ",".join("" if cells[m] is None else f"{cells[m]:.4f}"
                                for m in methods)
                fh.write(f"{task_id},{metric},{vals}\n")
        paths.append(path)

        md_lines.append(f"## {group.capitalize()}\n")
        md_lines.append("| task | metric | " + " | ".join(methods) + " |")
        md_lines.append("|---" * (2 + len(methods)) + "|")
        for task_id, metric, cells in rows[group]:
            vals = " | ".join("—" if cells[m] is None else f"{cells[m]:.4f}"
                              for m in methods)
            md_lines.append(f"| {task_id} | {metric} | {vals} |")
        md_lines.append("")

    md_path = os.path.join(out_dir, "tables.md")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(f"<!-- config_hash={cfg_hash} seed={seed} -->\n")
        fh.write("# Normalized probe scores (min-max across methods)\n\n")
        fh.write("\n".join(md_lines))
    paths.append(md_path)
    return paths


def write_rank_histogram_svg(entries: list[ScoreEntry], path: str) -> None:
    """Bar chart of rank counts per method across all (task, metric) pairs."""
    hist = rank_distribution(entries)
    methods = sorted(hist)
    n_ranks = len(methods)
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(1, len(methods))
    for i, m in enumerate(methods):
        xs = [r + 1 + (i - (len(methods) - 1) / 2) * width for r in range(n_ranks)]
        ax.bar(xs, hist[m], width=width, label=m)
    ax.set_xticks(range(1, n_ranks + 1))
    ax.set_xlabel("rank (1 = best)")
    ax.set_ylabel("(task, metric) count")
    ax.set_title("Rank distribution across tasks and metrics")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def read_probe_log(path: str):
    """Parse probe_log.csv → {(task, metric): [(step, score), ...]}."""
    curves: dict[tuple[str, str], list[tuple[int, float]]] = defaultdict(list)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("step,"):
                continue
            step, task, metric, score = line.split(",")
            curves[(task, metric)].append((int(step), float(score)))
    for series in curves.values():
        series.sort()
    return dict(curves)


def write_learning_curve_svg(probe_log_path: str, path: str) -> None:
    """Probe score versus pretraining step for each logged task curve."""
    curves = read_probe_log(probe_log_path)
    if not curves:
        raise ValueError(f"{probe_log_path} contains no probe rows")
    fig, ax = plt.subplots(figsize=(7, 4))
    for (task, metric), series in sorted(curves.items()):
        xs = [s for s, _ in series]
        ys = [v for _, v in series]
        ax.plot(xs, ys, marker="o", label=f"{task} ({metric})")
    ax.set_xlabel("pretraining step")
    ax.set_ylabel("probe score")
    ax.set_title("Probe performance during pretraining")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
