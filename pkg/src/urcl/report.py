"""Aggregate run outputs into a strategy-by-segment comparison with figures.

``generate_report`` scans a directory tree for ``summary.csv`` files (one per
run), averages repeated runs of the same strategy (e.g. over seeds), writes a
``comparison.csv`` shaped strategy x segment, and renders bar charts of the
error metrics plus the training-loss curves to PNG files next to it.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .exceptions import IngestError
from .training import LOSSES_FILE, SUMMARY_FILE

COMPARISON_FILE = "comparison.csv"


def _read_summary(path: Path) -> list[dict]:
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


def _segment_sort_key(name: str) -> tuple[int, str]:
    if name == "base":
        return (0, name)
    if name.startswith("incremental_"):
        return (1 + int(name.split("_")[1]), name)
    return (10_000, name)


def collect_summaries(root: Path) -> dict[tuple[str, str], dict[str, float]]:
    """Mean mae/rmse keyed by (strategy, segment) over all found summaries."""
    sums: dict[tuple[str, str], dict[str, list[float]]] = defaultdict(
        lambda: {"mae": [], "rmse": []}
    )
    found = sorted(root.rglob(SUMMARY_FILE))
    if not found:
        raise IngestError(f"no {SUMMARY_FILE} files under {root}")
    for path in found:
        for row in _read_summary(path):
            key = (row["strategy"], row["segment"])
            sums[key]["mae"].append(float(row["mae"]))
            sums[key]["rmse"].append(float(row["rmse"]))
    return {
        key: {metric: float(np.mean(values)) for metric, values in metrics.items()}
        for key, metrics in sums.items()
    }


def _plot_metric_bars(table: dict[tuple[str, str], dict[str, float]], metric: str,
                      path: Path) -> None:
    strategies = sorted({key[0] for key in table})
    segments = sorted({key[1] for key in table}, key=_segment_sort_key)
    width = 0.8 / max(1, len(strategies))
    x = np.arange(len(segments))
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(segments), 3.4))
    for offset, strategy in enumerate(strategies):
        heights = [table.get((strategy, segment), {}).get(metric, np.nan)
                   for segment in segments]
        ax.bar(x + offset * width, heights, width=width, label=strategy)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(segments, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(metric.upper())
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _plot_loss_curves(root: Path, path: Path) -> bool:
    files = sorted(root.rglob(LOSSES_FILE))
    files = [f for f in files if f.stat().st_size > 0]
    if not files:
        return False
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for loss_file in files:
        with open(loss_file, newline="") as handle:
            rows = list(csv.DictReader(handle))
        if not rows:
            continue
        steps = [int(r["step"]) for r in rows]
        total = [float(r["total"]) for r in rows]
        ax.plot(steps, total, linewidth=0.8, label=str(loss_file.parent.name))
    ax.set_xlabel("training step")
    ax.set_ylabel("total loss")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return True


def generate_report(out_root: str | Path, figures: bool = True) -> Path:
    """Build comparison.csv (plus PNG figures) from runs under ``out_root``."""
    root = Path(out_root)
    table = collect_summaries(root)
    strategies = sorted({key[0] for key in table})
    segments = sorted({key[1] for key in table}, key=_segment_sort_key)
    comparison = root / COMPARISON_FILE
    with open(comparison, "w", newline="") as handle:
        writer = csv.writer(handle)
        header = ["strategy"]
        for segment in segments:
            header += [f"{segment}_mae", f"{segment}_rmse"]
        writer.writerow(header)
        for strategy in strategies:
            row = [strategy]
            for segment in segments:
                cell = table.get((strategy, segment))
                row += ([f"{cell['mae']:.6f}", f"{cell['rmse']:.6f}"]
                        if cell else ["", ""])
            writer.writerow(row)
    if figures:
        _plot_metric_bars(table, "mae", root / "comparison_mae.png")
        _plot_metric_bars(table, "rmse", root / "comparison_rmse.png")
        _plot_loss_curves(root, root / "loss_curves.png")
    return comparison
