"""Figure rendering for evaluation reports and loop history."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .loop import HistoryRow, TerminationCriteria
from .metrics import MetricsReport

__all__ = [
    "save_threshold_curves",
    "save_class_precision",
    "save_history_curves",
    "save_dataset_sizes",
]


def save_threshold_curves(report: MetricsReport, path: str | Path) -> Path:
    """Precision/recall/f1 (and mean precision when present) over the IoU sweep."""
    path = Path(path)
    thresholds = [row.iou for row in report.thresholds]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thresholds, [row.precision for row in report.thresholds], marker="o", label="precision")
    ax.plot(thresholds, [row.recall for row in report.thresholds], marker="s", label="recall")
    ax.plot(thresholds, [row.f1 for row in report.thresholds], marker="^", label="f1")
    if any(row.mean_precision is not None for row in report.thresholds):
        ax.plot(
            thresholds,
            [row.mean_precision for row in report.thresholds],
            marker="d", linestyle="--", label="mean precision",
        )
    ax.set_xlabel("IoU threshold")
    ax.set_ylabel("metric value")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_class_precision(report: MetricsReport, iou: float, path: str | Path) -> Path:
    """Per-class precision bars at one threshold (polygon-raster reports)."""
    path = Path(path)
    row = report.at(iou)
    classes = sorted(row.class_precision or {})
    values = [row.class_precision[c] for c in classes]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.7 * len(classes) + 2), 4))
    ax.bar(classes, values)
    ax.set_ylabel(f"precision at IoU {iou:g}")
    ax.set_ylim(0.0, 1.05)
    ax.tick_params(axis="x", rotation=45)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_history_curves(
    history: Sequence[HistoryRow],
    criteria: TerminationCriteria,
    path: str | Path,
) -> Path:
    """Metric trajectory over iterations with the termination bars drawn in."""
    path = Path(path)
    iterations = [row.iteration for row in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(iterations, [row.precision for row in history], marker="o", label="precision")
    ax.plot(iterations, [row.recall for row in history], marker="s", label="recall")
    ax.plot(iterations, [row.f1 for row in history], marker="^", label="f1")
    ax.axhline(criteria.min_f1, color="gray", linestyle=":", linewidth=1,
               label=f"f1 target {criteria.min_f1:g}")
    ax.axhline(criteria.min_precision, color="lightgray", linestyle=":", linewidth=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel(f"metric at IoU {criteria.iou:g}")
    ax.set_xticks(iterations)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_dataset_sizes(history: Sequence[HistoryRow], path: str | Path) -> Path:
    """Dataset bookkeeping per iteration: training size and sampling counts."""
    path = Path(path)
    iterations = [row.iteration for row in history]
    series = [
        ("training", [row.train_size for row in history]),
        ("recovered", [row.recovered or 0 for row in history]),
        ("sampled", [row.sampled or 0 for row in history]),
        ("auto", [row.auto or 0 for row in history]),
        ("human", [row.human or 0 for row in history]),
    ]
    width = 0.16
    fig, ax = plt.subplots(figsize=(7, 4))
    for offset, (label, values) in enumerate(series):
        xs = [i + (offset - 2) * width for i in iterations]
        ax.bar(xs, values, width=width, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("images")
    ax.set_xticks(iterations)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
