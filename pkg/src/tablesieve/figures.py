"""Evaluation figures rendered to image files next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import DataError
from .evaluation import LABELS

_METRIC_GROUPS = ["layout F1", "genuine F1", "weighted F1"]


def save_metric_bars(reports, out_path) -> Path:
    """Grouped bar chart of per-class and weighted F1 for each report.

    reports: list of (name, EvalReport), same shape report_csv takes.
    """
    if not reports:
        raise DataError("need at least one report to plot")
    names = [name for name, _ in reports]
    values = np.array(
        [
            [rep.per_class["layout"].f1, rep.per_class["genuine"].f1, rep.weighted.f1]
            for _, rep in reports
        ]
    )
    x = np.arange(len(names))
    width = 0.8 / len(_METRIC_GROUPS)
    fig, ax = plt.subplots(figsize=(max(6.0, 1.8 * len(names)), 4.0))
    for k, metric in enumerate(_METRIC_GROUPS):
        offset = (k - (len(_METRIC_GROUPS) - 1) / 2) * width
        bars = ax.bar(x + offset, values[:, k], width, label=metric)
        ax.bar_label(bars, fmt="%.3f", fontsize=7)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=15, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("F1")
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title("Classifier comparison")
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def save_confusion_heatmap(name: str, conf: dict, out_path) -> Path:
    """2x2 confusion heatmap from the gold_pred count mapping."""
    matrix = np.array(
        [[conf.get(f"{g}_{p}", 0) for p in LABELS] for g in LABELS], dtype=float
    )
    if matrix.sum() <= 0:
        raise DataError("confusion matrix is empty")
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(matrix, cmap="Blues")
    for i in range(2):
        for j in range(2):
            color = "white" if matrix[i, j] > matrix.max() / 2 else "black"
            ax.text(j, i, f"{int(matrix[i, j])}", ha="center", va="center",
                    color=color)
    ax.set_xticks([0, 1], [f"pred {lab}" for lab in LABELS])
    ax.set_yticks([0, 1], [f"gold {lab}" for lab in LABELS])
    ax.set_title(name)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
