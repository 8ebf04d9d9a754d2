"""Matplotlib figure rendering for ingest and evaluation reports.

Figures are written next to the delimited outputs (PNG, headless backend).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from conseq.labels import LABEL_TITLES, LABELS


def save_label_histogram(counts, total: int, path: str | Path) -> Path:
    """Bar chart of documents per label with the multi-label total."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    x = np.arange(len(LABEL_TITLES))
    bars = ax.bar(x, counts, color="#4878a8")
    ax.bar_label(bars, padding=2, fontsize=8)
    ax.set_xticks(x)
    ax.set_xticklabels(LABEL_TITLES, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("instances")
    ax.set_title(f"Label composition (total: {total})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_confusion_heatmap(grid, path: str | Path) -> Path:
    """Heatmap of the dominant-true vs predicted-argmax confusion grid."""
    path = Path(path)
    grid = np.asarray(grid)
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(grid, cmap="Blues")
    ax.set_xticks(range(len(LABEL_TITLES)))
    ax.set_yticks(range(len(LABEL_TITLES)))
    ax.set_xticklabels(LABEL_TITLES, rotation=30, ha="right", fontsize=8)
    ax.set_yticklabels(LABEL_TITLES, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = grid.max() / 2 if grid.max() else 0.5
    for i in range(grid.shape[0]):
        for j in range(grid.shape[1]):
            color = "white" if grid[i, j] > threshold else "black"
            ax.text(j, i, str(int(grid[i, j])), ha="center", va="center",
                    color=color, fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_metric_bars(report, path: str | Path) -> Path:
    """Grouped bars: accuracy/precision/recall/F1 per label."""
    path = Path(path)
    keys = ("accuracy", "precision", "recall", "f1")
    fig, ax = plt.subplots(figsize=(7.2, 3.8))
    x = np.arange(len(LABEL_TITLES))
    width = 0.2
    for k, key in enumerate(keys):
        values = [report.per_label[name][key] for name in LABELS]
        ax.bar(x + (k - 1.5) * width, values, width, label=key)
    ax.set_xticks(x)
    ax.set_xticklabels(LABEL_TITLES, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8, ncol=4)
    ax.set_title(f"Per-label metrics (micro-F1 {report.micro['f1']:.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
