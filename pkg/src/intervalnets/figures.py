"""Matplotlib rendering for the CLI report paths.

Every figure is written to a file next to its CSV/JSON counterpart; the
delimited output stays the machine-readable source of truth.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "prediction_figure",
    "heatmap_figure",
    "channelwise_figure",
    "benchmark_figure",
]


def prediction_figure(table: dict, path, title: str = "") -> Path:
    """Measured output, point prediction, and shaded prediction interval."""
    fig, ax = plt.subplots(figsize=(9, 4))
    k = table["k"]
    ax.fill_between(k, table["y_lo"], table["y_hi"], alpha=0.3, color="tab:blue", label="interval")
    ax.plot(k, table["y_true"], color="black", lw=0.9, label="measured")
    ax.plot(k, table["y"], color="tab:blue", lw=1.1, label="predicted")
    ax.set_xlabel("sample k")
    ax.set_ylabel("output")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def heatmap_figure(matrix: np.ndarray, columns: list[str], path, title: str = "") -> Path:
    """Elasticity heatmap: output channels by input channels (+bias)."""
    matrix = np.atleast_2d(matrix)
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * matrix.shape[1] + 2), max(3, 0.25 * matrix.shape[0] + 1.5)))
    im = ax.imshow(matrix, aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(columns)), columns, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("output channel")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, label="elasticity")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def channelwise_figure(values: np.ndarray, columns: list[str], path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(columns) + 2), 3.2))
    ax.bar(range(len(columns)), values, color="tab:blue")
    ax.set_xticks(range(len(columns)), columns, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("channel elasticity")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def benchmark_figure(rows: list[dict], path) -> Path:
    """Mean +- std per metric across suite cells."""
    ok = [r for r in rows if r.get("status") == "ok"]
    metrics = ("rmse_x100", "picp", "pinaw_x100", "cwc")
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 3.4))
    names = [r["cell"] for r in ok]
    for ax, metric in zip(np.atleast_1d(axes), metrics):
        means = [r[f"{metric}_mean"] for r in ok]
        stds = [r[f"{metric}_std"] for r in ok]
        ax.bar(range(len(ok)), means, yerr=stds, capsize=3, color="tab:blue")
        ax.set_xticks(range(len(ok)), names, rotation=45, ha="right", fontsize=7)
        ax.set_title(metric, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)
