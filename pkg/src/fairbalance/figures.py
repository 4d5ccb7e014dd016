"""Matplotlib renderers for the sweep heatmaps and aggregate report charts."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def save_sweep_heatmaps(sweep, path) -> None:
    """Accuracy and RMS GAP over the (alpha, beta) grid, one panel each."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8), constrained_layout=True)
    extent = (float(sweep.alphas[0]), float(sweep.alphas[-1]),
              float(sweep.betas[0]), float(sweep.betas[-1]))
    panels = ((axes[0], sweep.accuracy, "dev accuracy"), (axes[1], sweep.rms_gap, "dev RMS gap"))
    for ax, grid, title in panels:
        image = ax.imshow(grid.T, origin="lower", extent=extent, aspect="auto", cmap="viridis")
        ax.set_xlabel("alpha")
        ax.set_ylabel("beta")
        ax.set_title(title)
        fig.colorbar(image, ax=ax)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_report_charts(summary: list[dict], path) -> None:
    """Accuracy vs gap scatter with error bars, plus a trade-off bar chart."""
    fig, (left, right) = plt.subplots(1, 2, figsize=(11, 4.2), constrained_layout=True)
    for row in summary:
        left.errorbar(
            row["accuracy_mean"], row["rms_gap_mean"],
            xerr=row["accuracy_std"], yerr=row["rms_gap_std"],
            fmt="o", capsize=3, label=row["model"],
        )
    left.set_xlabel("accuracy")
    left.set_ylabel("RMS gap")
    left.set_title("accuracy vs fairness (mean over seeds)")
    left.legend(fontsize=8)
    labels = [row["model"] for row in summary]
    right.bar(np.arange(len(summary)), [row["tradeoff"] for row in summary], color="tab:blue")
    right.set_xticks(np.arange(len(summary)))
    right.set_xticklabels(labels, rotation=40, ha="right", fontsize=8)
    right.set_ylabel("trade-off (lower is better)")
    right.set_title("distance to the ideal model")
    fig.savefig(path, dpi=150)
    plt.close(fig)
