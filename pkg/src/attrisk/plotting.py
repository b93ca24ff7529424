"""Report figures, written as SVG files.

Every risk figure carries a dashed vertical line at the value expected
under uniform random guessing over the grid.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "attrisk",
    "svg.fonttype": "none",
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "legend.fontsize": 9,
    "figure.figsize": (5.0, 3.4),
    "axes.spines.top": False,
    "axes.spines.right": False,
}

BAR_COLOR = "#4c72b0"
SYN_COLOR = "#dd8452"
PRIOR_COLOR = "#c44e52"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _prior_line(ax, x: float, label: str) -> None:
    ax.axvline(x, color=PRIOR_COLOR, linestyle="--", linewidth=1.2, label=label)
    ax.legend(frameon=False)


def probability_density(values, prior: float, path, title: str = "", xlabel: str = "posterior probability of the truth"):
    """Histogram (density scale) of per-record truth probabilities."""
    values = np.asarray(values, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        hi = max(float(values.max()), prior) * 1.05 if values.size else 1.0
        ax.hist(values, bins=40, range=(0.0, hi), density=True, color=BAR_COLOR, alpha=0.85)
        _prior_line(ax, prior, f"uniform prior = {prior:.4g}")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("density")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def rank_histogram(ranks, n_cells: int, path, title: str = ""):
    """Counts of truth ranks 1..n_cells; the line marks the mean rank of a random guess."""
    ranks = np.asarray(ranks, dtype=int)
    counts = np.bincount(ranks, minlength=n_cells + 1)[1 : n_cells + 1]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(np.arange(1, n_cells + 1), counts, width=0.9, color=BAR_COLOR)
        _prior_line(ax, (n_cells + 1) / 2.0, "uniform guessing")
        if n_cells <= 20:
            ax.set_xticks(np.arange(1, n_cells + 1))
        ax.set_xlabel(f"rank of the truth among {n_cells} guesses")
        ax.set_ylabel("records")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def abs_diff_histogram(values, null_mean: float, path, variable: str):
    """Distance between the truth and the top marginal guess."""
    values = np.asarray(values, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        distinct = np.unique(values)
        if distinct.size <= 12 and np.all(distinct == np.round(distinct)):
            edges = np.arange(distinct.min() - 0.5, distinct.max() + 1.5)
            ax.hist(values, bins=edges, color=BAR_COLOR, rwidth=0.9)
        else:
            ax.hist(values, bins=30, color=BAR_COLOR)
        _prior_line(ax, null_mean, f"uniform guessing = {null_mean:.3g}")
        ax.set_xlabel(f"|top guess - truth| for {variable}")
        ax.set_ylabel("records")
        return _save(fig, path)


def overlay_histogram(confidential, synthetic, path, variable: str, levels=None):
    """Confidential against synthetic values of one variable."""
    conf = np.asarray(confidential)
    syn = [np.asarray(s) for s in synthetic]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if levels is not None:
            k = len(levels)
            x = np.arange(1, k + 1)
            width = 0.8 / (1 + len(syn))
            ax.bar(x - 0.4 + width / 2, np.bincount(conf, minlength=k + 1)[1:], width, label="confidential", color=BAR_COLOR)
            for j, s in enumerate(syn):
                ax.bar(x - 0.4 + width * (j + 1.5), np.bincount(s, minlength=k + 1)[1:], width,
                       label=f"synthetic {j + 1}", color=SYN_COLOR, alpha=0.9 - 0.15 * j)
            ax.set_xticks(x)
            ax.set_xticklabels(levels, rotation=30, ha="right")
            ax.set_ylabel("records")
        else:
            allv = np.concatenate([conf.astype(float)] + [s.astype(float) for s in syn])
            bins = np.histogram_bin_edges(allv, bins=40)
            ax.hist(conf, bins=bins, density=True, histtype="stepfilled", alpha=0.5, color=BAR_COLOR, label="confidential")
            for j, s in enumerate(syn):
                ax.hist(s, bins=bins, density=True, histtype="step", linewidth=1.4, color=SYN_COLOR, label=f"synthetic {j + 1}")
            ax.set_ylabel("density")
        ax.set_xlabel(variable)
        ax.legend(frameon=False)
        return _save(fig, path)
