"""Figure rendering for the report path (headless matplotlib).

Figures are written next to the delimited outputs by the CLI; the stats
functions themselves stay plot-free.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def plot_learning_curves(labeled_reports, out_path, title="Normalized return by checkpoint"):
    """One mean-return curve per (label, EvalReport) pair."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, report in labeled_reports:
        ax.plot(report.steps(), report.means(), marker="o", markersize=3, label=label)
    ax.set_xlabel("gradient step")
    ax.set_ylabel("normalized return")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(labeled_reports) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_variance_profile(labeled_reports, out_path, title="Per-checkpoint return variance"):
    """Per-checkpoint variances on a log scale, one series per report."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for label, report in labeled_reports:
        ax.plot(report.steps(), report.variances(), marker="s", markersize=3, label=label)
    ax.set_xlabel("gradient step")
    ax.set_ylabel("return variance")
    ax.set_yscale("log")
    ax.set_title(title)
    ax.grid(True, alpha=0.3, which="both")
    if len(labeled_reports) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
