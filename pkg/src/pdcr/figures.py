"""Report figures rendered next to the delimited outputs: convergence
traces, progressive-perturbation curves, and contribution histograms."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .engine import ConvergenceTrace
from .evaluation import AggregateStats, AttributionCurve

__all__ = ["save_trace_figure", "save_curve_figure", "save_histogram_figure"]


def save_trace_figure(traces: Sequence[ConvergenceTrace], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for tr in traces:
        steps = range(1, len(tr.running_ate) + 1)
        ax.plot(steps, tr.running_ate, lw=1.2, label=f"patch {tr.patch_index}")
    ax.axhline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("trials")
    ax.set_ylabel("running mean effect (DSC)")
    ax.grid(True, alpha=0.3)
    if len(traces) <= 12:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_curve_figure(curves: Mapping[str, AttributionCurve], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, curve in curves.items():
        ax.plot(curve.steps, curve.mean_drop, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel("patches perturbed")
    ax.set_ylabel("mean RoI DSC drop")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_histogram_figure(stats: AggregateStats, path: str | Path) -> None:
    edges = stats.bin_edges
    centers = [(a + b) / 2 for a, b in zip(edges, edges[1:])]
    widths = [0.9 * (b - a) for a, b in zip(edges, edges[1:])]
    # contribution axis: positive (red) to the right, negative (blue) left
    colors = ["tab:red" if c > 0 else "tab:blue" for c in centers]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(centers, stats.histogram, width=widths, color=colors, edgecolor="black", lw=0.4)
    ax.set_xlabel("contribution (-ATE)")
    ax.set_ylabel("patches")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
