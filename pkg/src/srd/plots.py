"""Figure rendering for the report path.

Figures are written to files next to the JSON/JSONL outputs; everything uses
the Agg backend so the CLI never needs a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import TOXIC_THRESHOLD, HistogramPdf, OlsFit

_GROUP_COLORS = ("tab:red", "tab:blue", "tab:green", "tab:orange")


def save_score_distribution(
    groups: Mapping[str, HistogramPdf],
    path: str | Path,
    threshold: float = TOXIC_THRESHOLD,
) -> Path:
    """Overlay the density histograms of one or more score groups.

    A dashed vertical line marks the toxic threshold.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for color, (name, pdf) in zip(_GROUP_COLORS, groups.items()):
        edges = np.asarray(pdf.bin_edges)
        widths = np.diff(edges)
        ax.bar(
            edges[:-1],
            pdf.densities,
            width=widths,
            align="edge",
            alpha=0.45,
            color=color,
            label=name,
        )
    ax.axvline(threshold, color="black", linestyle="--", linewidth=1)
    ax.set_xlabel("toxicity score")
    ax.set_ylabel("probability density")
    ax.set_xlim(0, 1)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_delta_regression(
    source_scores: Sequence[float],
    deltas: Sequence[float],
    fit: OlsFit,
    path: str | Path,
    xlabel: str = "source toxicity",
    ylabel: str = "toxicity drop",
) -> Path:
    """Scatter of toxicity drops against source toxicity with the fitted line."""
    x = np.asarray(source_scores, dtype=float)
    y = np.asarray(deltas, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(x, y, s=12, alpha=0.6, color="tab:blue")
    grid = np.linspace(x.min(), x.max(), 50)
    ax.plot(
        grid,
        fit.slope * grid + fit.intercept,
        color="tab:red",
        label=f"slope={fit.slope:.3f}, intercept={fit.intercept:.3f}",
    )
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
