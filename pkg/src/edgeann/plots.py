"""Figure rendering for benchmark curves.

Uses the Agg backend so report generation works headless; every function
writes a file and returns its path.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .bench import CurvePoint  # noqa: E402


def _grouped(points: Sequence[CurvePoint]) -> dict[str, list[CurvePoint]]:
    groups: dict[str, list[CurvePoint]] = {}
    for pt in points:
        groups.setdefault(pt.variant, []).append(pt)
    for name in groups:
        groups[name].sort(key=lambda pt: pt.knob)
    return groups


def plot_recall_cost(points: Sequence[CurvePoint], path,
                     x_field: str = "mean_dist_comps") -> Path:
    """Recall against cost, one line per variant."""
    if not points:
        raise ValueError("nothing to plot")
    if x_field not in ("mean_dist_comps", "p90_dist_comps", "p90_wall_ms"):
        raise ValueError(f"unsupported x_field {x_field!r}")
    labels = {
        "mean_dist_comps": "mean distance computations per query",
        "p90_dist_comps": "p90 distance computations per query",
        "p90_wall_ms": "p90 wall time (ms)",
    }
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name, group in sorted(_grouped(points).items()):
        xs = [getattr(pt, x_field) for pt in group]
        ys = [pt.recall_at_k for pt in group]
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(labels[x_field])
    ax.set_ylabel("recall@k")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_recall_vs_knob(points: Sequence[CurvePoint], path) -> Path:
    """Recall against the raw effort knob, one line per variant."""
    if not points:
        raise ValueError("nothing to plot")
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for name, group in sorted(_grouped(points).items()):
        ax.plot([pt.knob for pt in group],
                [pt.recall_at_k for pt in group], marker="o", label=name)
    ax.set_xlabel("effort knob")
    ax.set_ylabel("recall@k")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
