"""Recall and cost measurement for interchangeable search strategies.

A sweep runs each variant's search callable over a shared query set at a
grid of effort knobs (probe budgets, multiprobe radii, subset counts) and
collapses per-query statistics into one curve point per (variant, knob).
Reports are written as a delimited file plus a plain-text summary; figure
rendering is left to callers so this module stays display-free.

Wall-clock numbers are recorded for visibility but make poor assertions:
they move with the host.  The distance-computation counters are the
portable cost measure.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import ResultSet, SearchStats, as_matrix, rng_stream

CSV_COLUMNS = ("variant", "knob", "recall_at_k", "p90_wall_ms",
               "p90_dist_comps", "mean_dist_comps", "seed")


def recall_at_k(results: Sequence[ResultSet],
                ground_truth: Sequence[Sequence[int]],
                k: int | None = None) -> float:
    """Fraction of queries whose true nearest entity made the top-k.

    The true nearest is the first entry of each ground-truth row; extra
    entries are ignored.
    """
    if len(results) != len(ground_truth):
        raise ValueError(
            f"{len(results)} results but {len(ground_truth)} ground-truth rows"
        )
    if len(results) == 0:
        raise ValueError("need at least one query")
    hits = 0
    for result, truth in zip(results, ground_truth):
        if len(truth) == 0:
            raise ValueError("ground-truth rows must be non-empty")
        ids = result.ids()
        if k is not None:
            ids = ids[:k]
        if truth[0] in ids:
            hits += 1
    return hits / len(results)


def percentile(values, p: float) -> float:
    """Nearest-rank percentile: the ceil(p*n/100)-th smallest value."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0 < p <= 100:
        raise ValueError(f"p must lie in (0, 100], got {p}")
    rank = max(1, math.ceil(p * arr.size / 100.0))
    return float(np.sort(arr)[rank - 1])


def sample_traffic(profile, num_queries: int, seed: int = 0) -> np.ndarray:
    """Draw query target rows from a likelihood profile."""
    if num_queries < 0:
        raise ValueError("num_queries must be non-negative")
    p = np.asarray(getattr(profile, "probabilities", profile),
                   dtype=np.float64).ravel()
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("profile must be non-negative and finite")
    total = p.sum()
    if total <= 0:
        raise ValueError("profile must have positive mass")
    rng = rng_stream(seed, "traffic")
    return rng.choice(p.size, size=num_queries, p=p / total).astype(np.int64)


@dataclass(frozen=True)
class GateConfig:
    """Pass/fail thresholds for one deployment target."""

    min_recall: float = 0.80
    max_p90_wall_ms: float = 80.0
    name: str = "default"


DEFAULT_GATES = GateConfig()


@dataclass(frozen=True)
class CurvePoint:
    variant: str
    knob: float
    recall_at_k: float
    p90_wall_ms: float
    p90_dist_comps: float
    mean_dist_comps: float
    seed: int

    def passes(self, gates: GateConfig) -> bool:
        return (self.recall_at_k >= gates.min_recall
                and self.p90_wall_ms <= gates.max_p90_wall_ms)


@dataclass(frozen=True)
class SweepVariant:
    """A named search strategy: callable of (query_vector, knob).

    ``knobs`` overrides the sweep-wide grid for this variant when set.
    """

    name: str
    search: Callable[[np.ndarray, float], tuple[ResultSet, SearchStats]]
    knobs: tuple | None = None


def run_sweep(variants: Sequence[SweepVariant], knobs: Sequence,
              queries, ground_truth: Sequence[Sequence[int]],
              k: int = 10, seed: int = 0) -> list[CurvePoint]:
    """Measure every variant at every knob over the shared query set."""
    if not variants:
        raise ValueError("need at least one variant")
    q = as_matrix(queries, name="queries")
    if q.shape[0] != len(ground_truth):
        raise ValueError(
            f"{q.shape[0]} queries but {len(ground_truth)} ground-truth rows"
        )
    points: list[CurvePoint] = []
    for variant in variants:
        grid = variant.knobs if variant.knobs is not None else tuple(knobs)
        if not grid:
            raise ValueError(f"variant {variant.name!r} has an empty knob grid")
        for knob in grid:
            results = []
            walls = []
            costs = []
            for row in q:
                result, stats = variant.search(row, knob)
                results.append(result)
                walls.append(stats.wall_time * 1e3)
                costs.append(stats.distance_computations)
            points.append(CurvePoint(
                variant=variant.name,
                knob=float(knob),
                recall_at_k=recall_at_k(results, ground_truth, k),
                p90_wall_ms=percentile(walls, 90),
                p90_dist_comps=percentile(costs, 90),
                mean_dist_comps=float(np.mean(costs)),
                seed=seed,
            ))
    return points


def probes_to_recall(points: Sequence[CurvePoint], target_recall: float,
                     cost_field: str = "mean_dist_comps") -> float | None:
    """Cost needed to reach a recall target along one variant's curve.

    Points must all belong to one variant; they are ordered by knob and
    the cost is linearly interpolated between the two points bracketing
    the target.  Returns None when the curve never reaches it.
    """
    if not points:
        raise ValueError("need at least one curve point")
    names = {pt.variant for pt in points}
    if len(names) != 1:
        raise ValueError(f"points span several variants: {sorted(names)}")
    if cost_field not in ("mean_dist_comps", "p90_dist_comps", "knob"):
        raise ValueError(f"unsupported cost field {cost_field!r}")
    ordered = sorted(points, key=lambda pt: pt.knob)
    costs = [getattr(pt, cost_field) for pt in ordered]
    recalls = [pt.recall_at_k for pt in ordered]
    if recalls[0] >= target_recall:
        return float(costs[0])
    for i in range(1, len(ordered)):
        if recalls[i] >= target_recall:
            r0, r1 = recalls[i - 1], recalls[i]
            c0, c1 = costs[i - 1], costs[i]
            span = r1 - r0
            if span <= 0:
                return float(c1)
            return float(c0 + (c1 - c0) * (target_recall - r0) / span)
    return None


def write_report(points: Sequence[CurvePoint], out_dir, k: int,
                 gates: GateConfig | None = None) -> tuple[Path, Path]:
    """Write ``curve.csv`` and ``summary.txt``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "curve.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for pt in points:
            writer.writerow([pt.variant, f"{pt.knob:g}",
                             f"{pt.recall_at_k:.6f}",
                             f"{pt.p90_wall_ms:.4f}",
                             f"{pt.p90_dist_comps:.2f}",
                             f"{pt.mean_dist_comps:.2f}",
                             pt.seed])
    lines = ["benchmark summary", f"k={k} points={len(points)}"]
    if gates is not None:
        lines.append(
            f"gates[{gates.name}]: recall_at_k >= {gates.min_recall:g} "
            f"and p90_wall_ms <= {gates.max_p90_wall_ms:g}"
        )
    lines.append("")
    by_variant: dict[str, list[CurvePoint]] = {}
    for pt in points:
        by_variant.setdefault(pt.variant, []).append(pt)
    total_pass = 0
    for name in sorted(by_variant):
        group = sorted(by_variant[name], key=lambda pt: pt.knob)
        lines.append(f"variant {name}")
        for pt in group:
            row = (f"  knob={pt.knob:g} recall={pt.recall_at_k:.4f} "
                   f"mean_cost={pt.mean_dist_comps:.1f} "
                   f"p90_cost={pt.p90_dist_comps:.1f} "
                   f"p90_wall_ms={pt.p90_wall_ms:.3f}")
            if gates is not None:
                ok = pt.passes(gates)
                total_pass += int(ok)
                row += f" gate={'PASS' if ok else 'FAIL'}"
            lines.append(row)
        best = max(group, key=lambda pt: (pt.recall_at_k, -pt.mean_dist_comps))
        lines.append(
            f"  best recall={best.recall_at_k:.4f} at knob={best.knob:g} "
            f"(mean_cost={best.mean_dist_comps:.1f})"
        )
    if gates is not None:
        lines.append("")
        lines.append(f"gate passes: {total_pass}/{len(points)}")
    summary_path = out / "summary.txt"
    summary_path.write_text("\n".join(lines) + "\n")
    return csv_path, summary_path


def read_report(csv_path) -> list[CurvePoint]:
    """Load curve points back from a report file."""
    points = []
    with Path(csv_path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{csv_path}: missing columns {sorted(missing)}")
        for row in reader:
            points.append(CurvePoint(
                variant=row["variant"],
                knob=float(row["knob"]),
                recall_at_k=float(row["recall_at_k"]),
                p90_wall_ms=float(row["p90_wall_ms"]),
                p90_dist_comps=float(row["p90_dist_comps"]),
                mean_dist_comps=float(row["mean_dist_comps"]),
                seed=int(row["seed"]),
            ))
    return points
