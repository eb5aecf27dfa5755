"""Dataset io and synthetic workload generation.

Binary vector files use the fvecs/ivecs framing: each record is a
little-endian int32 component count followed by that many float32 (fvecs)
or int32 (ivecs) values.  All records in one file share the same count.

Likelihood and traffic files are plain text, one value per line: floats
that form a probability vector over catalog rows, and integer query row
indices respectively.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Catalog, LIKELIHOOD_SUM_TOL, as_matrix, rng_stream


class ParseError(ValueError):
    """A file violated its format; the message names the byte or line."""


@dataclass(frozen=True)
class LikelihoodProfile:
    """Probability that each catalog row is the target of the next query."""

    probabilities: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.probabilities, dtype=np.float64).ravel()
        if arr.size < 1:
            raise ValueError("profile must cover at least one entity")
        if not np.all(np.isfinite(arr)):
            raise ValueError("profile contains non-finite values")
        if np.any(arr < 0.0):
            raise ValueError("profile contains negative probabilities")
        total = float(arr.sum())
        if abs(total - 1.0) > LIKELIHOOD_SUM_TOL:
            raise ValueError(
                f"profile sums to {total!r}, expected 1 within {LIKELIHOOD_SUM_TOL}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "probabilities", arr)

    def __len__(self) -> int:
        return int(self.probabilities.size)


@dataclass(frozen=True)
class BetaSimConfig:
    """Parameters for simulating a query-likelihood profile.

    Per-entity weights are drawn iid from Beta(alpha, beta) and normalized.
    Small ``alpha`` with ``beta=1`` concentrates mass on few entities;
    ``alpha == beta`` large approaches the uniform profile.
    """

    alpha: float
    beta: float
    num_entities: int
    num_queries: int
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        if self.num_entities < 2:
            raise ValueError("need at least two entities")
        if self.num_queries < 0:
            raise ValueError("num_queries must be non-negative")


@dataclass(frozen=True)
class TrafficSample:
    """Query workload: target row indices and, optionally, query vectors."""

    query_indices: np.ndarray
    query_vectors: np.ndarray | None = None


# Calibrated Beta parameters producing a desired unbalance score for a
# 256-entity catalog (score std across seeds is below 0.03 for every row;
# the alpha=beta=1e6 row is the near-uniform limit).  The mapping shifts
# with catalog size, so these constants are only advertised for N=256.
BETA_SCORE_GRID: dict[float, tuple[float, float]] = {
    0.0: (1e6, 1e6),
    0.1: (0.3918, 1.0),
    0.2: (0.16536, 1.0),
    0.23: (0.13246, 1.0),
    0.3: (0.08290, 1.0),
    0.4: (0.044750, 1.0),
}

BETA_GRID_NUM_ENTITIES = 256


def beta_params_for_score(target: float) -> tuple[float, float]:
    """Beta parameters whose simulated profile scores ``target`` on average.

    Calibrated for ``BETA_GRID_NUM_ENTITIES`` entities; unknown targets
    raise rather than extrapolate.
    """
    for key, params in BETA_SCORE_GRID.items():
        if abs(key - target) < 1e-12:
            return params
    known = ", ".join(f"{k:g}" for k in sorted(BETA_SCORE_GRID))
    raise KeyError(f"no calibration for score {target!r}; known targets: {known}")


def unbalance_score(profile) -> float:
    """Concentration of a probability vector on a 0..1 scale.

    Zero for the uniform profile, one for a point mass: one minus the
    Shannon entropy of the profile divided by log2 of its length.
    """
    arr = getattr(profile, "probabilities", profile)
    arr = np.asarray(arr, dtype=np.float64).ravel()
    if arr.size < 2:
        raise ValueError("score needs at least two entities")
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ValueError("profile must be non-negative and finite")
    total = arr.sum()
    if total <= 0:
        raise ValueError("profile must have positive mass")
    p = arr / total
    pos = p[p > 0.0]
    entropy = float(-(pos * np.log2(pos)).sum())
    return 1.0 - entropy / math.log2(arr.size)


def generate_synthetic(num_entities: int, dim: int, num_clusters: int,
                       seed: int = 0, spread: float = 0.05) -> Catalog:
    """Gaussian blobs around uniform random centers.

    Row ``i`` belongs to cluster ``i % num_clusters``, so cluster sizes are
    as even as possible and deterministic given the arguments.
    """
    if num_entities < 1 or dim < 1 or num_clusters < 1:
        raise ValueError("num_entities, dim and num_clusters must be positive")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = rng_stream(seed, "synthetic")
    centers = rng.random((num_clusters, dim))
    labels = np.arange(num_entities, dtype=np.int64) % num_clusters
    points = centers[labels] + spread * rng.standard_normal((num_entities, dim))
    return Catalog.from_matrix(points)


def simulate_likelihoods(config: BetaSimConfig, catalog: Catalog | None = None,
                         noise_sigma: float = 0.0
                         ) -> tuple[LikelihoodProfile, TrafficSample]:
    """Draw a likelihood profile and a query workload targeting it.

    Queries are categorical draws over rows with the profile as weights.
    When ``catalog`` is given, query vectors are the target embeddings plus
    optional Gaussian noise of scale ``noise_sigma``.
    """
    if catalog is not None and len(catalog) != config.num_entities:
        raise ValueError(
            f"catalog has {len(catalog)} rows, config says {config.num_entities}"
        )
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    weights = None
    for attempt in range(10):
        rng = rng_stream(config.seed, f"likelihood-weights-{attempt}")
        drawn = rng.beta(config.alpha, config.beta, size=config.num_entities)
        if drawn.sum() > 0:
            weights = drawn
            break
    if weights is None:
        raise RuntimeError("likelihood weights degenerate after 10 attempts")
    profile = LikelihoodProfile(weights / weights.sum())

    traffic_rng = rng_stream(config.seed, "traffic")
    indices = traffic_rng.choice(config.num_entities, size=config.num_queries,
                                 p=profile.probabilities).astype(np.int64)
    vectors = None
    if catalog is not None:
        vectors = catalog.embeddings[indices].copy()
        if noise_sigma > 0 and config.num_queries > 0:
            noise_rng = rng_stream(config.seed, "query-noise")
            vectors += noise_sigma * noise_rng.standard_normal(vectors.shape)
    return profile, TrafficSample(query_indices=indices, query_vectors=vectors)


def compute_ground_truth(catalog: Catalog, queries, k: int) -> list[list[int]]:
    """Exact nearest ids per query via full scan, ties by ascending id."""
    from .flat import build_flat, flat_search

    if k < 1:
        raise ValueError("k must be positive")
    q = as_matrix(queries, name="queries")
    index = build_flat(catalog)
    out: list[list[int]] = []
    for row in q:
        result, _ = flat_search(index, row, k)
        out.append(result.ids())
    return out


# ---------------------------------------------------------------------------
# Binary vector files


def _scan_records(raw: bytes, path) -> tuple[int, int]:
    """Walk fvecs/ivecs framing; return (dim, count) or raise at the bad byte."""
    n = len(raw)
    offset = 0
    dim = None
    count = 0
    while offset < n:
        if n - offset < 4:
            raise ParseError(
                f"{path}: truncated record header at byte {offset}"
            )
        (d,) = struct.unpack_from("<i", raw, offset)
        if d <= 0:
            raise ParseError(
                f"{path}: record at byte {offset} has non-positive "
                f"component count {d}"
            )
        if dim is None:
            dim = d
        elif d != dim:
            raise ParseError(
                f"{path}: record at byte {offset} has component count {d}, "
                f"expected {dim}"
            )
        payload = 4 * d
        if n - offset - 4 < payload:
            raise ParseError(
                f"{path}: truncated record payload at byte {offset + 4} "
                f"(need {payload} bytes)"
            )
        offset += 4 + payload
        count += 1
    assert dim is not None
    return dim, count


def _read_framed(path, payload_dtype: str) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) == 0:
        return np.empty((0, 0), dtype=np.dtype(payload_dtype))
    if len(data) >= 4:
        (d0,) = struct.unpack_from("<i", data, 0)
        record = 4 * (d0 + 1)
        if d0 > 0 and len(data) % record == 0:
            headers = np.frombuffer(data, dtype="<i4").reshape(-1, d0 + 1)[:, 0]
            if np.all(headers == d0):
                body = np.frombuffer(data, dtype=payload_dtype)
                return body.reshape(-1, d0 + 1)[:, 1:]
    # Slow path pinpoints the first malformed byte.
    dim, count = _scan_records(data, path)
    body = np.frombuffer(data, dtype=payload_dtype)
    return body.reshape(count, dim + 1)[:, 1:]


def read_fvecs(path) -> Catalog:
    """Read a float vector file into a catalog with row ids 0..N-1."""
    rows = _read_framed(path, "<f4")
    try:
        return Catalog.from_matrix(rows.astype(np.float64))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def read_ivecs(path) -> list[list[int]]:
    rows = _read_framed(path, "<i4")
    return [list(map(int, row)) for row in rows]


def _write_framed(rows: np.ndarray, path, payload_dtype: str) -> None:
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {rows.shape}")
    out = Path(path)
    if rows.shape[0] == 0:
        out.write_bytes(b"")
        return
    if rows.shape[1] == 0:
        raise ValueError("records must have at least one component")
    n, d = rows.shape
    framed = np.empty((n, d + 1), dtype=np.dtype(payload_dtype))
    framed[:, :1].view("<i4")[:] = d
    framed[:, 1:] = rows.astype(payload_dtype)
    out.write_bytes(framed.tobytes())


def write_fvecs(catalog_or_matrix, path) -> None:
    """Write vectors as fvecs.  Values are stored as float32."""
    rows = getattr(catalog_or_matrix, "embeddings", catalog_or_matrix)
    _write_framed(np.asarray(rows, dtype=np.float64), path, "<f4")


def write_ivecs(rows, path) -> None:
    if len(rows) == 0:
        Path(path).write_bytes(b"")
        return
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise ValueError("all ivecs records must have equal length")
    _write_framed(np.asarray(rows, dtype=np.int64), path, "<i4")


# ---------------------------------------------------------------------------
# Text files


def write_likelihoods(profile, path) -> None:
    arr = getattr(profile, "probabilities", profile)
    arr = np.asarray(arr, dtype=np.float64).ravel()
    lines = [repr(float(v)) for v in arr]
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def read_likelihoods(path) -> LikelihoodProfile:
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            values.append(float(text))
        except ValueError:
            raise ParseError(
                f"{path}: line {lineno} is not a float: {text!r}"
            ) from None
    try:
        return LikelihoodProfile(np.asarray(values, dtype=np.float64))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_traffic(sample_or_indices, path) -> None:
    arr = getattr(sample_or_indices, "query_indices", sample_or_indices)
    arr = np.asarray(arr, dtype=np.int64).ravel()
    lines = [str(int(v)) for v in arr]
    Path(path).write_text("\n".join(lines) + "\n" if lines else "")


def read_traffic(path) -> np.ndarray:
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            values.append(int(text))
        except ValueError:
            raise ParseError(
                f"{path}: line {lineno} is not an integer: {text!r}"
            ) from None
    arr = np.asarray(values, dtype=np.int64)
    if arr.size and arr.min() < 0:
        raise ParseError(f"{path}: negative query index {arr.min()}")
    return arr
