"""Shared domain types: entity catalogs, neighbor results, search statistics.

Everything downstream (flat scan, trees, hashing, two-level composition)
speaks in terms of these types.  Distances are Euclidean; squared distances
are used internally and converted with a single square root at the result
boundary.  Ties are broken by ascending entity id everywhere.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

# Tolerance for "probabilities sum to one" checks on likelihood vectors.
LIKELIHOOD_SUM_TOL = 1e-9


class DimensionMismatch(ValueError):
    """Raised when a query or record disagrees with an index's dimension."""


def rng_stream(seed: int, name: str = "") -> np.random.Generator:
    """Return a generator for a named sub-stream of ``seed``.

    Different names yield statistically independent streams from the same
    root seed, so components (synthetic data, projections, traffic, ...)
    never consume each other's draws.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_vector(x, *, name: str = "vector") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must have at least one component")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, *, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def check_dim(expected: int, actual: int, *, what: str = "query") -> None:
    if expected != actual:
        raise DimensionMismatch(
            f"{what} has dimension {actual}, index expects {expected}"
        )


def euclidean_distance(a, b) -> float:
    va = as_vector(a, name="a")
    vb = as_vector(b, name="b")
    if va.shape != vb.shape:
        raise DimensionMismatch(
            f"operands have shapes {va.shape} and {vb.shape}"
        )
    diff = va - vb
    return float(np.sqrt(np.dot(diff, diff)))


def squared_distances(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from ``query`` to every row of ``matrix``."""
    diff = matrix - query
    return np.einsum("ij,ij->i", diff, diff)


@dataclass(frozen=True)
class EntityRecord:
    """One catalog entry: an integer id, its embedding, optional likelihood."""

    id: int
    embedding: np.ndarray
    likelihood: float | None = None


@dataclass(frozen=True)
class Neighbor:
    id: int
    distance: float


@dataclass(frozen=True)
class ResultSet:
    """Top-k answer: neighbors sorted by (distance, id), at most k of them."""

    neighbors: tuple[Neighbor, ...]
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if len(self.neighbors) > self.k:
            raise ValueError(
                f"result holds {len(self.neighbors)} neighbors but k={self.k}"
            )
        prev: Neighbor | None = None
        seen: set[int] = set()
        for nb in self.neighbors:
            if nb.distance < 0 or not np.isfinite(nb.distance):
                raise ValueError(f"invalid distance {nb.distance} for id {nb.id}")
            if nb.id in seen:
                raise ValueError(f"duplicate entity id {nb.id} in result")
            seen.add(nb.id)
            if prev is not None and (nb.distance, nb.id) < (prev.distance, prev.id):
                raise ValueError("neighbors not sorted by (distance, id)")
            prev = nb

    @classmethod
    def from_candidates(cls, ids, distances, k: int) -> "ResultSet":
        """Rank candidates by (distance, id) and keep the best ``k``.

        Duplicate ids are allowed; the smallest distance wins.
        """
        if k < 1:
            raise ValueError(f"k must be positive, got {k}")
        id_arr = np.asarray(ids, dtype=np.int64).ravel()
        dist_arr = np.asarray(distances, dtype=np.float64).ravel()
        if id_arr.shape != dist_arr.shape:
            raise ValueError("ids and distances must have equal length")
        if id_arr.size == 0:
            return cls(neighbors=(), k=k)
        order = np.lexsort((id_arr, dist_arr))
        id_sorted = id_arr[order]
        dist_sorted = dist_arr[order]
        # First occurrence in (distance, id) order is the best entry per id.
        _, first = np.unique(id_sorted, return_index=True)
        keep = np.zeros(id_sorted.size, dtype=bool)
        keep[first] = True
        id_kept = id_sorted[keep]
        dist_kept = dist_sorted[keep]
        order2 = np.lexsort((id_kept, dist_kept))[: min(k, id_kept.size)]
        neighbors = tuple(
            Neighbor(id=int(id_kept[i]), distance=float(dist_kept[i]))
            for i in order2
        )
        return cls(neighbors=neighbors, k=k)

    def ids(self) -> list[int]:
        return [nb.id for nb in self.neighbors]

    def distances(self) -> list[float]:
        return [nb.distance for nb in self.neighbors]

    def __len__(self) -> int:
        return len(self.neighbors)

    def __iter__(self) -> Iterator[Neighbor]:
        return iter(self.neighbors)


def merge_top_k(partials: Iterable[ResultSet], k: int) -> ResultSet:
    """Fuse partial results into one global top-k.

    Equivalent to ranking the union of all partial candidate lists; an id
    appearing in several partials keeps its smallest distance.
    """
    ids: list[int] = []
    dists: list[float] = []
    for part in partials:
        for nb in part.neighbors:
            ids.append(nb.id)
            dists.append(nb.distance)
    return ResultSet.from_candidates(ids, dists, k)


@dataclass
class SearchStats:
    """Work counters for one search call.

    ``distance_computations`` is the hardware-independent cost proxy: every
    full-vector distance evaluation counts one, and every split-hyperplane
    projection during tree descent counts one (it is a d-dimensional dot
    product, the same work as a distance).  Hash-based search counts only
    its candidate verifications.  ``wall_time`` is seconds.
    """

    distance_computations: int = 0
    nodes_visited: int = 0
    leaves_probed: int = 0
    wall_time: float = 0.0

    def __add__(self, other: "SearchStats") -> "SearchStats":
        return SearchStats(
            distance_computations=self.distance_computations + other.distance_computations,
            nodes_visited=self.nodes_visited + other.nodes_visited,
            leaves_probed=self.leaves_probed + other.leaves_probed,
            wall_time=self.wall_time + other.wall_time,
        )

    def merged(self, others: Iterable["SearchStats"]) -> "SearchStats":
        total = self
        for s in others:
            total = total + s
        return total


class Catalog:
    """Immutable collection of entities with aligned embedding rows.

    ``ids`` are unique non-negative integers; ``embeddings[i]`` belongs to
    ``ids[i]``.  ``likelihoods``, when present, is a probability vector over
    the rows (non-negative, sums to one within ``LIKELIHOOD_SUM_TOL``).
    The arrays are marked read-only; searches over the same catalog never
    mutate shared state, so concurrent readers are safe.
    """

    __slots__ = ("ids", "embeddings", "likelihoods", "_row_by_id")

    def __init__(self, ids, embeddings, likelihoods=None):
        id_arr = np.array(ids, dtype=np.int64, copy=True).ravel()
        emb = np.array(embeddings, dtype=np.float64, copy=True)
        if emb.ndim != 2:
            raise ValueError(f"embeddings must be 2-d, got shape {emb.shape}")
        if emb.shape[0] != id_arr.size:
            raise ValueError(
                f"{id_arr.size} ids but {emb.shape[0]} embedding rows"
            )
        if id_arr.size == 0:
            emb = emb.reshape(0, 0)
        else:
            if emb.shape[1] == 0:
                raise ValueError("embeddings must have at least one column")
            if not np.all(np.isfinite(emb)):
                raise ValueError("embeddings contain non-finite values")
            if np.any(id_arr < 0):
                raise ValueError("entity ids must be non-negative")
            if np.unique(id_arr).size != id_arr.size:
                raise ValueError("entity ids must be unique")
        lik = None
        if likelihoods is not None:
            lik = np.array(likelihoods, dtype=np.float64, copy=True).ravel()
            if lik.size != id_arr.size:
                raise ValueError(
                    f"{id_arr.size} ids but {lik.size} likelihood values"
                )
            if lik.size:
                if not np.all(np.isfinite(lik)):
                    raise ValueError("likelihoods contain non-finite values")
                if np.any(lik < 0.0) or np.any(lik > 1.0):
                    raise ValueError("likelihoods must lie in [0, 1]")
                total = float(lik.sum())
                if abs(total - 1.0) > LIKELIHOOD_SUM_TOL:
                    raise ValueError(
                        f"likelihoods sum to {total!r}, expected 1 within "
                        f"{LIKELIHOOD_SUM_TOL}"
                    )
        emb = np.ascontiguousarray(emb)
        id_arr.setflags(write=False)
        emb.setflags(write=False)
        if lik is not None:
            lik.setflags(write=False)
        object.__setattr__(self, "ids", id_arr)
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "likelihoods", lik)
        object.__setattr__(self, "_row_by_id", None)

    def __setattr__(self, name, value):
        raise AttributeError("Catalog is immutable")

    @classmethod
    def from_matrix(cls, matrix, ids=None, likelihoods=None) -> "Catalog":
        mat = np.asarray(matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError(f"matrix must be 2-d, got shape {mat.shape}")
        if ids is None:
            ids = np.arange(mat.shape[0], dtype=np.int64)
        return cls(ids, mat, likelihoods)

    @classmethod
    def from_records(cls, records: Sequence[EntityRecord]) -> "Catalog":
        records = list(records)
        if not records:
            return cls(np.empty(0, dtype=np.int64), np.empty((0, 0)))
        ids = [r.id for r in records]
        emb = np.stack([as_vector(r.embedding, name=f"embedding of id {r.id}") for r in records])
        liks = [r.likelihood for r in records]
        have = [v is not None for v in liks]
        if any(have) and not all(have):
            raise ValueError("either every record has a likelihood or none does")
        return cls(ids, emb, liks if all(have) else None)

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def size(self) -> int:
        return len(self)

    @property
    def is_empty(self) -> bool:
        return self.ids.size == 0

    @property
    def dim(self) -> int | None:
        """Embedding dimensionality, or None for an empty catalog."""
        if self.is_empty:
            return None
        return int(self.embeddings.shape[1])

    @property
    def likelihoods_present(self) -> bool:
        return self.likelihoods is not None

    def row_of(self, entity_id: int) -> int:
        table = object.__getattribute__(self, "_row_by_id")
        if table is None:
            table = {int(e): i for i, e in enumerate(self.ids)}
            object.__setattr__(self, "_row_by_id", table)
        try:
            return table[int(entity_id)]
        except KeyError:
            raise KeyError(f"entity id {entity_id} not in catalog") from None

    def rows_of(self, entity_ids) -> np.ndarray:
        return np.array([self.row_of(e) for e in np.asarray(entity_ids).ravel()],
                        dtype=np.int64)

    def record(self, row: int) -> EntityRecord:
        lik = None if self.likelihoods is None else float(self.likelihoods[row])
        return EntityRecord(id=int(self.ids[row]),
                            embedding=self.embeddings[row],
                            likelihood=lik)

    def records(self) -> Iterator[EntityRecord]:
        for row in range(len(self)):
            yield self.record(row)

    def subset(self, rows) -> "Catalog":
        """Catalog restricted to the given row indices.

        Likelihoods are dropped: a slice of a probability vector no longer
        sums to one, so callers that need per-subset masses must renormalize
        the slice themselves.
        """
        rows = np.asarray(rows, dtype=np.int64).ravel()
        return Catalog(self.ids[rows], self.embeddings[rows])
