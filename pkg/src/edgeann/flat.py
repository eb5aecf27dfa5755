"""Exhaustive scan baseline: exact answers, linear cost."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    Catalog,
    ResultSet,
    SearchStats,
    as_vector,
    check_dim,
    squared_distances,
)


@dataclass(frozen=True)
class FlatIndex:
    catalog: Catalog


def build_flat(catalog: Catalog) -> FlatIndex:
    if catalog.is_empty:
        raise ValueError("cannot build an index over an empty catalog")
    return FlatIndex(catalog=catalog)


def flat_search(index: FlatIndex, query, k: int) -> tuple[ResultSet, SearchStats]:
    """Scan every row; exact top-k with (distance, id) tie order."""
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    start = time.perf_counter()
    q = as_vector(query, name="query")
    catalog = index.catalog
    check_dim(catalog.dim, q.size)
    d2 = squared_distances(catalog.embeddings, q)
    result = ResultSet.from_candidates(catalog.ids, np.sqrt(d2), k)
    stats = SearchStats(
        distance_computations=len(catalog),
        nodes_visited=0,
        leaves_probed=0,
        wall_time=time.perf_counter() - start,
    )
    return result, stats


def serialize_flat(index: FlatIndex) -> bytes:
    from .serial import ByteWriter, KIND_FLAT, write_header

    w = ByteWriter()
    write_header(w, KIND_FLAT)
    w.u64(len(index.catalog))
    return w.getvalue()


def deserialize_flat(data: bytes, catalog: Catalog) -> FlatIndex:
    from .serial import ByteReader, KIND_FLAT, read_header

    r = ByteReader(data)
    read_header(r, KIND_FLAT)
    n = r.u64()
    if n != len(catalog):
        raise ValueError(f"index was built over {n} rows, catalog has {len(catalog)}")
    return FlatIndex(catalog=catalog)
