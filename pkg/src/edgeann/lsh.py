"""Sign-hyperplane hashing with a shared projection pool.

All tables draw their bits from one pool of ``pool_size`` unit projections,
so projection storage is pool_size x d floats regardless of how many
tables are configured (unshared tables would need num_tables x
bits_per_table x d).  A table's signature packs the signs of its chosen
pool projections into an integer bucket key.  Multiprobe widens a lookup
to every existing bucket whose key is within a Hamming radius of the
query's key, instead of enumerating the exponential neighborhood of
perturbed keys.
"""

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
    rng_stream,
)


@dataclass(frozen=True)
class LshConfig:
    pool_size: int = 64
    num_tables: int = 8
    bits_per_table: int = 12
    seed: int = 0

    def __post_init__(self) -> None:
        if self.pool_size < 1:
            raise ValueError("pool_size must be positive")
        if self.num_tables < 1:
            raise ValueError("num_tables must be positive")
        if not 1 <= self.bits_per_table <= 64:
            raise ValueError("bits_per_table must lie in [1, 64]")
        if self.bits_per_table > self.pool_size:
            raise ValueError(
                "bits_per_table cannot exceed pool_size (bits are drawn "
                "from the pool without replacement)"
            )


@dataclass
class _HashTable:
    bit_indices: np.ndarray          # indices into the pool, shape (B,)
    keys: np.ndarray                 # sorted distinct bucket keys, uint64
    buckets: list[np.ndarray]        # catalog row indices per key


@dataclass
class LshIndex:
    config: LshConfig
    catalog: Catalog
    pool: np.ndarray                 # (pool_size, dim) unit projections
    tables: list[_HashTable]


def _pack_keys(signs: np.ndarray) -> np.ndarray:
    """Pack sign bits (columns) into uint64 keys, column j -> bit j."""
    bits = signs.astype(np.uint64)
    weights = np.uint64(1) << np.arange(bits.shape[1], dtype=np.uint64)
    return (bits * weights).sum(axis=1, dtype=np.uint64)


def _unit_pool(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vecs = rng.standard_normal((count, dim))
    norms = np.linalg.norm(vecs, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        vecs[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(vecs, axis=1)
    return vecs / norms[:, None]


def build_lsh(catalog: Catalog, config: LshConfig = LshConfig()) -> LshIndex:
    if catalog.is_empty:
        raise ValueError("cannot build an index over an empty catalog")
    rng = rng_stream(config.seed, "lsh-pool")
    pool = _unit_pool(rng, config.pool_size, catalog.dim)
    signs = (catalog.embeddings @ pool.T) >= 0.0
    tables = []
    for t in range(config.num_tables):
        table_rng = rng_stream(config.seed, f"lsh-table-{t}")
        bit_indices = table_rng.choice(config.pool_size,
                                       size=config.bits_per_table,
                                       replace=False)
        keys = _pack_keys(signs[:, bit_indices])
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]
        distinct, starts = np.unique(sorted_keys, return_index=True)
        buckets = [np.sort(chunk) for chunk in np.split(order, starts[1:])]
        tables.append(_HashTable(bit_indices=bit_indices.astype(np.int64),
                                 keys=distinct, buckets=buckets))
    return LshIndex(config=config, catalog=catalog, pool=pool, tables=tables)


def lsh_search(index: LshIndex, query, k: int,
               multiprobe_radius: int = 0) -> tuple[ResultSet, SearchStats]:
    """Collect candidates from matching buckets, verify with exact distances.

    ``distance_computations`` counts exactly the verified candidates; key
    comparisons are tracked separately under ``nodes_visited``.  A radius
    of ``bits_per_table`` or more degenerates to scanning every bucket.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if multiprobe_radius < 0:
        raise ValueError("multiprobe_radius must be non-negative")
    start = time.perf_counter()
    q = as_vector(query, name="query")
    catalog = index.catalog
    check_dim(catalog.dim, q.size)
    qsigns = (index.pool @ q) >= 0.0
    stats = SearchStats()
    hit_rows: list[np.ndarray] = []
    for table in index.tables:
        qkey = _pack_keys(qsigns[table.bit_indices][None, :])[0]
        if multiprobe_radius == 0:
            pos = int(np.searchsorted(table.keys, qkey))
            stats.nodes_visited += 1
            if pos < table.keys.size and table.keys[pos] == qkey:
                hit_rows.append(table.buckets[pos])
                stats.leaves_probed += 1
        else:
            hamming = np.bitwise_count(table.keys ^ qkey)
            stats.nodes_visited += int(table.keys.size)
            for pos in np.nonzero(hamming <= multiprobe_radius)[0]:
                hit_rows.append(table.buckets[pos])
                stats.leaves_probed += 1
    if hit_rows:
        rows = np.unique(np.concatenate(hit_rows))
        diff = catalog.embeddings[rows] - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        stats.distance_computations = int(rows.size)
        result = ResultSet.from_candidates(catalog.ids[rows],
                                           np.sqrt(np.maximum(d2, 0.0)), k)
    else:
        result = ResultSet.from_candidates([], [], k)
    stats.wall_time = time.perf_counter() - start
    return result, stats


def serialize_lsh(index: LshIndex) -> bytes:
    from .serial import ByteWriter, KIND_LSH, write_header

    w = ByteWriter()
    write_header(w, KIND_LSH)
    cfg = index.config
    w.u32(cfg.pool_size)
    w.u32(cfg.num_tables)
    w.u32(cfg.bits_per_table)
    w.i64(cfg.seed)
    w.u32(index.catalog.dim)
    w.array(index.pool, "<f8")
    catalog_ids = index.catalog.ids
    for table in index.tables:
        w.array(table.bit_indices, "<u2")
        w.u32(int(table.keys.size))
        for key, rows in zip(table.keys, table.buckets):
            w.u64(int(key))
            w.u32(int(rows.size))
            w.array(catalog_ids[rows], "<i8")
    return w.getvalue()


def deserialize_lsh(data: bytes, catalog: Catalog) -> LshIndex:
    from .serial import ByteReader, KIND_LSH, SerializationError, read_header

    r = ByteReader(data)
    read_header(r, KIND_LSH)
    config = LshConfig(pool_size=r.u32(), num_tables=r.u32(),
                       bits_per_table=r.u32(), seed=r.i64())
    dim = r.u32()
    if catalog.dim != dim:
        raise SerializationError(
            f"index was built over dimension {dim}, catalog has {catalog.dim}"
        )
    pool = r.array(config.pool_size * dim, "<f8").reshape(
        config.pool_size, dim).astype(np.float64)
    tables = []
    for _ in range(config.num_tables):
        bit_indices = r.array(config.bits_per_table, "<u2").astype(np.int64)
        num_buckets = r.u32()
        keys = np.empty(num_buckets, dtype=np.uint64)
        buckets = []
        for b in range(num_buckets):
            keys[b] = r.u64()
            count = r.u32()
            ids = r.array(count, "<i8").astype(np.int64)
            buckets.append(catalog.rows_of(ids))
        tables.append(_HashTable(bit_indices=bit_indices, keys=keys,
                                 buckets=buckets))
    r.expect_end()
    return LshIndex(config=config, catalog=catalog, pool=pool, tables=tables)
