"""K-means partitioning and product quantization.

The k-means here is Lloyd's algorithm with kmeans++ seeding.  Empty
clusters are repaired by stealing the point currently farthest from its
centroid (the stolen point becomes the new centroid, so the objective
cannot rise); the within-cluster objective is asserted non-increasing on
every iteration.

Product quantization splits vectors into contiguous subspaces (zero-padded
when the dimension does not divide evenly), learns a small codebook per
subspace, and approximates distances against encoded vectors from one
query-side lookup table per search.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass

import numpy as np

from .core import as_matrix, as_vector, rng_stream


@dataclass(frozen=True)
class KMeansConfig:
    num_clusters: int
    max_iters: int = 50
    tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_clusters < 1:
            raise ValueError("num_clusters must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")


@dataclass(frozen=True)
class Partition:
    """Clustering result: centroids plus per-row cluster assignments."""

    centroids: np.ndarray
    assignments: np.ndarray
    ids: np.ndarray
    subset_rows: tuple = ()

    def __post_init__(self) -> None:
        centroids = np.asarray(self.centroids, dtype=np.float64)
        labels = np.asarray(self.assignments, dtype=np.int64).ravel()
        ids = np.asarray(self.ids, dtype=np.int64).ravel()
        if centroids.ndim != 2:
            raise ValueError("centroids must be 2-d")
        if labels.size != ids.size:
            raise ValueError("assignments and ids must align")
        k = centroids.shape[0]
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"assignments must lie in [0, {k})")
        rows = tuple(np.nonzero(labels == c)[0] for c in range(k))
        object.__setattr__(self, "centroids", centroids)
        object.__setattr__(self, "assignments", labels)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "subset_rows", rows)

    @property
    def num_clusters(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.num_clusters)

    def members(self, cluster: int) -> np.ndarray:
        """Entity ids assigned to one cluster."""
        return self.ids[self.subset_rows[cluster]]


def _assign(points: np.ndarray, centroids: np.ndarray
            ) -> tuple[np.ndarray, np.ndarray]:
    n = points.shape[0]
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    mind2 = np.empty(n, dtype=np.float64)
    cent_sq = np.einsum("ij,ij->i", centroids, centroids)
    chunk = max(1, int(4_000_000 // max(k, 1)))
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        d2 = (np.einsum("ij,ij->i", block, block)[:, None]
              - 2.0 * (block @ centroids.T) + cent_sq[None, :])
        np.maximum(d2, 0.0, out=d2)
        lab = np.argmin(d2, axis=1)
        labels[start:start + block.shape[0]] = lab
        mind2[start:start + block.shape[0]] = d2[np.arange(block.shape[0]), lab]
    return labels, mind2


def _repair_empties(points: np.ndarray, centroids: np.ndarray,
                    labels: np.ndarray, mind2: np.ndarray) -> None:
    counts = np.bincount(labels, minlength=centroids.shape[0])
    for empty in np.nonzero(counts == 0)[0]:
        eligible = counts[labels] >= 2
        if not eligible.any():
            break
        candidate_cost = np.where(eligible, mind2, -1.0)
        far = int(np.argmax(candidate_cost))
        counts[labels[far]] -= 1
        labels[far] = empty
        counts[empty] += 1
        centroids[empty] = points[far]
        mind2[far] = 0.0


def _update_centroids(points: np.ndarray, labels: np.ndarray,
                      centroids: np.ndarray) -> np.ndarray:
    k, dim = centroids.shape
    counts = np.bincount(labels, minlength=k)
    out = centroids.copy()
    sums = np.empty((k, dim))
    for j in range(dim):
        sums[:, j] = np.bincount(labels, weights=points[:, j], minlength=k)
    nonzero = counts > 0
    out[nonzero] = sums[nonzero] / counts[nonzero, None]
    return out


def _plusplus_init(points: np.ndarray, k: int,
                   rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[int(rng.integers(n))]
    diff = points - centroids[0]
    d2 = np.einsum("ij,ij->i", diff, diff)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = int(rng.choice(n, p=d2 / total))
        else:
            pick = int(rng.integers(n))
        centroids[j] = points[pick]
        diff = points - centroids[j]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
    return centroids


def kmeans(vectors, config: KMeansConfig, ids=None) -> tuple[Partition, float]:
    """Cluster rows of ``vectors``; returns the partition and its objective.

    The objective is the summed squared distance of each row to its
    centroid, evaluated at the returned assignments.
    """
    points = as_matrix(vectors, name="vectors")
    n = points.shape[0]
    k = config.num_clusters
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    if ids is None:
        ids = np.arange(n, dtype=np.int64)
    rng = rng_stream(config.seed, "kmeans-init")
    centroids = _plusplus_init(points, k, rng)
    prev_obj: float | None = None
    labels = mind2 = None
    for _ in range(config.max_iters):
        labels, mind2 = _assign(points, centroids)
        _repair_empties(points, centroids, labels, mind2)
        obj = float(mind2.sum())
        if prev_obj is not None:
            assert obj <= prev_obj + 1e-9 * max(1.0, abs(prev_obj)), \
                "k-means objective increased"
            if prev_obj - obj < config.tolerance:
                prev_obj = obj
                break
        prev_obj = obj
        centroids = _update_centroids(points, labels, centroids)
    else:
        # Iterations ran out right after an update; refresh assignments so
        # the returned labels match the returned centroids.
        labels, mind2 = _assign(points, centroids)
        _repair_empties(points, centroids, labels, mind2)
        obj = float(mind2.sum())
        assert obj <= prev_obj + 1e-9 * max(1.0, abs(prev_obj)), \
            "k-means objective increased"
        prev_obj = obj
    partition = Partition(centroids=centroids, assignments=labels, ids=ids)
    return partition, prev_obj


# ---------------------------------------------------------------------------
# Product quantization


@dataclass(frozen=True)
class PqCodebook:
    """Per-subspace codeword tables for an input dimension ``dim``."""

    codebooks: np.ndarray   # (num_subspaces, codewords, sub_dim)
    dim: int

    def __post_init__(self) -> None:
        books = np.asarray(self.codebooks, dtype=np.float64)
        if books.ndim != 3:
            raise ValueError("codebooks must have shape (m, codewords, sub_dim)")
        if not 1 <= books.shape[1] <= 256:
            raise ValueError("codewords per subspace must lie in [1, 256]")
        if self.dim < 1 or self.dim > books.shape[0] * books.shape[2]:
            raise ValueError("dim inconsistent with codebook shape")
        object.__setattr__(self, "codebooks", books)

    @property
    def num_subspaces(self) -> int:
        return int(self.codebooks.shape[0])

    @property
    def codewords(self) -> int:
        return int(self.codebooks.shape[1])

    @property
    def sub_dim(self) -> int:
        return int(self.codebooks.shape[2])

    @property
    def padded_dim(self) -> int:
        return self.num_subspaces * self.sub_dim


def default_subspaces(dim: int) -> int:
    """Subspace count heuristic: 8 for wide vectors, about dim/4 below that."""
    if dim < 1:
        raise ValueError("dim must be positive")
    if dim >= 64:
        return 8
    return max(1, min(dim, round(dim / 4)))


def _pad_columns(matrix: np.ndarray, padded_dim: int) -> np.ndarray:
    if matrix.shape[1] == padded_dim:
        return matrix
    out = np.zeros((matrix.shape[0], padded_dim))
    out[:, : matrix.shape[1]] = matrix
    return out


def pq_train(vectors, num_subspaces: int | None = None, codewords: int = 256,
             seed: int = 0, max_iters: int = 25,
             tolerance: float = 1e-8) -> PqCodebook:
    """Learn one k-means codebook per contiguous subspace."""
    points = as_matrix(vectors, name="vectors")
    n, dim = points.shape
    if n < 1:
        raise ValueError("need at least one training vector")
    m = default_subspaces(dim) if num_subspaces is None else int(num_subspaces)
    if not 1 <= m <= dim:
        raise ValueError(f"num_subspaces must lie in [1, {dim}], got {m}")
    if not 1 <= codewords <= 256:
        raise ValueError("codewords must lie in [1, 256]")
    effective = codewords
    if effective > n:
        effective = n
        _warnings.warn(
            f"clamping codewords from {codewords} to {n} (training set size)",
            RuntimeWarning, stacklevel=2,
        )
    sub_dim = math.ceil(dim / m)
    padded = _pad_columns(points, m * sub_dim)
    books = np.empty((m, effective, sub_dim))
    for s in range(m):
        block = padded[:, s * sub_dim:(s + 1) * sub_dim]
        sub_seed = int(rng_stream(seed, f"pq-subspace-{s}").integers(2 ** 62))
        part, _ = kmeans(block, KMeansConfig(num_clusters=effective,
                                             max_iters=max_iters,
                                             tolerance=tolerance,
                                             seed=sub_seed))
        books[s] = part.centroids
    return PqCodebook(codebooks=books, dim=dim)


def pq_encode_batch(codebook: PqCodebook, vectors) -> np.ndarray:
    """Encode rows to per-subspace codeword indices, shape (n, m), uint8."""
    points = as_matrix(vectors, name="vectors")
    if points.shape[1] != codebook.dim:
        raise ValueError(
            f"vectors have dimension {points.shape[1]}, codebook expects "
            f"{codebook.dim}"
        )
    padded = _pad_columns(points, codebook.padded_dim)
    sub = codebook.sub_dim
    codes = np.empty((points.shape[0], codebook.num_subspaces), dtype=np.uint8)
    for s in range(codebook.num_subspaces):
        block = padded[:, s * sub:(s + 1) * sub]
        words = codebook.codebooks[s]
        d2 = (np.einsum("ij,ij->i", block, block)[:, None]
              - 2.0 * (block @ words.T)
              + np.einsum("ij,ij->i", words, words)[None, :])
        codes[:, s] = np.argmin(d2, axis=1)
    return codes


def pq_encode(codebook: PqCodebook, vector) -> np.ndarray:
    v = as_vector(vector, name="vector")
    return pq_encode_batch(codebook, v[None, :])[0]


def pq_decode(codebook: PqCodebook, code) -> np.ndarray:
    """Reconstruct the vector a code stands for (padding removed)."""
    idx = np.asarray(code, dtype=np.int64).ravel()
    if idx.size != codebook.num_subspaces:
        raise ValueError(
            f"code has {idx.size} entries, codebook has "
            f"{codebook.num_subspaces} subspaces"
        )
    if idx.min() < 0 or idx.max() >= codebook.codewords:
        raise ValueError("code entry out of codeword range")
    parts = [codebook.codebooks[s, idx[s]] for s in range(codebook.num_subspaces)]
    return np.concatenate(parts)[: codebook.dim]


def adc_table(codebook: PqCodebook, query) -> np.ndarray:
    """Squared-distance lookup table, shape (num_subspaces, codewords)."""
    q = as_vector(query, name="query")
    if q.size != codebook.dim:
        raise ValueError(
            f"query has dimension {q.size}, codebook expects {codebook.dim}"
        )
    padded = _pad_columns(q[None, :], codebook.padded_dim)[0]
    sub = codebook.sub_dim
    table = np.empty((codebook.num_subspaces, codebook.codewords))
    for s in range(codebook.num_subspaces):
        diff = codebook.codebooks[s] - padded[s * sub:(s + 1) * sub]
        table[s] = np.einsum("ij,ij->i", diff, diff)
    return table


def adc_distance(codebook: PqCodebook, query, code) -> float:
    """Asymmetric distance: exact query against a quantized vector."""
    idx = np.asarray(code, dtype=np.int64).ravel()
    table = adc_table(codebook, query)
    if idx.size != table.shape[0]:
        raise ValueError("code length does not match codebook subspaces")
    return float(np.sqrt(max(table[np.arange(idx.size), idx].sum(), 0.0)))


def pq_top_search(codebook: PqCodebook, codes: np.ndarray, query,
                  n_probe: int) -> np.ndarray:
    """Indices of the ``n_probe`` codes nearest to the query by ADC.

    Ties in approximate distance break by ascending index.
    """
    if n_probe < 1:
        raise ValueError("n_probe must be positive")
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != codebook.num_subspaces:
        raise ValueError("codes must have shape (n, num_subspaces)")
    table = adc_table(codebook, query)
    d2 = table[np.arange(codebook.num_subspaces)[None, :],
               codes.astype(np.int64)].sum(axis=1)
    order = np.lexsort((np.arange(codes.shape[0]), d2))
    return order[: min(n_probe, codes.shape[0])].astype(np.int64)


# ---------------------------------------------------------------------------
# Persistence


def serialize_partition(partition: Partition) -> bytes:
    from .serial import ByteWriter, KIND_PARTITION, write_header

    w = ByteWriter()
    write_header(w, KIND_PARTITION)
    k, dim = partition.centroids.shape
    w.u32(k)
    w.u32(dim)
    w.u64(int(partition.assignments.size))
    w.array(partition.centroids, "<f8")
    w.array(partition.assignments, "<u4")
    w.array(partition.ids, "<i8")
    return w.getvalue()


def deserialize_partition(data: bytes) -> Partition:
    from .serial import ByteReader, KIND_PARTITION, read_header

    r = ByteReader(data)
    read_header(r, KIND_PARTITION)
    k = r.u32()
    dim = r.u32()
    n = r.u64()
    centroids = r.array(k * dim, "<f8").reshape(k, dim).astype(np.float64)
    assignments = r.array(n, "<u4").astype(np.int64)
    ids = r.array(n, "<i8").astype(np.int64)
    r.expect_end()
    return Partition(centroids=centroids, assignments=assignments, ids=ids)


def serialize_codebook(codebook: PqCodebook, codes: np.ndarray | None = None) -> bytes:
    from .serial import ByteWriter, KIND_PQ, write_header

    w = ByteWriter()
    write_header(w, KIND_PQ)
    w.u32(codebook.dim)
    w.u32(codebook.num_subspaces)
    w.u32(codebook.codewords)
    w.u32(codebook.sub_dim)
    w.array(codebook.codebooks, "<f8")
    if codes is None:
        w.u64(0)
    else:
        codes = np.asarray(codes, dtype=np.uint8)
        w.u64(int(codes.shape[0]))
        w.array(codes, "u1")
    return w.getvalue()


def deserialize_codebook(data: bytes) -> tuple[PqCodebook, np.ndarray | None]:
    from .serial import ByteReader, KIND_PQ, read_header

    r = ByteReader(data)
    read_header(r, KIND_PQ)
    dim = r.u32()
    m = r.u32()
    codewords = r.u32()
    sub_dim = r.u32()
    books = r.array(m * codewords * sub_dim, "<f8").reshape(
        m, codewords, sub_dim).astype(np.float64)
    n_codes = r.u64()
    codes = None
    if n_codes:
        codes = r.array(n_codes * m, "u1").reshape(n_codes, m).copy()
    r.expect_end()
    return PqCodebook(codebooks=books, dim=dim), codes
