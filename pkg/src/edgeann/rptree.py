"""Random projection trees with likelihood-weighted split selection.

Every internal node holds a unit-vector projection and a threshold chosen
so the query-likelihood mass of the two sides is as equal as possible.
Candidate projections are scored by blending projected variance with the
count-unbalance factor of the mass-balanced split; picking high-unbalance
splits while mass stays balanced is what isolates frequently queried
entities near the root.  In ``balanced`` mode (or with variance weight 1)
the builder never reads the profile and splits reduce to the classic
count-median behavior.
"""

from __future__ import annotations

import heapq
import math
import time
import warnings as _warnings
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Catalog,
    ResultSet,
    SearchStats,
    as_vector,
    check_dim,
    rng_stream,
)

MODES = ("balanced", "boosted")

_TAG_LEAF = 0
_TAG_SPLIT = 1


@dataclass(frozen=True)
class TreeConfig:
    """Build knobs.

    ``variance_weight`` blends projected variance against the unbalance
    factor for nodes at depth up to ``boost_depth``; deeper nodes score by
    variance alone.  ``normalize_scores`` min-max normalizes both terms
    across the candidate projections of a node so the blend weight keeps
    one meaning at every node.
    """

    mode: str = "boosted"
    num_projections: int = 16
    variance_weight: float = 0.5
    boost_depth: int = 3
    max_leaf_size: int = 8
    seed: int = 0
    normalize_scores: bool = True

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_projections < 1:
            raise ValueError("num_projections must be positive")
        if not 0.0 <= self.variance_weight <= 1.0:
            raise ValueError("variance_weight must lie in [0, 1]")
        if self.boost_depth < 0:
            raise ValueError("boost_depth must be non-negative")
        if self.max_leaf_size < 1:
            raise ValueError("max_leaf_size must be positive")


@dataclass(frozen=True)
class ProbeBudget:
    """Cap on the number of leaves a search may scan."""

    max_leaves: int

    def __post_init__(self) -> None:
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be positive")


class SplitNode:
    __slots__ = ("projection", "threshold", "left", "right")

    def __init__(self, projection: np.ndarray, threshold: float):
        self.projection = projection
        self.threshold = threshold
        self.left = None
        self.right = None


class LeafNode:
    __slots__ = ("entity_ids", "rows", "block")

    def __init__(self, entity_ids: np.ndarray, rows: np.ndarray,
                 block: np.ndarray):
        self.entity_ids = entity_ids
        self.rows = rows
        self.block = block


class QlbTree:
    """Built tree plus the bookkeeping searches and reports need."""

    __slots__ = ("root", "config", "catalog", "depth_by_id", "num_leaves",
                 "max_depth", "build_warnings")

    def __init__(self, root, config: TreeConfig, catalog: Catalog,
                 depth_by_id: dict[int, int], num_leaves: int,
                 max_depth: int, build_warnings: tuple[str, ...]):
        self.root = root
        self.config = config
        self.catalog = catalog
        self.depth_by_id = depth_by_id
        self.num_leaves = num_leaves
        self.max_depth = max_depth
        self.build_warnings = build_warnings


def balanced_threshold(projections, likelihoods):
    """Threshold splitting projected values into equal likelihood masses.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values, so neither side is ever empty.  Returns ``(tau, n_left,
    n_right)`` minimizing the absolute mass difference, with ties going to
    the most count-balanced then smallest threshold; returns None when all
    values coincide.
    """
    a = np.asarray(projections, dtype=np.float64).ravel()
    p = np.asarray(likelihoods, dtype=np.float64).ravel()
    if a.size != p.size:
        raise ValueError(f"{a.size} values but {p.size} likelihoods")
    if a.size < 2:
        raise ValueError("need at least two values to split")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("likelihoods must be non-negative and finite")
    order = np.argsort(a, kind="stable")
    a_sorted = a[order]
    w_sorted = p[order]
    boundaries = np.nonzero(np.diff(a_sorted))[0]
    if boundaries.size == 0:
        return None
    prefix = np.cumsum(w_sorted)
    total = prefix[-1]
    imbalance = np.abs(2.0 * prefix[boundaries] - total)
    n_left = boundaries + 1
    n_right = a.size - n_left
    taus = 0.5 * (a_sorted[boundaries] + a_sorted[boundaries + 1])
    pick = np.lexsort((taus, np.abs(n_left - n_right), imbalance))[0]
    return float(taus[pick]), int(n_left[pick]), int(n_right[pick])


def unbalance_factor(n_left: int, n_right: int) -> float:
    """Count skew of a split: max of the two side-size ratios, always >= 1."""
    if n_left < 1 or n_right < 1:
        raise ValueError("both sides must be non-empty")
    return max(n_left / n_right, n_right / n_left)


def projection_variance(values) -> float:
    """Population variance of projected values (normalized by the count)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2:
        raise ValueError("variance needs at least two values")
    return float(v.var())


def split_score(variance_term: float, unbalance_term: float, depth: int,
                config: TreeConfig) -> float:
    """Candidate quality; the builder keeps the argmax across projections."""
    if depth <= config.boost_depth:
        w = config.variance_weight
        return w * variance_term + (1.0 - w) * unbalance_term
    return variance_term


def _minmax(values: np.ndarray) -> np.ndarray:
    lo = values.min()
    span = values.max() - lo
    if span <= 0:
        return np.zeros_like(values)
    return (values - lo) / span


def _unit_vectors(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vecs = rng.standard_normal((count, dim))
    norms = np.linalg.norm(vecs, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        vecs[bad] = rng.standard_normal((int(bad.sum()), dim))
        norms = np.linalg.norm(vecs, axis=1)
    return vecs / norms[:, None]


def _resolve_masses(catalog: Catalog, profile, config: TreeConfig) -> np.ndarray:
    n = len(catalog)
    if config.mode == "balanced" or config.variance_weight == 1.0:
        return np.full(n, 1.0 / n)
    if profile is None:
        if catalog.likelihoods_present:
            profile = catalog.likelihoods
        else:
            raise ValueError(
                "boosted mode needs a likelihood profile (pass one or use a "
                "catalog that carries likelihoods)"
            )
    p = np.asarray(getattr(profile, "probabilities", profile),
                   dtype=np.float64).ravel()
    if p.size != n:
        raise ValueError(f"profile covers {p.size} entities, catalog has {n}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("profile must be non-negative and finite")
    total = p.sum()
    if total <= 0:
        raise ValueError("profile has no mass")
    return p / total


def build_tree(catalog: Catalog, profile=None,
               config: TreeConfig = TreeConfig()) -> QlbTree:
    """Grow a tree over the catalog; deterministic given config.seed."""
    if catalog.is_empty:
        raise ValueError("cannot build a tree over an empty catalog")
    masses = _resolve_masses(catalog, profile, config)
    emb = catalog.embeddings
    dim = catalog.dim
    rng = rng_stream(config.seed, "tree-projections")

    depth_by_id: dict[int, int] = {}
    build_warnings: list[str] = []
    counters = {"leaves": 0, "max_depth": 0}

    def make_leaf(rows: np.ndarray, depth: int) -> LeafNode:
        ids = catalog.ids[rows]
        for e in ids:
            depth_by_id[int(e)] = depth
        counters["leaves"] += 1
        counters["max_depth"] = max(counters["max_depth"], depth)
        return LeafNode(entity_ids=ids, rows=rows, block=emb[rows])

    root_slot: list = [None]

    def attach(slot, node) -> None:
        holder, side = slot
        if holder is root_slot:
            root_slot[0] = node
        else:
            setattr(holder, side, node)

    # Explicit stack, preorder with left before right, so the projection
    # stream is consumed in a reproducible order and deep chains cannot
    # overflow Python's recursion limit.
    stack = [(np.arange(len(catalog), dtype=np.int64), 0, (root_slot, ""))]
    while stack:
        rows, depth, slot = stack.pop()
        m = rows.size
        if m <= config.max_leaf_size:
            attach(slot, make_leaf(rows, depth))
            continue
        # Past boost_depth the builder stops balancing on likelihood mass
        # and reverts to plain count-balanced behavior; without this, skewed
        # node profiles keep producing lopsided splits all the way down and
        # rare entities pay unbounded extra depth.
        if depth <= config.boost_depth:
            local_p = masses[rows]
        else:
            local_p = np.full(m, 1.0 / m)
        vecs = _unit_vectors(rng, config.num_projections, dim)
        proj = emb[rows] @ vecs.T
        candidates = []
        for j in range(config.num_projections):
            found = balanced_threshold(proj[:, j], local_p)
            if found is not None:
                candidates.append((j, *found))
        if not candidates:
            block = emb[rows]
            spans = block.max(axis=0) - block.min(axis=0)
            axis = int(np.argmax(spans))
            if spans[axis] <= 0:
                # All points identical: no separating hyperplane exists.
                build_warnings.append(
                    f"leaf of {m} identical points exceeds max_leaf_size "
                    f"{config.max_leaf_size} at depth {depth}"
                )
                attach(slot, make_leaf(rows, depth))
                continue
            found = balanced_threshold(block[:, axis], np.full(m, 1.0 / m))
            tau, _, _ = found
            direction = np.zeros(dim)
            direction[axis] = 1.0
            node = SplitNode(projection=direction, threshold=tau)
            mask = block[:, axis] <= tau
        else:
            variances = np.array([projection_variance(proj[:, c[0]])
                                  for c in candidates])
            factors = np.array([unbalance_factor(c[2], c[3])
                                for c in candidates])
            if config.normalize_scores:
                var_term = _minmax(variances)
                unb_term = _minmax(factors)
            else:
                var_term = variances
                unb_term = factors
            scores = np.array([
                split_score(var_term[i], unb_term[i], depth, config)
                for i in range(len(candidates))
            ])
            j, tau, n_left, _ = candidates[int(np.argmax(scores))]
            node = SplitNode(projection=vecs[j], threshold=tau)
            mask = proj[:, j] <= tau
            assert int(mask.sum()) == n_left
        attach(slot, node)
        stack.append((rows[~mask], depth + 1, (node, "right")))
        stack.append((rows[mask], depth + 1, (node, "left")))

    for message in build_warnings:
        _warnings.warn(message, RuntimeWarning, stacklevel=2)
    return QlbTree(
        root=root_slot[0],
        config=config,
        catalog=catalog,
        depth_by_id=depth_by_id,
        num_leaves=counters["leaves"],
        max_depth=counters["max_depth"],
        build_warnings=tuple(build_warnings),
    )


def _resolve_budget(budget) -> float:
    if budget is None:
        return math.inf
    if isinstance(budget, ProbeBudget):
        return budget.max_leaves
    limit = int(budget)
    if limit < 1:
        raise ValueError("probe budget must allow at least one leaf")
    return limit


def tree_search(tree: QlbTree, query, k: int,
                budget=None) -> tuple[ResultSet, SearchStats]:
    """Best-first descent with backtracking ordered by hyperplane margin.

    The home leaf is scanned first; further leaves are taken from a
    priority queue keyed by the distance from the query to the splitting
    hyperplanes crossed on the way down.  With no budget every leaf is
    eventually scanned and the answer is exact.  Raising the budget never
    drops leaves from the probed set, so recall is monotone in it.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    limit = _resolve_budget(budget)
    start = time.perf_counter()
    q = as_vector(query, name="query")
    check_dim(tree.catalog.dim, q.size)
    stats = SearchStats()
    heap: list[tuple[float, int, object]] = [(0.0, 0, tree.root)]
    tick = 1
    found_ids: list[np.ndarray] = []
    found_d2: list[np.ndarray] = []
    scanned = 0
    while heap and scanned < limit:
        _, _, node = heapq.heappop(heap)
        while isinstance(node, SplitNode):
            stats.nodes_visited += 1
            stats.distance_computations += 1
            offset = float(node.projection @ q) - node.threshold
            if offset <= 0:
                near, far = node.left, node.right
            else:
                near, far = node.right, node.left
            heapq.heappush(heap, (abs(offset), tick, far))
            tick += 1
            node = near
        stats.nodes_visited += 1
        stats.leaves_probed += 1
        scanned += 1
        diff = node.block - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        stats.distance_computations += int(node.entity_ids.size)
        found_ids.append(node.entity_ids)
        found_d2.append(d2)
    ids = np.concatenate(found_ids) if found_ids else np.empty(0, dtype=np.int64)
    d2 = np.concatenate(found_d2) if found_d2 else np.empty(0)
    result = ResultSet.from_candidates(ids, np.sqrt(np.maximum(d2, 0.0)), k)
    stats.wall_time = time.perf_counter() - start
    return result, stats


def expected_depth(tree: QlbTree, profile) -> float:
    """Likelihood-weighted mean leaf depth; uniform weights give the plain mean."""
    p = np.asarray(getattr(profile, "probabilities", profile),
                   dtype=np.float64).ravel()
    if p.size != len(tree.catalog):
        raise ValueError(
            f"profile covers {p.size} entities, tree holds {len(tree.catalog)}"
        )
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("profile must be non-negative and finite")
    depths = np.array([tree.depth_by_id[int(e)] for e in tree.catalog.ids],
                      dtype=np.float64)
    return float(np.dot(p, depths))


def sweep_variance_weight(catalog: Catalog, profile,
                          config: TreeConfig = TreeConfig(),
                          weights=(0.0, 0.25, 0.5, 0.75, 1.0)
                          ) -> list[tuple[float, float]]:
    """Expected depth for each blend weight; supports picking one offline."""
    out = []
    for w in weights:
        cfg = replace(config, mode="boosted", variance_weight=float(w))
        tree = build_tree(catalog, profile, cfg)
        out.append((float(w), expected_depth(tree, profile)))
    return out


# ---------------------------------------------------------------------------
# Persistence


def serialize_tree(tree: QlbTree) -> bytes:
    from .serial import ByteWriter, KIND_TREE, write_header

    w = ByteWriter()
    write_header(w, KIND_TREE)
    cfg = tree.config
    w.u8(MODES.index(cfg.mode))
    w.u32(cfg.num_projections)
    w.f64(cfg.variance_weight)
    w.u32(cfg.boost_depth)
    w.u32(cfg.max_leaf_size)
    w.i64(cfg.seed)
    w.u8(1 if cfg.normalize_scores else 0)
    w.u32(tree.catalog.dim)
    w.u32(len(tree.build_warnings))
    for message in tree.build_warnings:
        blob = message.encode("utf-8")
        w.u32(len(blob))
        w.raw(blob)
    stack = [tree.root]
    while stack:
        node = stack.pop()
        if isinstance(node, SplitNode):
            w.u8(_TAG_SPLIT)
            w.f64(node.threshold)
            w.array(node.projection, "<f8")
            stack.append(node.right)
            stack.append(node.left)
        else:
            w.u8(_TAG_LEAF)
            w.u32(int(node.entity_ids.size))
            w.array(node.entity_ids, "<i8")
    return w.getvalue()


def deserialize_tree(data: bytes, catalog: Catalog) -> QlbTree:
    from .serial import ByteReader, KIND_TREE, SerializationError, read_header

    r = ByteReader(data)
    read_header(r, KIND_TREE)
    mode_tag = r.u8()
    if mode_tag >= len(MODES):
        raise SerializationError(f"unknown tree mode tag {mode_tag}")
    config = TreeConfig(
        mode=MODES[mode_tag],
        num_projections=r.u32(),
        variance_weight=r.f64(),
        boost_depth=r.u32(),
        max_leaf_size=r.u32(),
        seed=r.i64(),
        normalize_scores=bool(r.u8()),
    )
    dim = r.u32()
    if catalog.dim != dim:
        raise SerializationError(
            f"tree was built over dimension {dim}, catalog has {catalog.dim}"
        )
    build_warnings = []
    for _ in range(r.u32()):
        length = r.u32()
        build_warnings.append(r.array(length, "u1").tobytes().decode("utf-8"))

    emb = catalog.embeddings
    depth_by_id: dict[int, int] = {}
    num_leaves = 0
    max_depth = 0
    root_slot: list = [None]
    stack = [((root_slot, ""), 0)]
    while stack:
        (holder, side), depth = stack.pop()
        tag = r.u8()
        if tag == _TAG_SPLIT:
            threshold = r.f64()
            projection = r.array(dim, "<f8").astype(np.float64)
            node = SplitNode(projection=projection, threshold=threshold)
            stack.append(((node, "right"), depth + 1))
            stack.append(((node, "left"), depth + 1))
        elif tag == _TAG_LEAF:
            count = r.u32()
            ids = r.array(count, "<i8").astype(np.int64)
            rows = catalog.rows_of(ids)
            node = LeafNode(entity_ids=catalog.ids[rows], rows=rows,
                            block=emb[rows])
            for e in node.entity_ids:
                depth_by_id[int(e)] = depth
            num_leaves += 1
            max_depth = max(max_depth, depth)
        else:
            raise SerializationError(f"unknown node tag {tag}")
        if holder is root_slot:
            root_slot[0] = node
        else:
            setattr(holder, side, node)
    r.expect_end()
    return QlbTree(
        root=root_slot[0],
        config=config,
        catalog=catalog,
        depth_by_id=depth_by_id,
        num_leaves=num_leaves,
        max_depth=max_depth,
        build_warnings=tuple(build_warnings),
    )
