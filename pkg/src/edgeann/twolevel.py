"""Two-level search: route across a k-means partition, then search subsets.

The top level picks the ``n_probe`` nearest partition centroids for a
query (by brute scan, kd-tree, or product-quantized scan); the bottom
level runs an exact or approximate search inside each picked subset and
the partial answers are fused into one top-k.  Work counters add up:
total distance computations equal the top level's plus every probed
subset's.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .core import (
    Catalog,
    ResultSet,
    SearchStats,
    as_vector,
    check_dim,
    merge_top_k,
    rng_stream,
)
from .cluster import (
    KMeansConfig,
    Partition,
    PqCodebook,
    default_subspaces,
    deserialize_codebook,
    deserialize_partition,
    kmeans,
    pq_encode_batch,
    pq_top_search,
    pq_train,
    serialize_codebook,
    serialize_partition,
)
from .flat import FlatIndex, build_flat, deserialize_flat, flat_search, serialize_flat
from .kdtree import KdTree, build_kdtree, deserialize_kdtree, kdtree_search, serialize_kdtree
from .lsh import LshConfig, build_lsh, deserialize_lsh, lsh_search, serialize_lsh
from .rptree import TreeConfig, build_tree, deserialize_tree, serialize_tree, tree_search

TOP_KINDS = ("brute", "kdtree", "pq")
BOTTOM_KINDS = ("brute", "tree", "lsh")

# Subsets smaller than these sizes are built as brute bottoms instead;
# below them the approximate structure cannot beat a plain scan.
MIN_SUBSET_FOR_LSH = 8

_BOTTOM_TAGS = {"brute": 0, "tree": 1, "lsh": 2, "empty": 3}
_BOTTOM_NAMES = {v: k for k, v in _BOTTOM_TAGS.items()}


@dataclass(frozen=True)
class TwoLevelConfig:
    num_subsets: int
    top_kind: str = "brute"
    bottom_kind: str = "brute"
    n_probe: int = 4
    seed: int = 0
    kmeans_max_iters: int = 25
    kmeans_tolerance: float = 1e-4
    tree: TreeConfig | None = None
    lsh: LshConfig | None = None
    pq_subspaces: int | None = None
    pq_codewords: int = 256
    kd_leaf_size: int = 8

    def __post_init__(self) -> None:
        if self.num_subsets < 1:
            raise ValueError("num_subsets must be positive")
        if self.top_kind not in TOP_KINDS:
            raise ValueError(f"top_kind must be one of {TOP_KINDS}")
        if self.bottom_kind not in BOTTOM_KINDS:
            raise ValueError(f"bottom_kind must be one of {BOTTOM_KINDS}")
        if not 1 <= self.n_probe <= self.num_subsets:
            raise ValueError("n_probe must lie in [1, num_subsets]")


@dataclass
class TwoLevelIndex:
    config: TwoLevelConfig
    catalog: Catalog
    partition: Partition
    top: object
    bottoms: list
    bottom_kinds: list[str]
    build_report: dict = field(default_factory=dict)

    @property
    def num_subsets(self) -> int:
        return self.partition.num_clusters


def _subset_profile(masses: np.ndarray | None, rows: np.ndarray,
                    size: int) -> np.ndarray:
    if masses is None:
        return np.full(size, 1.0 / size)
    chunk = masses[rows]
    total = chunk.sum()
    if total <= 0:
        return np.full(size, 1.0 / size)
    return chunk / total


def _build_top(config: TwoLevelConfig, centroids: np.ndarray):
    if config.top_kind == "brute":
        return build_flat(Catalog.from_matrix(centroids))
    if config.top_kind == "kdtree":
        return build_kdtree(centroids, leaf_size=config.kd_leaf_size)
    subspaces = config.pq_subspaces or default_subspaces(centroids.shape[1])
    seed = int(rng_stream(config.seed, "top-pq").integers(2 ** 62))
    codebook = pq_train(centroids, subspaces,
                        min(config.pq_codewords, centroids.shape[0]),
                        seed=seed)
    codes = pq_encode_batch(codebook, centroids)
    return codebook, codes


def build_two_level(catalog: Catalog, config: TwoLevelConfig,
                    profile=None) -> TwoLevelIndex:
    """Partition the catalog and build top and bottom structures.

    Tree bottoms in boosted mode need a likelihood profile (argument or
    catalog-attached); each subset's slice of it is renormalized before
    the subset tree is built.  Subsets too small for their configured
    bottom are built brute instead and recorded in the build report.
    """
    if catalog.is_empty:
        raise ValueError("cannot build an index over an empty catalog")
    if len(catalog) < config.num_subsets:
        raise ValueError(
            f"cannot form {config.num_subsets} subsets from {len(catalog)} "
            f"entities"
        )
    masses = None
    if config.bottom_kind == "tree":
        tree_cfg = config.tree or TreeConfig()
        boosted = tree_cfg.mode == "boosted" and tree_cfg.variance_weight < 1.0
        if boosted:
            source = profile if profile is not None else catalog.likelihoods
            if source is None:
                raise ValueError(
                    "boosted tree bottoms need a likelihood profile"
                )
            masses = np.asarray(getattr(source, "probabilities", source),
                                dtype=np.float64).ravel()
            if masses.size != len(catalog):
                raise ValueError(
                    f"profile covers {masses.size} entities, catalog has "
                    f"{len(catalog)}"
                )

    km_seed = int(rng_stream(config.seed, "partition").integers(2 ** 62))
    partition, _ = kmeans(
        catalog.embeddings,
        KMeansConfig(num_clusters=config.num_subsets,
                     max_iters=config.kmeans_max_iters,
                     tolerance=config.kmeans_tolerance,
                     seed=km_seed),
        ids=catalog.ids,
    )
    top = _build_top(config, partition.centroids)

    bottoms: list = []
    bottom_kinds: list[str] = []
    fallbacks: list[int] = []
    for s in range(config.num_subsets):
        rows = partition.subset_rows[s]
        if rows.size == 0:
            bottoms.append(None)
            bottom_kinds.append("empty")
            continue
        sub_catalog = catalog.subset(rows)
        kind = config.bottom_kind
        if kind == "tree":
            tree_cfg = config.tree or TreeConfig()
            if rows.size <= tree_cfg.max_leaf_size:
                kind = "brute"
        elif kind == "lsh" and rows.size < MIN_SUBSET_FOR_LSH:
            kind = "brute"
        if kind != config.bottom_kind:
            fallbacks.append(s)
        if kind == "brute":
            bottoms.append(build_flat(sub_catalog))
        elif kind == "tree":
            tree_cfg = config.tree or TreeConfig()
            sub_seed = int(rng_stream(config.seed, f"bottom-tree-{s}")
                           .integers(2 ** 62))
            sub_profile = _subset_profile(masses, rows, rows.size)
            tree = build_tree(sub_catalog, sub_profile,
                              replace(tree_cfg, seed=sub_seed))
            bottoms.append(tree)
        else:
            lsh_cfg = config.lsh or LshConfig()
            sub_seed = int(rng_stream(config.seed, f"bottom-lsh-{s}")
                           .integers(2 ** 62))
            bottoms.append(build_lsh(sub_catalog,
                                     replace(lsh_cfg, seed=sub_seed)))
        bottom_kinds.append(kind)

    sizes = partition.sizes
    report = {
        "num_subsets": config.num_subsets,
        "subset_size_mean": float(sizes.mean()),
        "subset_size_min": int(sizes.min()),
        "subset_size_max": int(sizes.max()),
        "top_kind": config.top_kind,
        "bottom_kind": config.bottom_kind,
        "brute_fallbacks": fallbacks,
    }
    return TwoLevelIndex(config=config, catalog=catalog, partition=partition,
                         top=top, bottoms=bottoms, bottom_kinds=bottom_kinds,
                         build_report=report)


def route(index: TwoLevelIndex, query_feature,
          n_probe: int) -> tuple[np.ndarray, SearchStats]:
    """Indices of the ``n_probe`` subsets nearest to the query feature."""
    if not 1 <= n_probe <= index.num_subsets:
        raise ValueError(
            f"n_probe must lie in [1, {index.num_subsets}], got {n_probe}"
        )
    qf = as_vector(query_feature, name="query feature")
    check_dim(index.partition.centroids.shape[1], qf.size,
              what="query feature")
    kind = index.config.top_kind
    if kind == "brute":
        result, stats = flat_search(index.top, qf, n_probe)
        return np.array(result.ids(), dtype=np.int64), stats
    if kind == "kdtree":
        return kdtree_search(index.top, qf, n_probe)
    codebook, codes = index.top
    start = time.perf_counter()
    picked = pq_top_search(codebook, codes, qf, n_probe)
    # Table construction costs one distance-equivalent per codeword column;
    # scanning n codes of m entries costs n*m / dim of them.
    cost = codebook.codewords + math.ceil(
        codes.shape[0] * codebook.num_subspaces / codebook.dim)
    stats = SearchStats(distance_computations=int(cost),
                        wall_time=time.perf_counter() - start)
    return picked, stats


def two_level_search(index: TwoLevelIndex, query, k: int,
                     query_feature=None, n_probe: int | None = None,
                     probe_budget=None, multiprobe_radius: int | None = None
                     ) -> tuple[ResultSet, SearchStats]:
    """Route, search each picked subset, and fuse the partial answers.

    ``probe_budget`` applies to tree bottoms and ``multiprobe_radius`` to
    hash bottoms; both are ignored by brute subsets.  When no separate
    ``query_feature`` is given the embedding query doubles as the routing
    feature.
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    start = time.perf_counter()
    q = as_vector(query, name="query")
    check_dim(index.catalog.dim, q.size)
    feature = q if query_feature is None else as_vector(query_feature,
                                                        name="query feature")
    probes = index.config.n_probe if n_probe is None else n_probe
    subsets, total = route(index, feature, probes)
    radius = 0 if multiprobe_radius is None else multiprobe_radius
    partials = []
    for s in subsets:
        bottom = index.bottoms[int(s)]
        kind = index.bottom_kinds[int(s)]
        if bottom is None:
            continue
        if kind == "brute":
            part, stats = flat_search(bottom, q, k)
        elif kind == "tree":
            part, stats = tree_search(bottom, q, k, budget=probe_budget)
        else:
            part, stats = lsh_search(bottom, q, k, multiprobe_radius=radius)
        partials.append(part)
        total = total + stats
    result = merge_top_k(partials, k)
    total.wall_time = time.perf_counter() - start
    return result, total


# ---------------------------------------------------------------------------
# Configuration guidance


@dataclass(frozen=True)
class Recommendation:
    """Index layout suggestion for a workload's scale and shape."""

    levels: int
    tree_mode: str
    top_kind: str | None = None
    num_subsets: int | None = None
    n_probe: int | None = None
    rationale: str = ""

    def describe(self) -> str:
        if self.levels == 1:
            head = f"one-level tree ({self.tree_mode})"
        else:
            head = (f"two-level: top={self.top_kind}, bottom=tree "
                    f"({self.tree_mode}), num_subsets={self.num_subsets}, "
                    f"n_probe={self.n_probe}")
        return f"{head} [{self.rationale}]"


ONE_LEVEL_MAX_ENTITIES = 30_000
LOW_DIM_MAX = 8
TARGET_SUBSET_SIZE = 100


def recommend_config(num_entities: int, dim: int,
                     has_likelihoods: bool) -> Recommendation:
    """Pick an index layout from catalog size, dimension, and profile
    availability.

    Small catalogs get a single tree.  Larger ones get a two-level layout
    with roughly ``TARGET_SUBSET_SIZE``-entity subsets, routed by kd-tree
    in low dimensions and by quantized scan otherwise.  Tree splits use
    likelihood boosting whenever a profile exists.
    """
    if num_entities < 1 or dim < 1:
        raise ValueError("num_entities and dim must be positive")
    mode = "boosted" if has_likelihoods else "balanced"
    if num_entities <= ONE_LEVEL_MAX_ENTITIES:
        return Recommendation(
            levels=1, tree_mode=mode,
            rationale=f"{num_entities} entities fit one tree "
                      f"(threshold {ONE_LEVEL_MAX_ENTITIES})",
        )
    subsets = max(2, round(num_entities / TARGET_SUBSET_SIZE))
    top = "kdtree" if dim <= LOW_DIM_MAX else "pq"
    n_probe = max(1, min(subsets, round(subsets * 0.01) + 4))
    return Recommendation(
        levels=2, tree_mode=mode, top_kind=top, num_subsets=subsets,
        n_probe=n_probe,
        rationale=f"{num_entities} entities exceed the one-level threshold; "
                  f"dim {dim} is {'low' if top == 'kdtree' else 'high'} "
                  f"for exact routing",
    )


# ---------------------------------------------------------------------------
# Footprint and persistence


@dataclass(frozen=True)
class FootprintReport:
    partition_bytes: int
    top_bytes: int
    bottom_bytes: int
    num_subsets: int

    @property
    def total_bytes(self) -> int:
        return self.partition_bytes + self.top_bytes + self.bottom_bytes


def _serialize_top(index: TwoLevelIndex) -> bytes:
    kind = index.config.top_kind
    if kind == "brute":
        return serialize_flat(index.top)
    if kind == "kdtree":
        return serialize_kdtree(index.top)
    codebook, codes = index.top
    return serialize_codebook(codebook, codes)


def _serialize_bottoms(index: TwoLevelIndex) -> bytes:
    from .serial import ByteWriter

    w = ByteWriter()
    w.u32(len(index.bottoms))
    for bottom, kind in zip(index.bottoms, index.bottom_kinds):
        w.u8(_BOTTOM_TAGS[kind])
        if kind == "empty":
            w.u64(0)
            continue
        if kind == "brute":
            payload = serialize_flat(bottom)
        elif kind == "tree":
            payload = serialize_tree(bottom)
        else:
            payload = serialize_lsh(bottom)
        w.u64(len(payload))
        w.raw(payload)
    return w.getvalue()


def two_level_components(index: TwoLevelIndex) -> dict[str, bytes]:
    """Component files for a bundle: partition, top, and bottoms."""
    return {
        "partition.bin": serialize_partition(index.partition),
        "top.bin": _serialize_top(index),
        "bottoms.bin": _serialize_bottoms(index),
    }


def two_level_from_components(config: TwoLevelConfig, catalog: Catalog,
                              components: dict[str, bytes]) -> TwoLevelIndex:
    from .serial import ByteReader, SerializationError

    partition = deserialize_partition(components["partition.bin"])
    if partition.assignments.size != len(catalog):
        raise SerializationError(
            f"partition covers {partition.assignments.size} rows, catalog "
            f"has {len(catalog)}"
        )
    centroids = partition.centroids
    kind = config.top_kind
    if kind == "brute":
        top = deserialize_flat(components["top.bin"],
                               Catalog.from_matrix(centroids))
    elif kind == "kdtree":
        top = deserialize_kdtree(components["top.bin"], centroids)
    else:
        codebook, codes = deserialize_codebook(components["top.bin"])
        if codes is None:
            raise SerializationError("quantized top is missing its codes")
        top = (codebook, codes)

    r = ByteReader(components["bottoms.bin"])
    count = r.u32()
    if count != partition.num_clusters:
        raise SerializationError(
            f"{count} bottoms stored for {partition.num_clusters} subsets"
        )
    bottoms: list = []
    bottom_kinds: list[str] = []
    for s in range(count):
        tag = r.u8()
        if tag not in _BOTTOM_NAMES:
            raise SerializationError(f"unknown bottom tag {tag}")
        kind_s = _BOTTOM_NAMES[tag]
        length = r.u64()
        payload = bytes(r.array(length, "u1").tobytes())
        if kind_s == "empty":
            bottoms.append(None)
            bottom_kinds.append(kind_s)
            continue
        sub_catalog = catalog.subset(partition.subset_rows[s])
        if kind_s == "brute":
            bottoms.append(deserialize_flat(payload, sub_catalog))
        elif kind_s == "tree":
            bottoms.append(deserialize_tree(payload, sub_catalog))
        else:
            bottoms.append(deserialize_lsh(payload, sub_catalog))
        bottom_kinds.append(kind_s)
    r.expect_end()
    sizes = partition.sizes
    report = {
        "num_subsets": partition.num_clusters,
        "subset_size_mean": float(sizes.mean()),
        "subset_size_min": int(sizes.min()),
        "subset_size_max": int(sizes.max()),
        "top_kind": config.top_kind,
        "bottom_kind": config.bottom_kind,
        "brute_fallbacks": [s for s, k in enumerate(bottom_kinds)
                            if k == "brute" and config.bottom_kind != "brute"],
    }
    return TwoLevelIndex(config=config, catalog=catalog, partition=partition,
                         top=top, bottoms=bottoms, bottom_kinds=bottom_kinds,
                         build_report=report)


def footprint_report(index: TwoLevelIndex) -> FootprintReport:
    """Serialized size of each level; embeddings themselves are excluded."""
    return FootprintReport(
        partition_bytes=len(serialize_partition(index.partition)),
        top_bytes=len(_serialize_top(index)),
        bottom_bytes=len(_serialize_bottoms(index)),
        num_subsets=index.num_subsets,
    )


def config_to_dict(config: TwoLevelConfig) -> dict:
    """JSON-safe form of a config, nested configs included."""
    return asdict(config)


def config_from_dict(data: dict) -> TwoLevelConfig:
    fields = dict(data)
    tree = fields.get("tree")
    if tree is not None:
        fields["tree"] = TreeConfig(**tree)
    lsh = fields.get("lsh")
    if lsh is not None:
        fields["lsh"] = LshConfig(**lsh)
    return TwoLevelConfig(**fields)
