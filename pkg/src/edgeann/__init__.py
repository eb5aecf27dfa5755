"""Approximate nearest neighbor search tuned by query likelihood.

The package provides a flat scan baseline, projection trees whose splits
follow query-likelihood mass, pooled sign-hyperplane hashing, a two-level
partitioned index, and a benchmark harness that measures recall against
hardware-independent cost counters.
"""

from .core import (
    Catalog,
    DimensionMismatch,
    EntityRecord,
    Neighbor,
    ResultSet,
    SearchStats,
    euclidean_distance,
    merge_top_k,
    rng_stream,
)
from .data import (
    BetaSimConfig,
    LikelihoodProfile,
    ParseError,
    TrafficSample,
    beta_params_for_score,
    compute_ground_truth,
    generate_synthetic,
    read_fvecs,
    read_ivecs,
    read_likelihoods,
    read_traffic,
    simulate_likelihoods,
    unbalance_score,
    write_fvecs,
    write_ivecs,
    write_likelihoods,
    write_traffic,
)
from .flat import FlatIndex, build_flat, flat_search
from .rptree import (
    ProbeBudget,
    QlbTree,
    TreeConfig,
    balanced_threshold,
    build_tree,
    deserialize_tree,
    expected_depth,
    projection_variance,
    serialize_tree,
    split_score,
    sweep_variance_weight,
    tree_search,
    unbalance_factor,
)
from .lsh import LshConfig, LshIndex, build_lsh, deserialize_lsh, lsh_search, serialize_lsh
from .cluster import (
    KMeansConfig,
    Partition,
    PqCodebook,
    adc_distance,
    adc_table,
    default_subspaces,
    kmeans,
    pq_decode,
    pq_encode,
    pq_encode_batch,
    pq_top_search,
    pq_train,
)
from .kdtree import KdTree, build_kdtree, kdtree_search
from .twolevel import (
    FootprintReport,
    Recommendation,
    TwoLevelConfig,
    TwoLevelIndex,
    build_two_level,
    footprint_report,
    recommend_config,
    route,
    two_level_search,
)
from .bench import (
    CurvePoint,
    DEFAULT_GATES,
    GateConfig,
    SweepVariant,
    percentile,
    probes_to_recall,
    recall_at_k,
    run_sweep,
    sample_traffic,
    write_report,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
