"""Command line interface.

Subcommands: ``generate`` synthetic workloads, ``build`` an index bundle,
``search`` a bundle, ``bench`` recall/cost sweeps with reports and
figures, and ``recommend`` an index layout.

Exit codes: 0 success, 2 usage errors, 3 unreadable or malformed data,
4 benchmark gate failure under ``--strict``.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import serial
from .bench import DEFAULT_GATES, SweepVariant, run_sweep, write_report
from .core import Catalog
from .cluster import deserialize_partition
from .data import (
    BetaSimConfig,
    ParseError,
    beta_params_for_score,
    BETA_GRID_NUM_ENTITIES,
    compute_ground_truth,
    generate_synthetic,
    read_fvecs,
    read_ivecs,
    read_likelihoods,
    simulate_likelihoods,
    unbalance_score,
    write_fvecs,
    write_ivecs,
    write_likelihoods,
    write_traffic,
)
from .flat import build_flat, deserialize_flat, flat_search, serialize_flat
from .lsh import LshConfig, build_lsh, deserialize_lsh, lsh_search, serialize_lsh
from .rptree import (
    TreeConfig,
    build_tree,
    deserialize_tree,
    serialize_tree,
    tree_search,
)
from .twolevel import (
    TwoLevelConfig,
    build_two_level,
    config_from_dict,
    config_to_dict,
    footprint_report,
    recommend_config,
    two_level_components,
    two_level_from_components,
    two_level_search,
)

INDEX_KINDS = ("flat", "qlbt", "tree", "lsh", "two-level")


class UsageError(Exception):
    """Bad flag combination; maps to exit code 2."""


def _round_trip_float32(matrix: np.ndarray) -> np.ndarray:
    """Apply the precision loss of an fvecs write/read cycle up front."""
    return np.asarray(matrix, dtype=np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.target_score is not None:
        alpha, beta = beta_params_for_score(args.target_score)
        if args.num != BETA_GRID_NUM_ENTITIES:
            print(
                f"note: --target-score is calibrated for "
                f"{BETA_GRID_NUM_ENTITIES} entities; the realized score at "
                f"{args.num} will drift",
                file=sys.stderr,
            )
    else:
        alpha, beta = args.alpha, args.beta
    catalog = generate_synthetic(args.num, args.dim, args.clusters, args.seed,
                                 spread=args.spread)
    catalog = Catalog.from_matrix(_round_trip_float32(catalog.embeddings))
    sim = BetaSimConfig(alpha=alpha, beta=beta, num_entities=args.num,
                        num_queries=args.queries, seed=args.seed)
    profile, traffic = simulate_likelihoods(sim, catalog,
                                            noise_sigma=args.noise)
    queries = _round_trip_float32(traffic.query_vectors)

    write_fvecs(catalog, out / "catalog.fvecs")
    write_likelihoods(profile, out / "likelihoods.txt")
    write_fvecs(queries, out / "queries.fvecs")
    write_traffic(traffic, out / "traffic.txt")
    names = ["catalog.fvecs", "likelihoods.txt", "queries.fvecs",
             "traffic.txt"]
    if args.gt_k > 0 and args.queries > 0:
        truth = compute_ground_truth(catalog, queries, args.gt_k)
        write_ivecs(truth, out / "gt.ivecs")
        names.append("gt.ivecs")
    score = unbalance_score(profile)
    print(f"wrote {', '.join(names)} to {out}")
    print(f"entities={args.num} dim={args.dim} queries={args.queries} "
          f"unbalance_score={score:.4f}")
    return 0


# ---------------------------------------------------------------------------
# build


def _tree_config(args, mode: str) -> TreeConfig:
    return TreeConfig(
        mode=mode,
        num_projections=args.num_projections,
        variance_weight=args.variance_weight,
        boost_depth=args.boost_depth,
        max_leaf_size=args.leaf_size,
        seed=args.seed,
        normalize_scores=not args.raw_scores,
    )


def _lsh_config(args) -> LshConfig:
    return LshConfig(pool_size=args.pool_size, num_tables=args.tables,
                     bits_per_table=args.bits, seed=args.seed)


def _require_likelihoods(args, why: str):
    if args.likelihoods is None:
        raise UsageError(
            f"{why} needs --likelihoods <file> (text, one probability per "
            f"line, summing to one)"
        )
    return read_likelihoods(args.likelihoods)


def cmd_build(args) -> int:
    catalog = read_fvecs(args.data)
    if catalog.is_empty:
        raise UsageError(f"{args.data} holds no vectors")
    profile = None
    if args.likelihoods is not None:
        profile = read_likelihoods(args.likelihoods)
        if len(profile) != len(catalog):
            raise ParseError(
                f"{args.likelihoods} covers {len(profile)} entities, catalog "
                f"has {len(catalog)}"
            )

    files: dict[str, bytes] = {}
    report: dict = {"num_entities": len(catalog), "dim": catalog.dim}
    kind = args.index
    if kind == "flat":
        index = build_flat(catalog)
        config = {"seed": args.seed}
        files["index.bin"] = serialize_flat(index)
    elif kind in ("qlbt", "tree"):
        if kind == "qlbt":
            profile = profile if profile is not None else _require_likelihoods(
                args, "index kind 'qlbt'")
            cfg = _tree_config(args, "boosted")
        else:
            cfg = _tree_config(args, "balanced")
        tree = build_tree(catalog, profile, cfg)
        config = asdict(cfg)
        files["tree.bin"] = serialize_tree(tree)
        report.update(num_leaves=tree.num_leaves, max_depth=tree.max_depth,
                      warnings=list(tree.build_warnings))
    elif kind == "lsh":
        cfg = _lsh_config(args)
        index = build_lsh(catalog, cfg)
        config = asdict(cfg)
        files["lsh.bin"] = serialize_lsh(index)
        report.update(buckets=[int(t.keys.size) for t in index.tables])
    else:
        if args.subsets is None:
            raise UsageError("index kind 'two-level' needs --subsets")
        tree_cfg = None
        lsh_cfg = None
        if args.bottom == "tree":
            mode = "boosted" if profile is not None else "balanced"
            tree_cfg = _tree_config(args, mode)
        elif args.bottom == "lsh":
            lsh_cfg = _lsh_config(args)
        cfg = TwoLevelConfig(
            num_subsets=args.subsets,
            top_kind=args.top,
            bottom_kind=args.bottom,
            n_probe=min(args.n_probe, args.subsets),
            seed=args.seed,
            tree=tree_cfg,
            lsh=lsh_cfg,
            pq_subspaces=args.pq_subspaces,
            kd_leaf_size=args.kd_leaf_size,
        )
        index = build_two_level(catalog, cfg, profile=profile)
        config = config_to_dict(cfg)
        files.update(two_level_components(index))
        report.update(index.build_report)
        foot = footprint_report(index)
        report.update(footprint_bytes=foot.total_bytes)

    files["catalog.fvecs"] = Path(args.data).read_bytes()
    if args.likelihoods is not None:
        files["likelihoods.txt"] = Path(args.likelihoods).read_bytes()
    manifest = serial.save_bundle(args.out, kind, config, files,
                                  build_report=report)
    print(f"wrote {manifest.parent} ({kind}, {len(catalog)} entities)")
    return 0


# ---------------------------------------------------------------------------
# search


def load_index(directory):
    """Load a bundle; returns (kind, index, catalog, profile or None)."""
    bundle = serial.load_bundle(directory)
    root = Path(directory)
    catalog = read_fvecs(root / "catalog.fvecs")
    profile = None
    if "likelihoods.txt" in bundle.files:
        profile = read_likelihoods(root / "likelihoods.txt")
        catalog = Catalog(catalog.ids, catalog.embeddings,
                          profile.probabilities)
    kind = bundle.kind
    if kind == "flat":
        index = deserialize_flat(bundle.files["index.bin"], catalog)
    elif kind in ("qlbt", "tree"):
        index = deserialize_tree(bundle.files["tree.bin"], catalog)
    elif kind == "lsh":
        index = deserialize_lsh(bundle.files["lsh.bin"], catalog)
    elif kind == "two-level":
        index = two_level_from_components(config_from_dict(bundle.config),
                                          catalog, bundle.files)
    else:
        raise serial.SerializationError(f"unknown index kind {kind!r}")
    return kind, index, catalog, profile


def cmd_search(args) -> int:
    kind, index, catalog, _ = load_index(args.index)
    queries = read_fvecs(args.queries)
    if queries.is_empty:
        raise UsageError(f"{args.queries} holds no vectors")
    sink = sys.stdout if args.out is None else Path(args.out).open("w")
    try:
        for qi in range(len(queries)):
            q = queries.embeddings[qi]
            if kind == "flat":
                result, stats = flat_search(index, q, args.k)
            elif kind in ("qlbt", "tree"):
                result, stats = tree_search(index, q, args.k,
                                            budget=args.budget)
            elif kind == "lsh":
                result, stats = lsh_search(index, q, args.k,
                                           multiprobe_radius=args.radius)
            else:
                result, stats = two_level_search(
                    index, q, args.k, n_probe=args.n_probe,
                    probe_budget=args.budget,
                    multiprobe_radius=args.radius,
                )
            print(f"# query {qi}", file=sink)
            for rank, nb in enumerate(result):
                print(f"{rank},{nb.id},{nb.distance:.6f}", file=sink)
            if args.stats:
                print(
                    f"# stats distance_computations="
                    f"{stats.distance_computations} "
                    f"nodes_visited={stats.nodes_visited} "
                    f"leaves_probed={stats.leaves_probed} "
                    f"wall_ms={stats.wall_time * 1e3:.3f}",
                    file=sink,
                )
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


# ---------------------------------------------------------------------------
# bench


def _bench_variants(args, catalog, profile):
    variants = []
    for name in args.variant:
        if name == "flat":
            idx = build_flat(catalog)
            variants.append(SweepVariant(
                name="flat",
                search=lambda q, knob, idx=idx: flat_search(idx, q, args.k),
                knobs=(0,),
            ))
        elif name in ("qlbt", "tree"):
            if name == "qlbt":
                if profile is None:
                    raise UsageError(
                        "variant 'qlbt' needs --likelihoods <file>")
                cfg = _tree_config(args, "boosted")
            else:
                cfg = _tree_config(args, "balanced")
            tree = build_tree(catalog, profile, cfg)
            variants.append(SweepVariant(
                name=name,
                search=lambda q, knob, t=tree: tree_search(
                    t, q, args.k, budget=int(knob)),
            ))
        elif name == "lsh":
            idx = build_lsh(catalog, _lsh_config(args))
            variants.append(SweepVariant(
                name="lsh",
                search=lambda q, knob, idx=idx: lsh_search(
                    idx, q, args.k, multiprobe_radius=int(knob)),
            ))
        elif name == "two-level":
            if args.subsets is None:
                raise UsageError("variant 'two-level' needs --subsets")
            tree_cfg = None
            lsh_cfg = None
            if args.bottom == "tree":
                mode = "boosted" if profile is not None else "balanced"
                tree_cfg = _tree_config(args, mode)
            elif args.bottom == "lsh":
                lsh_cfg = _lsh_config(args)
            cfg = TwoLevelConfig(
                num_subsets=args.subsets, top_kind=args.top,
                bottom_kind=args.bottom, n_probe=1, seed=args.seed,
                tree=tree_cfg, lsh=lsh_cfg,
                pq_subspaces=args.pq_subspaces,
                kd_leaf_size=args.kd_leaf_size,
            )
            idx = build_two_level(catalog, cfg, profile=profile)
            knobs = tuple(int(v) for v in args.knob_list
                          if 1 <= int(v) <= args.subsets)
            if not knobs:
                raise UsageError(
                    "no knob in --knobs fits [1, --subsets] for two-level")
            variants.append(SweepVariant(
                name="two-level",
                search=lambda q, knob, idx=idx: two_level_search(
                    idx, q, args.k, n_probe=int(knob),
                    probe_budget=args.budget,
                    multiprobe_radius=args.radius),
                knobs=knobs,
            ))
        else:
            raise UsageError(f"unknown variant {name!r}")
    return variants


def cmd_bench(args) -> int:
    catalog = read_fvecs(args.data)
    if catalog.is_empty:
        raise UsageError(f"{args.data} holds no vectors")
    queries = read_fvecs(args.queries)
    truth = read_ivecs(args.ground_truth)
    profile = None
    if args.likelihoods is not None:
        profile = read_likelihoods(args.likelihoods)
    args.knob_list = [float(v) for v in args.knobs.split(",") if v.strip()]
    if not args.knob_list:
        raise UsageError("--knobs must name at least one value")
    variants = _bench_variants(args, catalog, profile)
    points = run_sweep(variants, args.knob_list, queries.embeddings, truth,
                       k=args.k, seed=args.seed)
    gates = DEFAULT_GATES if args.gates == "default" else None
    csv_path, summary_path = write_report(points, args.out, k=args.k,
                                          gates=gates)
    written = [str(csv_path), str(summary_path)]
    if not args.no_plot:
        from .plots import plot_recall_cost, plot_recall_vs_knob

        written.append(str(plot_recall_cost(
            points, Path(args.out) / "recall_vs_cost.png")))
        written.append(str(plot_recall_vs_knob(
            points, Path(args.out) / "recall_vs_knob.png")))
    print("wrote " + ", ".join(written))
    if gates is not None and args.strict:
        failing = []
        for variant in variants:
            mine = [pt for pt in points if pt.variant == variant.name]
            if not any(pt.passes(gates) for pt in mine):
                failing.append(variant.name)
        if failing:
            print(f"gate failure: no passing point for "
                  f"{', '.join(failing)}", file=sys.stderr)
            return 4
    return 0


# ---------------------------------------------------------------------------
# recommend


def cmd_recommend(args) -> int:
    rec = recommend_config(args.num, args.dim, args.has_likelihoods)
    print(rec.describe())
    print(f"levels={rec.levels}")
    print(f"tree_mode={rec.tree_mode}")
    if rec.levels == 2:
        print(f"top_kind={rec.top_kind}")
        print(f"num_subsets={rec.num_subsets}")
        print(f"n_probe={rec.n_probe}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_tree_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--num-projections", type=int, default=16,
                   help="candidate projections per node (default 16)")
    p.add_argument("--variance-weight", "--lambda", dest="variance_weight",
                   type=float, default=0.5,
                   help="blend weight: 1 ignores likelihoods (default 0.5)")
    p.add_argument("--boost-depth", type=int, default=3,
                   help="deepest level using the blended score (default 3)")
    p.add_argument("--leaf-size", type=int, default=8,
                   help="max entities per leaf (default 8)")
    p.add_argument("--raw-scores", action="store_true",
                   help="skip per-node min-max normalization of split scores")


def _add_lsh_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pool-size", type=int, default=64,
                   help="shared projection pool size (default 64)")
    p.add_argument("--tables", type=int, default=8,
                   help="hash tables (default 8)")
    p.add_argument("--bits", type=int, default=12,
                   help="bits per table key (default 12)")


def _add_twolevel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--subsets", type=int, default=None,
                   help="number of k-means subsets (two-level only)")
    p.add_argument("--top", choices=("brute", "kdtree", "pq"),
                   default="brute", help="routing structure (default brute)")
    p.add_argument("--bottom", choices=("brute", "tree", "lsh"),
                   default="brute", help="per-subset structure (default brute)")
    p.add_argument("--pq-subspaces", type=int, default=None,
                   help="subspaces for a quantized top (default: heuristic)")
    p.add_argument("--kd-leaf-size", type=int, default=8,
                   help="leaf size for a kd-tree top (default 8)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeann",
        description="Approximate nearest neighbor indexes tuned by query "
                    "likelihood, with a recall/cost benchmark harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic workload")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--num", type=int, default=256, help="entities (default 256)")
    g.add_argument("--dim", type=int, default=16, help="dimension (default 16)")
    g.add_argument("--clusters", type=int, default=8,
                   help="synthetic blob count (default 8)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--queries", type=int, default=1000,
                   help="queries to sample (default 1000)")
    g.add_argument("--noise", type=float, default=0.0,
                   help="gaussian noise added to query vectors (default 0)")
    g.add_argument("--spread", type=float, default=0.05,
                   help="within-cluster spread (default 0.05)")
    g.add_argument("--alpha", type=float, default=1.0,
                   help="likelihood Beta alpha (default 1.0)")
    g.add_argument("--beta", type=float, default=1.0,
                   help="likelihood Beta beta (default 1.0)")
    g.add_argument("--target-score", type=float, default=None,
                   help="pick Beta parameters for this unbalance score "
                        "(calibrated at 256 entities)")
    g.add_argument("--gt-k", type=int, default=10,
                   help="ground-truth depth; 0 skips gt.ivecs (default 10)")
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("build", help="build an index bundle")
    b.add_argument("--data", required=True, help="catalog fvecs file")
    b.add_argument("--index", required=True, choices=INDEX_KINDS)
    b.add_argument("--out", required=True, help="bundle directory")
    b.add_argument("--likelihoods", default=None,
                   help="likelihood profile text file")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--n-probe", type=int, default=4,
                   help="default subsets probed at search (two-level)")
    _add_tree_flags(b)
    _add_lsh_flags(b)
    _add_twolevel_flags(b)
    b.set_defaults(func=cmd_build)

    s = sub.add_parser("search", help="query an index bundle")
    s.add_argument("--index", required=True, help="bundle directory")
    s.add_argument("--queries", required=True, help="query fvecs file")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--budget", type=int, default=None,
                   help="leaf probe budget for tree indexes")
    s.add_argument("--radius", type=int, default=0,
                   help="multiprobe Hamming radius for hash indexes")
    s.add_argument("--n-probe", type=int, default=None,
                   help="subsets probed (two-level)")
    s.add_argument("--stats", action="store_true",
                   help="print per-query work counters")
    s.add_argument("--out", default=None, help="write results here instead "
                                               "of stdout")
    s.set_defaults(func=cmd_search)

    be = sub.add_parser("bench", help="run a recall/cost sweep")
    be.add_argument("--data", required=True, help="catalog fvecs file")
    be.add_argument("--queries", required=True, help="query fvecs file")
    be.add_argument("--ground-truth", required=True, help="ivecs file")
    be.add_argument("--out", required=True, help="report directory")
    be.add_argument("--variant", action="append",
                    default=None,
                    choices=("flat", "qlbt", "tree", "lsh", "two-level"),
                    help="repeatable; default: qlbt and tree")
    be.add_argument("--likelihoods", default=None)
    be.add_argument("--knobs", default="1,2,4,8,16",
                    help="comma-separated effort grid (default 1,2,4,8,16)")
    be.add_argument("--k", type=int, default=10)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--budget", type=int, default=None,
                    help="tree budget inside two-level bottoms")
    be.add_argument("--radius", type=int, default=0,
                    help="multiprobe radius inside two-level bottoms")
    be.add_argument("--gates", choices=("default", "none"), default="default")
    be.add_argument("--strict", action="store_true",
                    help="exit 4 unless every variant passes the gates at "
                         "some knob")
    be.add_argument("--no-plot", action="store_true",
                    help="skip figure rendering")
    _add_tree_flags(be)
    _add_lsh_flags(be)
    _add_twolevel_flags(be)
    be.set_defaults(func=cmd_bench)

    r = sub.add_parser("recommend", help="suggest an index layout")
    r.add_argument("--num", type=int, required=True, help="catalog size")
    r.add_argument("--dim", type=int, required=True)
    likes = r.add_mutually_exclusive_group()
    likes.add_argument("--has-likelihoods", dest="has_likelihoods",
                       action="store_true", default=False)
    likes.add_argument("--no-likelihoods", dest="has_likelihoods",
                       action="store_false")
    r.set_defaults(func=cmd_recommend)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    if getattr(args, "command", None) == "bench" and args.variant is None:
        args.variant = ["qlbt", "tree"]
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, serial.SerializationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except BrokenPipeError:
        # Downstream reader (a pager, head) went away; nothing to report.
        devnull = os.open(os.devnull, os.O_WRONLY)
        os.dup2(devnull, sys.stdout.fileno())
        return 0
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
