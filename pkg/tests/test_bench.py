"""Benchmark harness: recall, percentiles, sweeps, reports, plots."""

import numpy as np
import pytest

import edgeann as ea
from edgeann.bench import CSV_COLUMNS, CurvePoint, read_report
from edgeann.plots import plot_recall_cost, plot_recall_vs_knob
from oracles import nearest_rank_percentile


def make_point(**kw):
    base = dict(variant="v", knob=1.0, recall_at_k=0.9, p90_wall_ms=1.0,
                p90_dist_comps=10.0, mean_dist_comps=8.0, seed=0)
    base.update(kw)
    return CurvePoint(**base)


class TestRecallAtK:
    def test_counts_first_truth_entry_only(self):
        results = [
            ea.ResultSet.from_candidates([1, 2, 3], [0.1, 0.2, 0.3], k=3),
            ea.ResultSet.from_candidates([9, 8], [0.1, 0.2], k=3),
        ]
        gt = [[2, 999], [5, 9]]
        assert ea.recall_at_k(results, gt) == 0.5

    def test_k_cutoff_applies(self):
        results = [ea.ResultSet.from_candidates([1, 2, 3], [0.1, 0.2, 0.3], k=3)]
        assert ea.recall_at_k(results, [[3]], k=2) == 0.0
        assert ea.recall_at_k(results, [[3]], k=3) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="ground-truth"):
            ea.recall_at_k([], [[1]])


class TestPercentile:
    def test_matches_nearest_rank_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            values = rng.normal(size=int(rng.integers(1, 60)))
            p = float(rng.uniform(1, 100))
            assert ea.percentile(values, p) == pytest.approx(
                nearest_rank_percentile(values.tolist(), p)
            )

    def test_small_sample_reference(self):
        assert ea.percentile([4.0, 1.0, 3.0, 2.0], 50) == 2.0
        assert ea.percentile([4.0, 1.0, 3.0, 2.0], 90) == 4.0
        assert ea.percentile([7.0], 90) == 7.0

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            ea.percentile([], 50)
        with pytest.raises(ValueError):
            ea.percentile([1.0], 0)


def test_sample_traffic_respects_weights():
    p = np.array([0.8, 0.1, 0.1])
    draws = ea.sample_traffic(p, 5000, seed=1)
    freq = np.bincount(draws, minlength=3) / 5000
    assert freq[0] > 0.7
    # Deterministic per seed.
    np.testing.assert_array_equal(draws, ea.sample_traffic(p, 5000, seed=1))


class TestSweep:
    def _setup(self):
        cat = ea.generate_synthetic(128, 8, 4, seed=23)
        rng = np.random.default_rng(23)
        queries = cat.embeddings[rng.integers(0, 128, size=40)] + \
            0.01 * rng.standard_normal((40, 8))
        gt = ea.compute_ground_truth(cat, queries, k=1)
        tree = ea.build_tree(cat, config=ea.TreeConfig(mode="balanced", seed=23))
        return cat, queries, gt, tree

    def test_produces_one_point_per_variant_knob(self):
        cat, queries, gt, tree = self._setup()
        flat = ea.build_flat(cat)
        variants = [
            ea.SweepVariant("tree", lambda q, b: ea.tree_search(tree, q, 10, budget=int(b))),
            ea.SweepVariant("flat", lambda q, b: ea.flat_search(flat, q, 10),
                            knobs=(1,)),
        ]
        points = ea.run_sweep(variants, (1, 4, 16), queries, gt, k=10, seed=23)
        assert [(p.variant, p.knob) for p in points] == [
            ("tree", 1.0), ("tree", 4.0), ("tree", 16.0), ("flat", 1.0)
        ]
        tree_points = [p for p in points if p.variant == "tree"]
        recalls = [p.recall_at_k for p in tree_points]
        assert all(b >= a for a, b in zip(recalls, recalls[1:]))
        flat_point = points[-1]
        assert flat_point.recall_at_k == 1.0
        assert flat_point.mean_dist_comps == 128.0

    def test_cost_percentiles_come_from_stats(self):
        cat, queries, gt, tree = self._setup()
        costs = []
        for q in queries:
            _, stats = ea.tree_search(tree, q, 10, budget=2)
            costs.append(stats.distance_computations)
        points = ea.run_sweep(
            [ea.SweepVariant("t", lambda q, b: ea.tree_search(tree, q, 10, budget=2))],
            (2,), queries, gt, k=10,
        )
        assert points[0].p90_dist_comps == ea.percentile(costs, 90)
        assert points[0].mean_dist_comps == pytest.approx(np.mean(costs))

    def test_query_count_mismatch(self):
        cat, queries, gt, tree = self._setup()
        with pytest.raises(ValueError, match="ground-truth"):
            ea.run_sweep(
                [ea.SweepVariant("t", lambda q, b: ea.tree_search(tree, q, 10))],
                (1,), queries, gt[:-1],
            )


class TestProbesToRecall:
    def test_interpolates_between_bracketing_points(self):
        points = [
            make_point(knob=1, recall_at_k=0.5, mean_dist_comps=10.0),
            make_point(knob=2, recall_at_k=0.9, mean_dist_comps=30.0),
        ]
        # Halfway in recall (0.7) sits halfway in cost.
        assert ea.probes_to_recall(points, 0.7) == pytest.approx(20.0)

    def test_first_point_already_passing(self):
        points = [make_point(knob=1, recall_at_k=0.99, mean_dist_comps=5.0)]
        assert ea.probes_to_recall(points, 0.95) == 5.0

    def test_unreachable_target(self):
        points = [make_point(knob=1, recall_at_k=0.5)]
        assert ea.probes_to_recall(points, 0.95) is None

    def test_mixed_variants_rejected(self):
        points = [make_point(variant="a"), make_point(variant="b")]
        with pytest.raises(ValueError, match="variants"):
            ea.probes_to_recall(points, 0.9)

    def test_alternate_cost_field(self):
        points = [
            make_point(knob=1, recall_at_k=0.5, p90_dist_comps=100.0),
            make_point(knob=2, recall_at_k=1.0, p90_dist_comps=200.0),
        ]
        assert ea.probes_to_recall(points, 0.75, cost_field="p90_dist_comps") \
            == pytest.approx(150.0)


class TestGate:
    def test_pass_requires_both_thresholds(self):
        gates = ea.GateConfig(min_recall=0.8, max_p90_wall_ms=10.0)
        assert make_point(recall_at_k=0.85, p90_wall_ms=5.0).passes(gates)
        assert not make_point(recall_at_k=0.7, p90_wall_ms=5.0).passes(gates)
        assert not make_point(recall_at_k=0.9, p90_wall_ms=20.0).passes(gates)


class TestReports:
    def _points(self):
        return [
            make_point(variant="tree", knob=1, recall_at_k=0.5,
                       mean_dist_comps=12.25, p90_dist_comps=14.0),
            make_point(variant="tree", knob=4, recall_at_k=0.95,
                       mean_dist_comps=40.5, p90_dist_comps=44.0),
            make_point(variant="lsh", knob=0, recall_at_k=0.4,
                       mean_dist_comps=9.0),
        ]

    def test_csv_round_trip(self, tmp_path):
        points = self._points()
        csv_path, summary_path = ea.write_report(points, tmp_path, k=10,
                                                 gates=ea.GateConfig())
        assert csv_path.name == "curve.csv"
        back = read_report(csv_path)
        assert back == points
        header = csv_path.read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)

    def test_summary_mentions_variants_and_gates(self, tmp_path):
        _, summary_path = ea.write_report(self._points(), tmp_path, k=10,
                                          gates=ea.GateConfig(name="desk"))
        text = summary_path.read_text()
        assert "variant tree" in text
        assert "variant lsh" in text
        assert "gates[desk]" in text
        assert "PASS" in text and "FAIL" in text

    def test_read_rejects_missing_columns(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("variant,knob\nx,1\n")
        with pytest.raises(ValueError, match="missing columns"):
            read_report(bad)


class TestPlots:
    def test_figures_written(self, tmp_path):
        points = [
            make_point(variant="tree", knob=1, recall_at_k=0.5, mean_dist_comps=10),
            make_point(variant="tree", knob=2, recall_at_k=0.8, mean_dist_comps=20),
            make_point(variant="lsh", knob=1, recall_at_k=0.3, mean_dist_comps=5),
        ]
        p1 = plot_recall_cost(points, tmp_path / "rc.png")
        p2 = plot_recall_vs_knob(points, tmp_path / "rk.png")
        assert p1.exists() and p1.stat().st_size > 0
        assert p2.exists() and p2.stat().st_size > 0
