"""End-to-end command line flows: generate, build, search, bench, recommend."""

import json

import numpy as np
import pytest

import edgeann as ea
from edgeann.cli import main


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def generate_workload(tmp_path, capsys, num=128, queries=60, extra=()):
    data_dir = tmp_path / "data"
    code, out, err = run(
        ["generate", "--out", str(data_dir), "--num", str(num),
         "--dim", "8", "--clusters", "4", "--queries", str(queries),
         "--seed", "3", *extra],
        capsys,
    )
    assert code == 0, err
    return data_dir


class TestGenerate:
    def test_writes_complete_workload(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        for name in ("catalog.fvecs", "likelihoods.txt", "queries.fvecs",
                     "traffic.txt", "gt.ivecs"):
            assert (data_dir / name).exists(), name

    def test_artifacts_are_mutually_consistent(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        catalog = ea.read_fvecs(data_dir / "catalog.fvecs")
        queries = ea.read_fvecs(data_dir / "queries.fvecs")
        truth = ea.read_ivecs(data_dir / "gt.ivecs")
        profile = ea.read_likelihoods(data_dir / "likelihoods.txt")
        traffic = ea.read_traffic(data_dir / "traffic.txt")
        assert len(profile) == len(catalog)
        assert len(truth) == len(queries) == 60
        assert traffic.max() < len(catalog)
        rederived = ea.compute_ground_truth(catalog, queries.embeddings, 10)
        assert rederived == truth

    def test_noiseless_queries_equal_their_targets(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        catalog = ea.read_fvecs(data_dir / "catalog.fvecs")
        queries = ea.read_fvecs(data_dir / "queries.fvecs")
        traffic = ea.read_traffic(data_dir / "traffic.txt")
        np.testing.assert_array_equal(
            queries.embeddings, catalog.embeddings[traffic]
        )

    def test_target_score_is_realized(self, tmp_path, capsys):
        data_dir = tmp_path / "d"
        code, out, _ = run(
            ["generate", "--out", str(data_dir), "--num", "256", "--dim", "16",
             "--queries", "0", "--target-score", "0.23", "--seed", "1"],
            capsys,
        )
        assert code == 0
        profile = ea.read_likelihoods(data_dir / "likelihoods.txt")
        assert abs(ea.unbalance_score(profile) - 0.23) < 0.05
        assert "unbalance_score=" in out

    def test_target_score_warns_off_calibration(self, tmp_path, capsys):
        code, _, err = run(
            ["generate", "--out", str(tmp_path / "d"), "--num", "64",
             "--dim", "4", "--queries", "0", "--target-score", "0.2"],
            capsys,
        )
        assert code == 0
        assert "calibrated" in err


class TestBuildAndSearch:
    @pytest.mark.parametrize("kind,extra", [
        ("flat", ()),
        ("tree", ()),
        ("qlbt", ("--likelihoods", "LIKELIHOODS")),
        ("lsh", ("--tables", "4", "--bits", "8")),
        ("two-level", ("--subsets", "8", "--bottom", "brute")),
    ])
    def test_build_then_exact_self_search(self, tmp_path, capsys, kind, extra):
        data_dir = generate_workload(tmp_path, capsys)
        extra = [str(data_dir / "likelihoods.txt") if v == "LIKELIHOODS" else v
                 for v in extra]
        bundle = tmp_path / f"idx-{kind}"
        code, out, err = run(
            ["build", "--data", str(data_dir / "catalog.fvecs"),
             "--index", kind, "--out", str(bundle), *extra],
            capsys,
        )
        assert code == 0, err
        assert (bundle / "manifest.json").exists()

        out_file = tmp_path / f"results-{kind}.txt"
        args = ["search", "--index", str(bundle),
                "--queries", str(data_dir / "queries.fvecs"),
                "--k", "3", "--stats", "--out", str(out_file)]
        if kind in ("qlbt", "tree"):
            args += ["--budget", "32"]
        elif kind == "lsh":
            args += ["--radius", "8"]
        elif kind == "two-level":
            args += ["--n-probe", "8"]
        code, _, err = run(args, capsys)
        assert code == 0, err
        lines = out_file.read_text().splitlines()
        assert lines[0] == "# query 0"
        # Queries are noiseless copies of catalog entities, and each search
        # ran wide enough to be exact, so rank 0 is the target at distance 0.
        traffic = ea.read_traffic(data_dir / "traffic.txt")
        first_rows = [ln for ln in lines if ln.startswith("0,")]
        assert len(first_rows) == 60
        for qi, row in enumerate(first_rows):
            rank, eid, dist = row.split(",")
            assert int(eid) == int(traffic[qi])
            assert float(dist) == 0.0
        assert any(ln.startswith("# stats distance_computations=")
                   for ln in lines)

    def test_manifest_checksums_and_layout(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        bundle = tmp_path / "idx"
        run(["build", "--data", str(data_dir / "catalog.fvecs"),
             "--index", "flat", "--out", str(bundle)], capsys)
        manifest = json.loads((bundle / "manifest.json").read_text())
        assert manifest["kind"] == "flat"
        assert set(manifest["files"]) == {"index.bin", "catalog.fvecs"}
        for name, meta in manifest["files"].items():
            assert len(meta["sha256"]) == 64
            assert (bundle / name).stat().st_size == meta["bytes"]
        assert "timestamp" not in json.dumps(manifest).lower()

    def test_qlbt_without_likelihoods_is_a_usage_error(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        code, _, err = run(
            ["build", "--data", str(data_dir / "catalog.fvecs"),
             "--index", "qlbt", "--out", str(tmp_path / "idx")],
            capsys,
        )
        assert code == 2
        assert "--likelihoods" in err

    def test_two_level_without_subsets_is_a_usage_error(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        code, _, err = run(
            ["build", "--data", str(data_dir / "catalog.fvecs"),
             "--index", "two-level", "--out", str(tmp_path / "idx")],
            capsys,
        )
        assert code == 2
        assert "--subsets" in err

    def test_corrupt_catalog_is_a_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.fvecs"
        bad.write_bytes(b"\x04\x00\x00\x00\x00")
        code, _, err = run(
            ["build", "--data", str(bad), "--index", "flat",
             "--out", str(tmp_path / "idx")],
            capsys,
        )
        assert code == 3
        assert "byte" in err

    def test_tampered_bundle_detected(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        bundle = tmp_path / "idx"
        run(["build", "--data", str(data_dir / "catalog.fvecs"),
             "--index", "flat", "--out", str(bundle)], capsys)
        blob = bytearray((bundle / "index.bin").read_bytes())
        blob[-1] ^= 0xFF
        (bundle / "index.bin").write_bytes(bytes(blob))
        code, _, err = run(
            ["search", "--index", str(bundle),
             "--queries", str(data_dir / "queries.fvecs")],
            capsys,
        )
        assert code == 3
        assert "checksum" in err.lower() or "sha" in err.lower()

    def test_likelihood_length_mismatch_is_a_data_error(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys)
        short = tmp_path / "short.txt"
        short.write_text("0.5\n0.5\n")
        code, _, err = run(
            ["build", "--data", str(data_dir / "catalog.fvecs"),
             "--index", "qlbt", "--likelihoods", str(short),
             "--out", str(tmp_path / "idx")],
            capsys,
        )
        assert code == 3
        assert "covers 2" in err


class TestBench:
    def test_sweep_writes_report_and_figures(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys, num=128, queries=40)
        report = tmp_path / "report"
        code, out, err = run(
            ["bench", "--data", str(data_dir / "catalog.fvecs"),
             "--queries", str(data_dir / "queries.fvecs"),
             "--ground-truth", str(data_dir / "gt.ivecs"),
             "--likelihoods", str(data_dir / "likelihoods.txt"),
             "--out", str(report), "--knobs", "1,4,16", "--k", "10"],
            capsys,
        )
        assert code == 0, err
        assert (report / "curve.csv").exists()
        assert (report / "summary.txt").exists()
        assert (report / "recall_vs_cost.png").stat().st_size > 0
        assert (report / "recall_vs_knob.png").stat().st_size > 0
        points = ea.bench.read_report(report / "curve.csv")
        assert {p.variant for p in points} == {"qlbt", "tree"}
        assert len(points) == 6

    def test_no_plot_skips_figures(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys, num=64, queries=20)
        report = tmp_path / "report"
        code, _, err = run(
            ["bench", "--data", str(data_dir / "catalog.fvecs"),
             "--queries", str(data_dir / "queries.fvecs"),
             "--ground-truth", str(data_dir / "gt.ivecs"),
             "--out", str(report), "--variant", "tree",
             "--knobs", "1,2", "--no-plot"],
            capsys,
        )
        assert code == 0, err
        assert not (report / "recall_vs_cost.png").exists()

    def test_strict_gate_failure_exits_4(self, tmp_path, capsys):
        # Queries drowned in noise cannot reach the 0.80 recall gate at any
        # of the tiny budgets offered.
        data_dir = generate_workload(tmp_path, capsys, num=256, queries=50,
                                     extra=("--noise", "3.0"))
        report = tmp_path / "report"
        code, _, err = run(
            ["bench", "--data", str(data_dir / "catalog.fvecs"),
             "--queries", str(data_dir / "queries.fvecs"),
             "--ground-truth", str(data_dir / "gt.ivecs"),
             "--out", str(report), "--variant", "tree",
             "--knobs", "1", "--strict", "--no-plot"],
            capsys,
        )
        assert code == 4
        assert "gate failure" in err

    def test_strict_passes_when_a_knob_clears_the_gate(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys, num=64, queries=30)
        code, _, err = run(
            ["bench", "--data", str(data_dir / "catalog.fvecs"),
             "--queries", str(data_dir / "queries.fvecs"),
             "--ground-truth", str(data_dir / "gt.ivecs"),
             "--out", str(tmp_path / "report"), "--variant", "tree",
             "--knobs", "1,8", "--strict", "--no-plot"],
            capsys,
        )
        assert code == 0, err

    def test_qlbt_variant_requires_likelihoods(self, tmp_path, capsys):
        data_dir = generate_workload(tmp_path, capsys, num=64, queries=20)
        code, _, err = run(
            ["bench", "--data", str(data_dir / "catalog.fvecs"),
             "--queries", str(data_dir / "queries.fvecs"),
             "--ground-truth", str(data_dir / "gt.ivecs"),
             "--out", str(tmp_path / "report"), "--variant", "qlbt",
             "--knobs", "1", "--no-plot"],
            capsys,
        )
        assert code == 2
        assert "--likelihoods" in err


class TestRecommend:
    def test_one_level_output(self, capsys):
        code, out, _ = run(
            ["recommend", "--num", "500", "--dim", "16", "--has-likelihoods"],
            capsys,
        )
        assert code == 0
        assert "levels=1" in out
        assert "tree_mode=boosted" in out

    def test_two_level_output(self, capsys):
        code, out, _ = run(
            ["recommend", "--num", "100000", "--dim", "64",
             "--no-likelihoods"], capsys,
        )
        assert code == 0
        assert "levels=2" in out
        assert "top_kind=pq" in out
        assert "num_subsets=1000" in out
        assert "tree_mode=balanced" in out


def test_missing_subcommand_is_a_usage_error(capsys):
    assert main([]) == 2


def test_unknown_flag_is_a_usage_error(capsys):
    assert main(["generate", "--nope"]) == 2
