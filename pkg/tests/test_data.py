"""Dataset io: binary vector files, text profiles, synthetic workloads."""

import struct

import numpy as np
import pytest

import edgeann as ea
from edgeann.data import ParseError
from oracles import brute_force_knn, entropy_unbalance


class TestFvecs:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        mat = rng.normal(size=(37, 12)).astype(np.float32)
        path = tmp_path / "v.fvecs"
        ea.write_fvecs(mat, path)
        back = ea.read_fvecs(path)
        assert back.embeddings.astype(np.float32).tobytes() == mat.tobytes()
        assert list(back.ids) == list(range(37))

    def test_float64_input_rounds_to_float32(self, tmp_path):
        mat = np.array([[0.1, 0.2, 0.3]])
        path = tmp_path / "v.fvecs"
        ea.write_fvecs(mat, path)
        back = ea.read_fvecs(path)
        np.testing.assert_array_equal(
            back.embeddings, mat.astype(np.float32).astype(np.float64)
        )

    def test_layout_matches_manual_framing(self, tmp_path):
        """Each record is int32-LE count then count float32-LE values."""
        rows = np.array([[1.5, -2.0], [3.25, 4.0]], dtype=np.float32)
        path = tmp_path / "v.fvecs"
        ea.write_fvecs(rows, path)
        raw = path.read_bytes()
        expect = b""
        for row in rows:
            expect += struct.pack("<i", 2) + row.tobytes()
        assert raw == expect

    def test_reads_catalog_written_object(self, tmp_path, small_catalog):
        path = tmp_path / "cat.fvecs"
        ea.write_fvecs(small_catalog, path)
        back = ea.read_fvecs(path)
        np.testing.assert_array_equal(
            back.embeddings, small_catalog.embeddings.astype(np.float32)
        )

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.fvecs"
        path.write_bytes(b"")
        assert ea.read_fvecs(path).is_empty

    def test_inconsistent_dim_names_byte_offset(self, tmp_path):
        path = tmp_path / "bad.fvecs"
        rec1 = struct.pack("<i", 2) + struct.pack("<2f", 1.0, 2.0)
        rec2 = struct.pack("<i", 3) + struct.pack("<3f", 1.0, 2.0, 3.0)
        path.write_bytes(rec1 + rec2)
        with pytest.raises(ParseError, match=r"byte 12.*count 3, expected 2"):
            ea.read_fvecs(path)

    def test_truncated_payload_named(self, tmp_path):
        path = tmp_path / "trunc.fvecs"
        path.write_bytes(struct.pack("<i", 4) + b"\x00" * 7)
        with pytest.raises(ParseError, match="truncated record payload at byte 4"):
            ea.read_fvecs(path)

    def test_truncated_header_named(self, tmp_path):
        path = tmp_path / "trunc2.fvecs"
        good = struct.pack("<i", 1) + struct.pack("<f", 9.0)
        path.write_bytes(good + b"\x01\x00")
        with pytest.raises(ParseError, match="truncated record header at byte 8"):
            ea.read_fvecs(path)

    def test_nonpositive_count_rejected(self, tmp_path):
        path = tmp_path / "neg.fvecs"
        path.write_bytes(struct.pack("<i", -3) + b"\x00" * 12)
        with pytest.raises(ParseError, match="non-positive"):
            ea.read_fvecs(path)


class TestIvecs:
    def test_round_trip(self, tmp_path):
        rows = [[3, 1, 4], [1, 5, 9], [2, 6, 5]]
        path = tmp_path / "gt.ivecs"
        ea.write_ivecs(rows, path)
        assert ea.read_ivecs(path) == rows

    def test_ragged_rows_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="equal length"):
            ea.write_ivecs([[1, 2], [3]], tmp_path / "x.ivecs")

    def test_empty(self, tmp_path):
        path = tmp_path / "e.ivecs"
        ea.write_ivecs([], path)
        assert ea.read_ivecs(path) == []


class TestLikelihoodFiles:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(9)
        w = rng.random(40)
        profile = ea.LikelihoodProfile(w / w.sum())
        path = tmp_path / "p.txt"
        ea.write_likelihoods(profile, path)
        back = ea.read_likelihoods(path)
        np.testing.assert_array_equal(back.probabilities, profile.probabilities)

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("# header\n0.5\n\n  # note\n0.5\n")
        back = ea.read_likelihoods(path)
        np.testing.assert_array_equal(back.probabilities, [0.5, 0.5])

    def test_bad_line_number_reported(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("0.5\nnot-a-float\n0.5\n")
        with pytest.raises(ParseError, match="line 2"):
            ea.read_likelihoods(path)

    def test_bad_sum_rejected(self, tmp_path):
        path = tmp_path / "p.txt"
        path.write_text("0.5\n0.6\n")
        with pytest.raises(ParseError, match="sums to"):
            ea.read_likelihoods(path)


class TestTrafficFiles:
    def test_round_trip(self, tmp_path):
        idx = np.array([0, 3, 3, 1, 7])
        path = tmp_path / "t.txt"
        ea.write_traffic(idx, path)
        np.testing.assert_array_equal(ea.read_traffic(path), idx)

    def test_negative_index_rejected(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("1\n-2\n")
        with pytest.raises(ParseError, match="negative"):
            ea.read_traffic(path)

    def test_non_integer_line(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("1\n2.5\n")
        with pytest.raises(ParseError, match="line 2"):
            ea.read_traffic(path)


class TestUnbalanceScore:
    def test_uniform_is_zero(self):
        assert ea.unbalance_score(np.full(64, 1 / 64)) == pytest.approx(0.0, abs=1e-12)

    def test_point_mass_is_one(self):
        p = np.zeros(16)
        p[3] = 1.0
        assert ea.unbalance_score(p) == pytest.approx(1.0, abs=1e-12)

    def test_hand_case(self):
        assert ea.unbalance_score([0.5, 0.25, 0.125, 0.125]) == pytest.approx(0.125)

    def test_matches_scalar_entropy(self):
        rng = np.random.default_rng(21)
        for _ in range(30):
            n = int(rng.integers(2, 100))
            w = rng.random(n)
            p = w / w.sum()
            assert ea.unbalance_score(p) == pytest.approx(
                entropy_unbalance(p), rel=1e-10
            )

    def test_unnormalized_input_is_normalized_first(self):
        assert ea.unbalance_score([2.0, 1.0, 0.5, 0.5]) == pytest.approx(0.125)

    def test_too_short(self):
        with pytest.raises(ValueError):
            ea.unbalance_score([1.0])


class TestBetaCalibration:
    def test_every_grid_row_hits_its_target(self):
        """Mean realized score over 20 seeds lands within 0.02 of the target."""
        n = ea.data.BETA_GRID_NUM_ENTITIES
        for target in sorted(ea.data.BETA_SCORE_GRID):
            a, b = ea.beta_params_for_score(target)
            scores = []
            for seed in range(20):
                profile, _ = ea.simulate_likelihoods(
                    ea.BetaSimConfig(a, b, n, 0, seed)
                )
                scores.append(ea.unbalance_score(profile))
            assert abs(float(np.mean(scores)) - target) < 0.02, (
                f"target {target}: mean realized {np.mean(scores):.4f}"
            )

    def test_unknown_target_raises(self):
        with pytest.raises(KeyError, match="known targets"):
            ea.beta_params_for_score(0.77)

    def test_equal_shape_parameters_score_lower_than_skewed(self):
        uniform_scores = []
        skewed_scores = []
        for seed in range(20):
            p_u, _ = ea.simulate_likelihoods(ea.BetaSimConfig(5.0, 5.0, 128, 0, seed))
            p_s, _ = ea.simulate_likelihoods(ea.BetaSimConfig(0.1, 1.0, 128, 0, seed))
            uniform_scores.append(ea.unbalance_score(p_u))
            skewed_scores.append(ea.unbalance_score(p_s))
        assert np.mean(uniform_scores) < np.mean(skewed_scores)


class TestSynthetic:
    def test_deterministic(self):
        a = ea.generate_synthetic(30, 5, 3, seed=4)
        b = ea.generate_synthetic(30, 5, 3, seed=4)
        np.testing.assert_array_equal(a.embeddings, b.embeddings)

    def test_seed_changes_data(self):
        a = ea.generate_synthetic(30, 5, 3, seed=4)
        b = ea.generate_synthetic(30, 5, 3, seed=5)
        assert not np.array_equal(a.embeddings, b.embeddings)

    def test_zero_spread_repeats_centers(self):
        cat = ea.generate_synthetic(12, 4, 3, seed=1, spread=0.0)
        np.testing.assert_array_equal(cat.embeddings[0], cat.embeddings[3])
        np.testing.assert_array_equal(cat.embeddings[1], cat.embeddings[10])
        assert not np.array_equal(cat.embeddings[0], cat.embeddings[1])

    def test_shapes_and_ids(self):
        cat = ea.generate_synthetic(17, 9, 4, seed=0)
        assert cat.embeddings.shape == (17, 9)
        assert list(cat.ids) == list(range(17))


class TestSimulateLikelihoods:
    def test_profile_is_probability_vector(self):
        profile, _ = ea.simulate_likelihoods(ea.BetaSimConfig(0.2, 1.0, 50, 0, 3))
        assert profile.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
        assert profile.probabilities.min() >= 0.0

    def test_traffic_follows_profile(self):
        cfg = ea.BetaSimConfig(0.1, 1.0, 32, 20_000, seed=2)
        profile, traffic = ea.simulate_likelihoods(cfg)
        counts = np.bincount(traffic.query_indices, minlength=32)
        empirical = counts / counts.sum()
        # Heaviest entity should be heaviest empirically too.
        assert np.argmax(empirical) == np.argmax(profile.probabilities)
        np.testing.assert_allclose(empirical, profile.probabilities, atol=0.02)

    def test_query_vectors_equal_targets_when_noiseless(self, small_catalog):
        cfg = ea.BetaSimConfig(1.0, 1.0, len(small_catalog), 40, seed=6)
        _, traffic = ea.simulate_likelihoods(cfg, catalog=small_catalog)
        np.testing.assert_array_equal(
            traffic.query_vectors, small_catalog.embeddings[traffic.query_indices]
        )

    def test_noise_perturbs_vectors(self, small_catalog):
        cfg = ea.BetaSimConfig(1.0, 1.0, len(small_catalog), 40, seed=6)
        _, clean = ea.simulate_likelihoods(cfg, catalog=small_catalog)
        _, noisy = ea.simulate_likelihoods(cfg, catalog=small_catalog, noise_sigma=0.01)
        assert not np.array_equal(clean.query_vectors, noisy.query_vectors)
        # Same targets either way.
        np.testing.assert_array_equal(clean.query_indices, noisy.query_indices)

    def test_catalog_size_mismatch(self, small_catalog):
        cfg = ea.BetaSimConfig(1.0, 1.0, 7, 4, seed=0)
        with pytest.raises(ValueError, match="rows"):
            ea.simulate_likelihoods(cfg, catalog=small_catalog)


def test_compute_ground_truth_matches_oracle():
    rng = np.random.default_rng(14)
    points = rng.normal(size=(40, 6))
    cat = ea.Catalog.from_matrix(points)
    queries = rng.normal(size=(5, 6))
    got = ea.compute_ground_truth(cat, queries, k=4)
    for qi, row in enumerate(queries):
        want = brute_force_knn(cat.ids, points.tolist(), row.tolist(), 4)
        assert got[qi] == [pid for pid, _ in want]
