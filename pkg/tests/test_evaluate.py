import numpy as np
import pytest

from oracles import map_cmc_oracle
from pplr.evaluate import average_precision, label_quality, map_cmc


class TestAveragePrecision:
    def test_all_relevant(self):
        for length in (1, 3, 10):
            assert average_precision([True] * length) == 1.0

    def test_single_relevant_at_position_two(self):
        assert average_precision([False, True]) == 0.5

    def test_hand_case(self):
        assert abs(average_precision([True, False, True]) - 5 / 6) < 1e-15

    def test_trailing_irrelevant_items_ignored(self):
        base = [True, False, True]
        assert average_precision(base) == average_precision(base + [False] * 7)

    def test_requires_a_relevant_item(self):
        with pytest.raises(ValueError):
            average_precision([False, False])


def random_instance(rng, n_query=30, n_gallery=100, n_ids=8, n_cams=3, dim=6):
    q = rng.standard_normal((n_query, dim))
    g = rng.standard_normal((n_gallery, dim))
    q_ids = rng.integers(0, n_ids, size=n_query)
    g_ids = rng.integers(0, n_ids, size=n_gallery)
    q_cams = rng.integers(0, n_cams, size=n_query)
    g_cams = rng.integers(0, n_cams, size=n_gallery)
    return q, g, q_ids, g_ids, q_cams, g_cams


class TestMapCmc:
    def test_permuted_copy_gallery(self):
        rng = np.random.default_rng(61)
        q = rng.standard_normal((12, 5))
        ids = np.arange(12)
        perm = rng.permutation(12)
        result = map_cmc(
            q, q[perm], ids, ids[perm], np.zeros(12, int), np.ones(12, int)
        )
        assert result.map == 1.0
        assert result.cmc[1] == 1.0

    def test_correct_match_at_rank_two(self):
        # Each query's nearest kept gallery item is a wrong id; its own id
        # sits at rank 2 for every query.
        q = np.array([[0.0, 0.0], [10.0, 0.0]])
        gallery = np.array([[0.1, 0.0], [0.3, 0.0], [10.1, 0.0], [10.3, 0.0]])
        g_ids = np.array([9, 0, 8, 1])
        result = map_cmc(
            q,
            gallery,
            np.array([0, 1]),
            g_ids,
            np.zeros(2, int),
            np.ones(4, int),
        )
        assert result.cmc[1] == 0.0
        assert result.cmc[5] == 1.0
        assert abs(result.map - 0.5) < 1e-15

    def test_matches_per_query_oracle(self):
        rng = np.random.default_rng(62)
        for _ in range(10):
            inst = random_instance(rng)
            result = map_cmc(*inst)
            ref_map, ref_cmc, ref_excluded = map_cmc_oracle(*inst, ranks=(1, 5, 10))
            assert abs(result.map - ref_map) < 1e-10
            for r in (1, 5, 10):
                assert abs(result.cmc[r] - ref_cmc[r]) < 1e-10
            assert result.n_excluded == ref_excluded

    def test_gallery_permutation_invariance(self):
        rng = np.random.default_rng(63)
        q, g, q_ids, g_ids, q_cams, g_cams = random_instance(rng)
        base = map_cmc(q, g, q_ids, g_ids, q_cams, g_cams)
        perm = rng.permutation(len(g))
        moved = map_cmc(q, g[perm], q_ids, g_ids[perm], q_cams, g_cams[perm])
        assert abs(base.map - moved.map) < 1e-12
        assert base.cmc == moved.cmc

    def test_queries_without_positives_are_excluded(self):
        q = np.array([[0.0], [1.0]])
        g = np.array([[0.0], [1.0]])
        # Query 1's only same-id gallery item shares its camera: excluded.
        result = map_cmc(
            q,
            g,
            np.array([0, 1]),
            np.array([0, 1]),
            np.array([0, 1]),
            np.array([1, 1]),
        )
        assert result.n_queries == 1
        assert result.n_excluded == 1


class TestLabelQuality:
    def test_perfect_labels(self):
        gt = np.array([0, 0, 1, 1, 2, 2])
        quality = label_quality(gt.copy(), gt)
        assert quality.accuracy == 1.0
        assert quality.pairwise_f == 1.0
        assert quality.outlier_fraction == 0.0

    def test_single_cluster_two_identities(self):
        gt = np.repeat([0, 1], 50)
        labels = np.zeros(100, dtype=int)
        quality = label_quality(labels, gt)
        precision = 2 * (50 * 49 // 2) / (100 * 99 // 2)
        expected_f = 2 * precision * 1.0 / (precision + 1.0)
        assert abs(quality.accuracy - 0.5) < 1e-15
        assert abs(quality.pairwise_f - expected_f) < 1e-12
        assert quality.outlier_fraction == 0.0

    def test_all_outliers(self):
        gt = np.array([0, 0, 1, 1])
        quality = label_quality(np.full(4, -1), gt)
        assert quality.accuracy == 0.0
        assert quality.pairwise_f == 0.0
        assert quality.outlier_fraction == 1.0

    def test_outliers_counted_in_denominator(self):
        gt = np.array([0, 0, 1, 1])
        labels = np.array([0, 0, 1, -1])
        quality = label_quality(labels, gt)
        assert abs(quality.accuracy - 0.75) < 1e-15
        assert quality.outlier_fraction == 0.25

    def test_refined_argmax_path(self):
        gt = np.array([0, 0, 1, 1])
        soft = np.array(
            [[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.4, 0.6]]
        )
        quality = label_quality(np.argmax(soft, axis=1), gt)
        assert quality.accuracy == 1.0
