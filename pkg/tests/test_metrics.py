"""Hand-computed metric values, monotonicity in K and rank-only dependence."""

import json
import math

import numpy as np
import pytest

from tempsets import metrics as mt
from tempsets.data import UserSequence


class TestTopK:
    def test_basic_order(self):
        assert mt.topk([0.1, 0.9, 0.5], 2) == [1, 2]

    def test_ties_resolved_by_index(self):
        assert mt.topk([0.3, 0.3, 0.3], 2) == [0, 1]

    def test_matches_sort_oracle_prefix(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            scores = rng.random(12)
            k = int(rng.integers(1, 13))
            oracle = sorted(range(12), key=lambda j: (-scores[j], j))
            assert mt.topk(scores, k) == oracle[:k]

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            mt.topk([0.1, 0.2], 3)
        with pytest.raises(ValueError):
            mt.topk([0.1, 0.2], 0)


class TestRecall:
    def test_half_overlap(self):
        assert mt.recall_at_k({0, 1}, {1, 2}) == 0.5

    def test_superset_is_one(self):
        assert mt.recall_at_k({0, 1, 2, 3}, {1, 3}) == 1.0

    def test_disjoint_is_zero(self):
        assert mt.recall_at_k({0, 1}, {2, 3}) == 0.0

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError):
            mt.recall_at_k({0}, set())


class TestNdcg:
    def test_hand_value_second_position_hit(self):
        # hit at rank 2 only, |target| = 1: (1/log2(3)) / (1/log2(2))
        value = mt.ndcg_at_k([0, 1], {1}, 2)
        np.testing.assert_allclose(value, 1.0 / math.log2(3.0), atol=1e-12)
        np.testing.assert_allclose(value, 0.6309297535714574, atol=1e-10)

    def test_perfect_ranking_is_one(self):
        assert mt.ndcg_at_k([3, 1, 0], {0, 1, 3, 7}, 3) == 1.0

    def test_no_hits_is_zero(self):
        assert mt.ndcg_at_k([0, 1, 2], {5}, 3) == 0.0

    def test_bounded_fuzz(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            m = 10
            ranked = list(rng.permutation(m))
            target = set(int(v) for v in rng.choice(m, size=rng.integers(1, 5), replace=False))
            k = int(rng.integers(1, m + 1))
            assert 0.0 <= mt.ndcg_at_k(ranked, target, k) <= 1.0


class TestPhr:
    def test_one_of_two(self):
        assert mt.phr_at_k([True, False]) == 0.5

    def test_all_users_hit(self):
        assert mt.phr_at_k([1, 1, 1]) == 1.0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        flags = rng.integers(0, 2, size=50).tolist()
        expected = sum(1 for f in flags if f >= 1) / 50
        assert mt.phr_at_k(flags) == expected


class TestProperties:
    def test_recall_and_phr_monotone_in_k(self):
        """Larger cutoffs can only add hits."""
        rng = np.random.default_rng(3)
        for _ in range(1000):
            m = 12
            scores = rng.random(m)
            target = set(int(v) for v in rng.choice(m, size=rng.integers(1, 5), replace=False))
            recalls, hits = [], []
            for k in range(1, m + 1):
                ranked = mt.topk(scores, k)
                recalls.append(mt.recall_at_k(ranked, target))
                hits.append(bool(set(ranked) & target))
            assert all(a <= b + 1e-15 for a, b in zip(recalls, recalls[1:]))
            assert all(a <= b for a, b in zip(hits, hits[1:]))
            assert recalls[-1] == 1.0  # recall@m with the full target in vocabulary

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            m = 9
            scores = rng.random(m)
            transformed = np.exp(3.0 * scores) + 1.0
            target = set(int(v) for v in rng.choice(m, size=3, replace=False))
            for k in (1, 3, 7):
                a, b = mt.topk(scores, k), mt.topk(transformed, k)
                assert a == b
                assert mt.recall_at_k(a, target) == mt.recall_at_k(b, target)
                assert mt.ndcg_at_k(a, target, k) == mt.ndcg_at_k(b, target, k)


class FixedScores:
    """Predictor stub returning canned scores."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def predict_proba(self, history):
        return self.scores


class TestEvaluate:
    def sequences(self):
        return [
            UserSequence("u0", (frozenset({0}), frozenset({1, 2}))),
            UserSequence("u1", (frozenset({3}), frozenset({4}))),
        ]

    def test_aggregates_means(self):
        report = mt.evaluate(FixedScores([0.9, 0.8, 0.7, 0.1, 0.0]), self.sequences(), ks=[2])
        row = report.per_k[2]
        # u0: top2 = {0,1}, recall 1/2, hit; u1: no hit
        assert row["recall"] == 0.25
        assert row["phr"] == 0.5
        assert report.num_users == 2

    def test_report_files(self, tmp_path):
        report = mt.evaluate(
            FixedScores([0.9, 0.8, 0.7, 0.1, 0.0]), self.sequences(), ks=[1, 2], keep_per_user=True
        )
        jpath, cpath = tmp_path / "r.json", tmp_path / "r.csv"
        report.to_json(jpath)
        report.to_csv(cpath)
        doc = json.loads(jpath.read_text())
        assert set(doc["per_k"]) == {"1", "2"}
        assert len(doc["per_user"]) == 2
        lines = cpath.read_text().strip().splitlines()
        assert lines[0] == "k,recall,ndcg,phr"
        assert len(lines) == 3

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            mt.evaluate(FixedScores([1.0]), [], ks=[1])
