"""Pair counting, normalization and per-timestep masking of the
co-occurrence graphs, against brute-force oracles."""

import numpy as np
import pytest

from tempsets import graph as gr


def brute_force_counts(history):
    """Independent O(n^2) pair counter following the stated rule."""
    counts = {}
    elements = set()
    for s in history:
        elements |= set(s)
        for j in s:
            for k in s:
                if j != k:
                    counts[(j, k)] = counts.get((j, k), 0) + 1
    for v in elements:
        counts[(v, v)] = 1
    return counts


def random_history(rng, max_sets=5, max_elements=6):
    n_sets = int(rng.integers(1, max_sets + 1))
    history = []
    for _ in range(n_sets):
        size = int(rng.integers(1, max_elements + 1))
        history.append(frozenset(int(v) for v in rng.choice(max_elements, size=size, replace=False)))
    return history


class TestCountPairs:
    def test_three_element_set_generates_all_directed_pairs(self):
        counts = gr.count_pairs([{1, 2, 3}])
        expected_pairs = {(1, 2), (2, 1), (1, 3), (3, 1), (2, 3), (3, 2)}
        for pair in expected_pairs:
            assert counts[pair] == 1
        for v in (1, 2, 3):
            assert counts[(v, v)] == 1
        assert set(counts) == expected_pairs | {(1, 1), (2, 2), (3, 3)}

    def test_singleton_set_only_self_pair(self):
        assert gr.count_pairs([{4}]) == {(4, 4): 1}

    def test_repeated_sets_accumulate(self):
        counts = gr.count_pairs([{0, 1}, {0, 1}, {0, 2}])
        assert counts[(0, 1)] == 2 and counts[(1, 0)] == 2
        assert counts[(0, 2)] == 1 and counts[(2, 0)] == 1
        assert (1, 2) not in counts
        for v in (0, 1, 2):
            assert counts[(v, v)] == 1

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            gr.count_pairs([])
        with pytest.raises(ValueError):
            gr.count_pairs([set()])

    def test_symmetry_fuzz(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            counts = gr.count_pairs(random_history(rng))
            for (j, k), c in counts.items():
                assert counts[(k, j)] == c

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            history = random_history(rng)
            assert gr.count_pairs(history) == brute_force_counts(history)


class TestNormalize:
    def test_hand_normalized_row(self):
        # row a: self 1, (a,b) 2, (a,c) 1 -> [0.25, 0.5, 0.25]
        counts = gr.count_pairs([{0, 1}, {0, 1}, {0, 2}])
        w = gr.normalize(counts)
        np.testing.assert_allclose(w[0], [0.25, 0.5, 0.25])

    def test_single_node(self):
        np.testing.assert_array_equal(gr.normalize({(7, 7): 1}), [[1.0]])

    def test_two_nodes_count_three(self):
        counts = gr.count_pairs([{0, 1}] * 3)
        w = gr.normalize(counts)
        np.testing.assert_allclose(w, [[0.25, 0.75], [0.75, 0.25]])

    def test_rows_stochastic_and_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            w = gr.normalize(gr.count_pairs(random_history(rng)))
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
            assert np.all((w >= 0.0) & (w <= 1.0))


class TestBuildDynamicGraphs:
    def test_isolated_node_is_pure_self_loop(self):
        history = [{0, 1, 2}, {0}]
        g = gr.build_dynamic_graphs(history)
        a = g.adjacency[1]
        np.testing.assert_array_equal(a, np.eye(3))

    def test_full_set_equals_pooled_matrix(self):
        history = [{0, 1}, {0, 2}, {0, 1, 2}]
        pooled = gr.normalize(gr.count_pairs(history))
        g = gr.build_dynamic_graphs(history)
        np.testing.assert_allclose(g.adjacency[2], pooled, atol=1e-15)

    def test_pooled_edge_masked_out_when_pair_not_in_set(self):
        history = [{0, 1}, {0, 2}]
        g = gr.build_dynamic_graphs(history)
        i, j = g.local_of[0], g.local_of[2]
        assert g.adjacency[0][i, j] == 0.0  # pair (0, 2) absent at t=0
        assert g.adjacency[1][i, j] > 0.0

    def test_rows_stochastic_after_masking(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            g = gr.build_dynamic_graphs(random_history(rng))
            for a in g.adjacency:
                np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
                assert np.all((a >= 0.0) & (a <= 1.0))

    def test_static_mode_repeats_pooled_matrix(self):
        history = [{0, 1}, {0, 2}]
        pooled = gr.normalize(gr.count_pairs(history))
        g = gr.build_dynamic_graphs(history, mode="static")
        for a in g.adjacency:
            np.testing.assert_array_equal(a, pooled)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            history = random_history(rng)
            perm = rng.permutation(10)
            relabeled = [frozenset(int(perm[v]) for v in s) for s in history]
            g = gr.build_dynamic_graphs(history)
            h = gr.build_dynamic_graphs(relabeled)
            # map each original node position to its position after relabeling
            mapping = [h.local_of[int(perm[v])] for v in g.nodes]
            for a, b in zip(g.adjacency, h.adjacency):
                np.testing.assert_allclose(a, b[np.ix_(mapping, mapping)], atol=1e-15)

    def test_debug_dump_round_trips(self, tmp_path):
        import json

        g = gr.build_dynamic_graphs([{0, 1}, {1, 2}])
        path = tmp_path / "graph.json"
        gr.dump_debug_json(g, path)
        doc = json.loads(path.read_text())
        assert doc["nodes"] == [0, 1, 2]
        assert len(doc["adjacency_t"]) == 2
        assert [0, 1, 1] in doc["pair_freq"]
