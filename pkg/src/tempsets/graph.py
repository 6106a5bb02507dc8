"""Per-user weighted co-occurrence graphs over a history of element sets.

Pair counts are pooled over the whole history: two distinct elements share a
count increment for every set containing both, and every element appearing
anywhere gets a self-loop of count exactly 1.  Counts are row-normalized into
a pooled weight matrix, and per-timestep adjacencies keep every self-loop but
mask off-diagonal weights to pairs that are both present in that timestep's
set, re-normalizing each row afterwards.  Rows are therefore stochastic: a
node with no active neighbours at time t carries a pure self-loop of weight 1.

All functions are pure and the graphs immutable, so building graphs for many
users in parallel is safe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

PairCounts = dict[tuple[int, int], int]


@dataclass(frozen=True)
class CooccurrenceGraph:
    nodes: tuple[int, ...]  # distinct element indices, ascending
    local_of: dict[int, int]  # element index -> row position
    pair_freq: PairCounts  # symmetric, keyed by local positions
    adjacency: tuple[np.ndarray, ...]  # one row-stochastic matrix per timestep

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)


def count_pairs(history) -> PairCounts:
    """Symmetric co-occurrence counts over element indices.

    Each set contributes 1 to both ordered directions of every unordered pair
    of its distinct members; every element appearing anywhere gets a
    self-pair of count exactly 1.
    """
    if not history:
        raise ValueError("history must be non-empty")
    counts: PairCounts = {}
    for s in history:
        if not s:
            raise ValueError("history sets must be non-empty")
        members = sorted(s)
        for j, k in combinations(members, 2):
            counts[(j, k)] = counts.get((j, k), 0) + 1
            counts[(k, j)] = counts.get((k, j), 0) + 1
        for j in members:
            counts[(j, j)] = 1
    return counts


def pair_nodes(pair_freq: PairCounts) -> tuple[int, ...]:
    return tuple(sorted({j for j, _ in pair_freq}))


def normalize(pair_freq: PairCounts, nodes: tuple[int, ...] | None = None) -> np.ndarray:
    """Row-stochastic pooled weight matrix over ``nodes`` (ascending order).

    Each row (self-loop count plus incident pair counts) is divided by its
    row sum; self-loops guarantee a nonzero row.
    """
    if nodes is None:
        nodes = pair_nodes(pair_freq)
    local = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    w = np.zeros((n, n), dtype=np.float64)
    for (j, k), c in pair_freq.items():
        w[local[j], local[k]] = c
    return w / w.sum(axis=1, keepdims=True)


def build_dynamic_graphs(history, pooled: np.ndarray | None = None, mode: str = "dynamic") -> CooccurrenceGraph:
    """Construct the per-timestep adjacency stack for one user's history.

    ``mode="dynamic"`` masks the pooled weights per timestep as described in
    the module docstring; ``mode="static"`` repeats the pooled matrix at every
    timestep (alternative reading in which all time variation lives in the
    attention stage).
    """
    if mode not in ("dynamic", "static"):
        raise ValueError(f"unknown graph mode {mode!r}")
    pair_freq = count_pairs(history)
    nodes = pair_nodes(pair_freq)
    local = {v: i for i, v in enumerate(nodes)}
    if pooled is None:
        pooled = normalize(pair_freq, nodes)

    adjacency = []
    for s in history:
        if mode == "static":
            adjacency.append(pooled.copy())
            continue
        active = np.zeros(len(nodes), dtype=bool)
        active[[local[v] for v in s]] = True
        a = np.where(np.outer(active, active), pooled, 0.0)
        np.fill_diagonal(a, np.diag(pooled))
        a /= a.sum(axis=1, keepdims=True)
        adjacency.append(a)

    local_pairs = {(local[j], local[k]): c for (j, k), c in pair_freq.items()}
    return CooccurrenceGraph(
        nodes=nodes,
        local_of=local,
        pair_freq=local_pairs,
        adjacency=tuple(adjacency),
    )


def dump_debug_json(graph: CooccurrenceGraph, path) -> None:
    """Inspection dump: nodes, pair counts and per-timestep adjacency."""
    doc = {
        "nodes": list(graph.nodes),
        "pair_freq": [[j, k, c] for (j, k), c in sorted(graph.pair_freq.items())],
        "adjacency_t": [a.tolist() for a in graph.adjacency],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
