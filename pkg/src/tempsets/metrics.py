"""Top-K ranking metrics: Recall, NDCG and the personal hit ratio.

All three depend only on the ranking induced by the scores, so any strictly
monotone transform of the predictions leaves them unchanged.  Ties are broken
by ascending element index to keep runs reproducible.  The hit-ratio
indicator counts a user when at least one predicted element appears in the
ground truth.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_KS = (10, 20, 30, 40)


def topk(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, descending, ties by index."""
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.shape[0]
    if not 1 <= k <= m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    order = np.lexsort((np.arange(m), -scores))
    return order[:k].tolist()


def recall_at_k(predicted, target) -> float:
    """|predicted ∩ target| / |target|."""
    target = set(target)
    if not target:
        raise ValueError("target set must be non-empty")
    return len(set(predicted) & target) / len(target)


def ndcg_at_k(ranked, target, k: int) -> float:
    """Discounted cumulative gain of the ranked list against the ideal one."""
    target = set(target)
    if not target:
        raise ValueError("target set must be non-empty")
    gain = sum(
        1.0 / math.log2(pos + 2)
        for pos, element in enumerate(ranked[:k])
        if element in target
    )
    ideal = sum(1.0 / math.log2(pos + 2) for pos in range(min(k, len(target))))
    return gain / ideal


def phr_at_k(hits) -> float:
    """Fraction of users whose prediction intersects the ground truth."""
    hits = list(hits)
    if not hits:
        raise ValueError("need at least one user")
    return sum(bool(h) for h in hits) / len(hits)


@dataclass
class MetricsReport:
    """Mean Recall/NDCG/PHR per K, optionally with the per-user raw rows."""

    per_k: dict[int, dict[str, float]]
    num_users: int
    per_user: list[dict] | None = field(default=None, repr=False)

    def to_json(self, path) -> None:
        doc = {
            "num_users": self.num_users,
            "per_k": {str(k): v for k, v in sorted(self.per_k.items())},
        }
        if self.per_user is not None:
            doc["per_user"] = self.per_user
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "recall", "ndcg", "phr"])
            for k in sorted(self.per_k):
                row = self.per_k[k]
                writer.writerow([k, row["recall"], row["ndcg"], row["phr"]])


def evaluate(predictor, sequences, ks=DEFAULT_KS, keep_per_user: bool = False) -> MetricsReport:
    """Score each user's history with ``predictor.predict_proba`` and
    aggregate Recall/NDCG/PHR at every requested K."""
    ks = sorted(set(int(k) for k in ks))
    if not sequences:
        raise ValueError("no sequences to evaluate")
    sums = {k: {"recall": 0.0, "ndcg": 0.0, "hits": 0} for k in ks}
    per_user = [] if keep_per_user else None
    for seq in sequences:
        scores = predictor.predict_proba(seq.history)
        row = {"user": seq.user_id} if keep_per_user else None
        for k in ks:
            ranked = topk(scores, k)
            rec = recall_at_k(ranked, seq.target)
            ndcg = ndcg_at_k(ranked, seq.target, k)
            hit = bool(set(ranked) & seq.target)
            sums[k]["recall"] += rec
            sums[k]["ndcg"] += ndcg
            sums[k]["hits"] += hit
            if row is not None:
                row[f"recall@{k}"] = rec
                row[f"ndcg@{k}"] = ndcg
                row[f"hit@{k}"] = int(hit)
        if row is not None:
            per_user.append(row)
    n = len(sequences)
    per_k = {
        k: {
            "recall": sums[k]["recall"] / n,
            "ndcg": sums[k]["ndcg"] / n,
            "phr": sums[k]["hits"] / n,
        }
        for k in ks
    }
    return MetricsReport(per_k=per_k, num_users=n, per_user=per_user)
