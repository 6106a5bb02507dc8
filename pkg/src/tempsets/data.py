"""Ingest raw set-sequences, build the element vocabulary and split users.

Raw input is JSONL, one user per line::

    {"user": "u1", "sets": [["a", "b"], ["a"]]}

with sets in chronological order and element ids as opaque strings.
Preprocessing maps elements to dense indices, drops rare elements below the
coverage threshold, removes emptied sets, drops too-short users and truncates
too-long ones to their most recent sets.  The final set of each surviving
user is the prediction target.  All randomness is governed by integer seeds;
outputs are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass(frozen=True)
class ElementVocab:
    """Bidirectional map between raw element ids and dense indices 0..m-1.

    ``freq[j]`` counts (user, set, element) records for the retained element
    ``raw_of[j]``; elements are ordered by descending count, ties broken by
    first appearance in the input.
    """

    raw_of: list[str]
    freq: list[int]
    index_of: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "index_of", {raw: j for j, raw in enumerate(self.raw_of)}
        )

    def __len__(self) -> int:
        return len(self.raw_of)


@dataclass(frozen=True)
class UserSequence:
    """One user's history of element-index sets plus the held-out target."""

    user_id: str
    sets: tuple[frozenset[int], ...]  # chronological; the last one is the target

    @property
    def history(self) -> tuple[frozenset[int], ...]:
        return self.sets[:-1]

    @property
    def target(self) -> frozenset[int]:
        return self.sets[-1]


@dataclass(frozen=True)
class Dataset:
    vocab: ElementVocab
    train: list[UserSequence]
    valid: list[UserSequence]
    test: list[UserSequence]
    meta: dict = field(default_factory=dict)

    @property
    def num_elements(self) -> int:
        return len(self.vocab)


def load_jsonl(path) -> list[dict]:
    """Parse one user record per line, preserving order.

    Raises ``DataError`` naming the offending line on malformed input, and on
    an empty file.
    """
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or "user" not in rec or "sets" not in rec:
                raise DataError(f"{path}: line {lineno}: expected {{user, sets}} object")
            if not isinstance(rec["sets"], list) or any(
                not isinstance(s, list) for s in rec["sets"]
            ):
                raise DataError(f"{path}: line {lineno}: 'sets' must be a list of lists")
            records.append({"user": str(rec["user"]), "sets": [[str(e) for e in s] for s in rec["sets"]]})
    if not records:
        raise DataError(f"{path}: no records")
    return records


def build_vocab(records: list[dict], coverage: float = 0.8) -> ElementVocab:
    """Vocabulary over the most frequent elements covering ``coverage`` of all
    (user, set, element) records.

    Elements are ranked by descending occurrence count with ties broken by
    first appearance; the smallest prefix whose cumulative count reaches the
    coverage fraction of the total is retained.
    """
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    order = 0
    for rec in records:
        for s in rec["sets"]:
            for raw in dict.fromkeys(s):  # dedupe within the set, keep order
                counts[raw] = counts.get(raw, 0) + 1
                if raw not in first_seen:
                    first_seen[raw] = order
                    order += 1
    if not counts:
        raise DataError("no non-empty sets in input")

    ranked = sorted(counts, key=lambda raw: (-counts[raw], first_seen[raw]))
    total = sum(counts.values())
    retained: list[str] = []
    cum = 0
    for raw in ranked:
        if cum >= coverage * total - 1e-9:  # slack: 0.8 is not exact in binary
            break
        retained.append(raw)
        cum += counts[raw]
    return ElementVocab(raw_of=retained, freq=[counts[r] for r in retained])


def preprocess(
    records: list[dict],
    vocab: ElementVocab,
    min_history: int = 2,
    t_max: int = 20,
) -> list[UserSequence]:
    """Filter records down to model-ready sequences.

    Unretained elements are removed from every set, emptied sets dropped,
    users with fewer than ``min_history + 1`` surviving sets dropped, and
    users with more than ``t_max`` sets keep only the most recent ``t_max``.
    """
    if min_history < 1:
        raise ValueError("min_history must be >= 1")
    if t_max < min_history + 1:
        raise ValueError("t_max must be >= min_history + 1")
    sequences = []
    for rec in records:
        sets = []
        for s in rec["sets"]:
            mapped = frozenset(vocab.index_of[e] for e in s if e in vocab.index_of)
            if mapped:
                sets.append(mapped)
        if len(sets) < min_history + 1:
            continue
        sequences.append(UserSequence(user_id=rec["user"], sets=tuple(sets[-t_max:])))
    return sequences


def split_users(
    sequences: list[UserSequence],
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    vocab: ElementVocab | None = None,
) -> Dataset:
    """Deterministic shuffle by seed, then contiguous train/valid/test split.

    Valid and test sizes are the floored ratio shares but never below one
    user; train takes the remainder.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1.0, got {ratios}")
    n = len(sequences)
    if n < 3:
        raise DataError(f"need at least 3 users to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [sequences[i] for i in order]
    n_valid = max(1, int(ratios[1] * n))
    n_test = max(1, int(ratios[2] * n))
    n_train = n - n_valid - n_test
    if vocab is None:
        vocab = ElementVocab(raw_of=[], freq=[])
    return Dataset(
        vocab=vocab,
        train=shuffled[:n_train],
        valid=shuffled[n_train : n_train + n_valid],
        test=shuffled[n_train + n_valid :],
        meta={"ratios": list(ratios), "seed": seed},
    )


def subsample_train(dataset: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Keep ``ceil(fraction * |train|)`` randomly chosen training users."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"train fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    n = len(dataset.train)
    keep = int(np.ceil(fraction * n))
    chosen = np.random.default_rng(seed).choice(n, size=keep, replace=False)
    train = [dataset.train[i] for i in sorted(chosen)]
    meta = dict(dataset.meta, train_fraction=fraction, subsample_seed=seed)
    return Dataset(dataset.vocab, train, dataset.valid, dataset.test, meta)


# ---------------------------------------------------------------------------
# persistence: one JSON document per dataset


def _sequence_to_json(seq: UserSequence) -> dict:
    return {"user": seq.user_id, "sets": [sorted(s) for s in seq.sets]}


def _sequence_from_json(obj: dict) -> UserSequence:
    return UserSequence(
        user_id=obj["user"], sets=tuple(frozenset(s) for s in obj["sets"])
    )


def save_dataset(dataset: Dataset, path) -> None:
    doc = {
        "vocab": {"raw_of": dataset.vocab.raw_of, "freq": dataset.vocab.freq},
        "splits": {
            name: [_sequence_to_json(s) for s in getattr(dataset, name)]
            for name in ("train", "valid", "test")
        },
        "meta": dataset.meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    vocab = ElementVocab(raw_of=doc["vocab"]["raw_of"], freq=doc["vocab"]["freq"])
    splits = {
        name: [_sequence_from_json(o) for o in doc["splits"][name]]
        for name in ("train", "valid", "test")
    }
    return Dataset(vocab=vocab, meta=doc.get("meta", {}), **splits)
