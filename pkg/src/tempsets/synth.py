"""Synthetic set-sequence generators with planted, measurable structure.

Both generators emit the same JSONL records the data module ingests and are
deterministic given their seed (each user draws from an independent
seed-split stream).  The planted structure turns them into known-answer
fixtures: a repeat generator whose targets are predictable from the user's
own basket, and a co-occurrence generator whose targets are predictable from
partner relationships between elements.
"""

from __future__ import annotations

import json

import numpy as np


def _raw_id(v: int) -> str:
    return f"e{v}"


def gen_repeat(
    users: int,
    num_elements: int,
    steps: int,
    p_repeat: float,
    seed: int = 0,
    basket_size: int = 4,
    noise: int = 1,
) -> list[dict]:
    """Users with a personal basket re-emitted each step.

    Every step (``steps`` history sets plus one target) keeps each basket
    element with probability ``p_repeat`` and adds ``noise`` uniformly random
    elements; an emptied step falls back to a single random element.  With
    ``p_repeat=1`` and ``noise=0`` every set equals the basket exactly.
    """
    if not 0.0 <= p_repeat <= 1.0:
        raise ValueError("p_repeat must be in [0, 1]")
    records = []
    for i in range(users):
        rng = np.random.default_rng([seed, i])
        basket = rng.choice(num_elements, size=min(basket_size, num_elements), replace=False)
        sets = []
        for _ in range(steps + 1):
            kept = {int(v) for v in basket if rng.random() < p_repeat}
            if noise:
                kept.update(int(v) for v in rng.choice(num_elements, size=noise, replace=False))
            if not kept:
                kept = {int(rng.integers(num_elements))}
            sets.append(sorted(kept))
        records.append({"user": f"u{i:04d}", "sets": [[_raw_id(v) for v in s] for s in sets]})
    return records


def partner_of(v: int, num_elements: int) -> int | None:
    """Planted pairing: consecutive even/odd indices; a trailing odd element
    stays unpaired."""
    p = v ^ 1
    return p if p < 2 * (num_elements // 2) and v < 2 * (num_elements // 2) else None


def gen_cooccur(
    users: int,
    num_elements: int,
    steps: int,
    pair_strength: float,
    seed: int = 0,
    cues_per_set: int = 2,
) -> list[dict]:
    """Users whose sets couple planted element pairs.

    Each history set draws ``cues_per_set`` elements uniformly; every drawn
    element pulls in its partner with probability ``pair_strength``.  The
    target contains, with the same probability, the partner of every element
    of the last history set, plus one uniformly random element.
    """
    if not 0.0 <= pair_strength <= 1.0:
        raise ValueError("pair_strength must be in [0, 1]")
    if cues_per_set < 1:
        raise ValueError("cues_per_set must be >= 1")
    records = []
    for i in range(users):
        rng = np.random.default_rng([seed, i])
        history = []
        for _ in range(steps):
            s = set()
            for v in rng.choice(num_elements, size=cues_per_set, replace=False):
                v = int(v)
                s.add(v)
                p = partner_of(v, num_elements)
                if p is not None and rng.random() < pair_strength:
                    s.add(p)
            history.append(sorted(s))
        target = set()
        for v in history[-1]:
            p = partner_of(v, num_elements)
            if p is not None and rng.random() < pair_strength:
                target.add(p)
        target.add(int(rng.integers(num_elements)))
        sets = history + [sorted(target)]
        records.append({"user": f"u{i:04d}", "sets": [[_raw_id(v) for v in s] for s in sets]})
    return records


def write_jsonl(records: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
