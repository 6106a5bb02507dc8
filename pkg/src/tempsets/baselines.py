"""Classical reference predictors: global popularity, per-user popularity and
last-set transfer counts.

All three fit on the training split only (histories and targets) and emit
full-length rankings, surfaced as monotone scores so they run through the
same evaluation path as the neural model.
"""

from __future__ import annotations

import numpy as np

from .base import SetPredictor, check_history, ranking_scores
from .data import UserSequence


def _occurrence_counts(sequences: list[UserSequence], num_elements: int) -> np.ndarray:
    counts = np.zeros(num_elements, dtype=np.int64)
    for seq in sequences:
        for s in seq.sets:
            for v in s:
                counts[v] += 1
    return counts


def _popularity_order(counts: np.ndarray) -> np.ndarray:
    # descending count, ties by ascending index
    return np.lexsort((np.arange(len(counts)), -counts))


class TopPredictor(SetPredictor):
    """Most popular elements of the training set, the same list for everyone."""

    def fit(self, train: list[UserSequence], num_elements: int) -> "TopPredictor":
        counts = _occurrence_counts(train, num_elements)
        self.ranking_ = _popularity_order(counts).tolist()
        self.num_elements_ = num_elements
        return self

    def predict_proba(self, history) -> np.ndarray:
        self._check_fitted("ranking_")
        check_history(history, self.num_elements_)
        return ranking_scores(self.ranking_, self.num_elements_)


class PersonalTopPredictor(SetPredictor):
    """Elements ranked by frequency in the user's own history; elements the
    user never interacted with follow in global-popularity order."""

    def fit(self, train: list[UserSequence], num_elements: int) -> "PersonalTopPredictor":
        counts = _occurrence_counts(train, num_elements)
        order = _popularity_order(counts)
        self.global_position_ = np.empty(num_elements, dtype=np.int64)
        self.global_position_[order] = np.arange(num_elements)
        self.num_elements_ = num_elements
        return self

    def predict_proba(self, history) -> np.ndarray:
        self._check_fitted("global_position_")
        sets = check_history(history, self.num_elements_)
        personal = np.zeros(self.num_elements_, dtype=np.int64)
        for s in sets:
            for v in s:
                personal[v] += 1
        ranking = np.lexsort((self.global_position_, -personal))
        return ranking_scores(ranking, self.num_elements_)


class ElementTransferPredictor(SetPredictor):
    """Scores the next set by transition counts from the user's last set.

    Fitting counts, over every adjacent pair of sets of every training user,
    how often element v in one set is followed by element v' in the next.
    Prediction sums the count rows of the last history set; ties (including
    all-zero rows) fall back to global popularity.
    """

    def fit(self, train: list[UserSequence], num_elements: int) -> "ElementTransferPredictor":
        counts = _occurrence_counts(train, num_elements)
        order = _popularity_order(counts)
        self.global_position_ = np.empty(num_elements, dtype=np.int64)
        self.global_position_[order] = np.arange(num_elements)
        transfer: dict[int, dict[int, int]] = {}
        for seq in train:
            for prev, nxt in zip(seq.sets, seq.sets[1:]):
                for v in prev:
                    row = transfer.setdefault(v, {})
                    for w in nxt:
                        row[w] = row.get(w, 0) + 1
        self.transfer_ = transfer
        self.num_elements_ = num_elements
        return self

    def predict_proba(self, history) -> np.ndarray:
        self._check_fitted("transfer_")
        sets = check_history(history, self.num_elements_)
        scores = np.zeros(self.num_elements_, dtype=np.int64)
        for v in sets[-1]:
            for w, c in self.transfer_.get(v, {}).items():
                scores[w] += c
        ranking = np.lexsort((np.arange(self.num_elements_), self.global_position_, -scores))
        return ranking_scores(ranking, self.num_elements_)


BASELINES = {
    "top": TopPredictor,
    "personal-top": PersonalTopPredictor,
    "element-transfer": ElementTransferPredictor,
}


def make_baseline(name: str) -> SetPredictor:
    try:
        return BASELINES[name]()
    except KeyError:
        raise ValueError(f"unknown baseline {name!r}, expected one of {sorted(BASELINES)}") from None
