"""Common estimator surface shared by the neural model and the baselines.

Predictors follow the familiar fit/predict idiom: hyperparameters are
constructor arguments mirrored as attributes (``get_params``/``set_params``
work sklearn-style), learned state lives in trailing-underscore attributes,
and every fitted predictor scores a user's history with ``predict_proba``
over the full element vocabulary.  Rankings induced by the scores break ties
by ascending element index, so any predictor plugs into the same evaluation
path.
"""

from __future__ import annotations

import inspect

import numpy as np


class NotFittedError(RuntimeError):
    """Predict was called before fit."""


class SetPredictor:
    """Base class for next-set predictors."""

    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return sorted(
            p.name
            for p in sig.parameters.values()
            if p.name != "self" and p.kind != p.VAR_KEYWORD
        )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "SetPredictor":
        valid = set(self._param_names())
        for name, value in params.items():
            if name not in valid:
                raise ValueError(f"invalid parameter {name!r} for {type(self).__name__}")
            setattr(self, name, value)
        return self

    def fit(self, *args, **kwargs):
        raise NotImplementedError

    def predict_proba(self, history) -> np.ndarray:
        """Scores over all elements, one per vocabulary index."""
        raise NotImplementedError

    def predict_topk(self, history, k: int) -> list[int]:
        from .metrics import topk

        return topk(self.predict_proba(history), k)

    def _check_fitted(self, attr: str) -> None:
        if getattr(self, attr, None) is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")


def check_history(history, num_elements: int) -> tuple[frozenset[int], ...]:
    """Validate a user's history of element-index sets.

    Requires a non-empty history of non-empty sets whose indices lie in
    ``[0, num_elements)``.  Returns the history as frozensets.
    """
    sets = tuple(frozenset(int(e) for e in s) for s in history)
    if not sets:
        raise ValueError("history must contain at least one set")
    for i, s in enumerate(sets):
        if not s:
            raise ValueError(f"history set {i} is empty")
        bad = [e for e in s if e < 0 or e >= num_elements]
        if bad:
            raise ValueError(
                f"history set {i} has element indices {sorted(bad)} outside "
                f"[0, {num_elements})"
            )
    return sets


def ranking_scores(ranking, num_elements: int) -> np.ndarray:
    """Monotone scores in (0, 1] whose induced ranking reproduces ``ranking``."""
    scores = np.zeros(num_elements, dtype=np.float64)
    for pos, element in enumerate(ranking):
        scores[element] = (num_elements - pos) / num_elements
    return scores
