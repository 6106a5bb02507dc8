"""Temporal sets prediction: given a user's chronological sequence of element
sets, score every element's chance of appearing in the next set."""

from .base import NotFittedError, SetPredictor
from .baselines import ElementTransferPredictor, PersonalTopPredictor, TopPredictor
from .data import Dataset, ElementVocab, UserSequence
from .metrics import MetricsReport, evaluate
from .model import DNNTSP
from .training import TrainConfig, train

__all__ = [
    "DNNTSP",
    "Dataset",
    "ElementTransferPredictor",
    "ElementVocab",
    "MetricsReport",
    "NotFittedError",
    "PersonalTopPredictor",
    "SetPredictor",
    "TopPredictor",
    "TrainConfig",
    "UserSequence",
    "evaluate",
    "train",
]
