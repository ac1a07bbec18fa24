"""Confusion counts and precision/recall/f1 with the positive class = RISK."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


def confusion_counts(predictions: Sequence[int], labels: Sequence[int]) -> tuple[int, int, int, int]:
    """(TP, FP, TN, FN) over aligned binary prediction/label lists."""
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    tp = fp = tn = fn = 0
    for pred, truth in zip(predictions, labels):
        if pred not in (0, 1) or truth not in (0, 1):
            raise ValueError("predictions and labels must be binary")
        if pred == 1 and truth == 1:
            tp += 1
        elif pred == 1 and truth == 0:
            fp += 1
        elif pred == 0 and truth == 0:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both inputs are 0 (degenerate convention)."""
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def prf1(tp: int, fp: int, tn: int, fn: int) -> tuple[float, float, float]:
    """precision = TP/(TP+FP), recall = TP/(TP+FN), f1 their harmonic mean.

    Zero denominators yield 0 by convention.
    """
    if min(tp, fp, tn, fn) < 0:
        raise ValueError("confusion counts must be nonnegative")
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return precision, recall, f1_score(precision, recall)


@dataclass
class Metrics:
    """Confusion counts plus the derived scores for one evaluation pass."""

    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        precision, recall, f1 = prf1(tp, fp, tn, fn)
        return cls(tp, fp, tn, fn, precision, recall, f1)

    @classmethod
    def from_predictions(cls, predictions: Sequence[int], labels: Sequence[int]) -> "Metrics":
        return cls.from_counts(*confusion_counts(predictions, labels))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def as_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }
