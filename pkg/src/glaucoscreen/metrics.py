"""Segmentation and diagnostic scores from confusion counts."""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np


@dataclasses.dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclasses.dataclass(frozen=True)
class SegScores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    jaccard: float


@dataclasses.dataclass(frozen=True)
class DiagScores:
    sensitivity: float
    specificity: float
    precision: float
    npv: float
    accuracy: float
    undefined: tuple[str, ...] = ()


def confusion_counts(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} differ in size")
    pred, truth = pred.astype(bool), truth.astype(bool)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return ConfusionCounts(tp=tp, fp=fp, tn=pred.size - tp - fp - fn, fn=fn)


def seg_scores(c: ConfusionCounts) -> SegScores:
    """Accuracy, precision, recall, F1 and Jaccard.

    When prediction and truth are both empty every ratio with a zero
    denominator scores 1 (a perfect empty match); otherwise 0.
    """
    empty_match = c.tp + c.fp + c.fn == 0

    def ratio(num, den):
        if den == 0:
            return 1.0 if empty_match else 0.0
        return num / den

    precision = ratio(c.tp, c.tp + c.fp)
    recall = ratio(c.tp, c.tp + c.fn)
    return SegScores(
        accuracy=ratio(c.tp + c.tn, c.total),
        precision=precision,
        recall=recall,
        f1=ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        jaccard=ratio(c.tp, c.tp + c.fp + c.fn),
    )


def mean_seg_scores(scores: Sequence[SegScores]) -> SegScores:
    if not scores:
        raise ValueError("no scores to average")
    fields = [f.name for f in dataclasses.fields(SegScores)]
    return SegScores(**{f: float(np.mean([getattr(s, f) for s in scores])) for f in fields})


def diag_scores(c: ConfusionCounts) -> DiagScores:
    """Case-level screening scores; 0/0 ratios are reported as 0 and listed in ``undefined``."""
    undefined = []

    def ratio(name, num, den):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    values = dict(
        sensitivity=ratio("sensitivity", c.tp, c.tp + c.fn),
        specificity=ratio("specificity", c.tn, c.tn + c.fp),
        precision=ratio("precision", c.tp, c.tp + c.fp),
        npv=ratio("npv", c.tn, c.tn + c.fn),
        accuracy=ratio("accuracy", c.tp + c.tn, c.total),
    )
    return DiagScores(**values, undefined=tuple(undefined))
