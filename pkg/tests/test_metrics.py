import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from glaucoscreen.metrics import (
    ConfusionCounts,
    SegScores,
    confusion_counts,
    diag_scores,
    mean_seg_scores,
    seg_scores,
)

TABLE = ConfusionCounts(tp=10, fp=1, tn=18, fn=1)


def truncate(value, digits):
    scale = 10**digits
    return math.floor(value * scale) / scale


def test_screening_table_fractions():
    d = diag_scores(TABLE)
    assert d.sensitivity == 10 / 11
    assert d.specificity == 18 / 19
    assert d.precision == 10 / 11
    assert d.npv == 18 / 19
    assert d.accuracy == 28 / 30
    assert d.undefined == ()


@pytest.mark.parametrize("name,reported,digits", [
    ("sensitivity", 90.9, 1),
    ("specificity", 94.73, 2),
    ("precision", 90.9, 1),
    ("npv", 94.73, 2),
    ("accuracy", 93.33, 2),
])
def test_screening_table_reported_digits(name, reported, digits):
    pct = 100 * getattr(diag_scores(TABLE), name)
    assert truncate(pct + 1e-9, digits) == pytest.approx(reported, abs=1e-9)


def test_confusion_counts_from_masks():
    pred = np.array([[1, 1, 0, 0]], bool)
    truth = np.array([[1, 0, 1, 0]], bool)
    assert confusion_counts(pred, truth) == ConfusionCounts(tp=1, fp=1, tn=1, fn=1)
    with pytest.raises(ValueError):
        confusion_counts(pred, truth[:, :3])


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1, fp=0, tn=0, fn=0)


counts = st.builds(ConfusionCounts, *(st.integers(0, 10_000) for _ in range(4)))


@given(counts)
def test_f1_jaccard_identity(c):
    s = seg_scores(c)
    assert abs(s.f1 - 2 * s.jaccard / (1 + s.jaccard)) < 1e-12


@given(counts)
def test_precision_is_recall_with_roles_swapped(c):
    swapped = ConfusionCounts(tp=c.tp, fp=c.fn, tn=c.tn, fn=c.fp)
    assert seg_scores(c).precision == seg_scores(swapped).recall


@given(counts)
def test_scores_in_unit_interval(c):
    for v in (*vars(seg_scores(c)).values(), *list(vars(diag_scores(c)).values())[:5]):
        assert 0.0 <= v <= 1.0


def test_empty_prediction_and_truth_is_perfect():
    s = seg_scores(ConfusionCounts(tp=0, fp=0, tn=25, fn=0))
    assert s == SegScores(1.0, 1.0, 1.0, 1.0, 1.0)


def test_missed_structure_scores_zero():
    s = seg_scores(ConfusionCounts(tp=0, fp=0, tn=20, fn=5))
    assert (s.precision, s.recall, s.f1, s.jaccard) == (0.0, 0.0, 0.0, 0.0)


def test_undefined_diagnostic_ratios_flagged():
    d = diag_scores(ConfusionCounts(tp=0, fp=0, tn=5, fn=0))
    assert d.sensitivity == 0.0 and d.precision == 0.0
    assert set(d.undefined) == {"sensitivity", "precision"}
    assert d.specificity == 1.0


def test_mean_seg_scores():
    a = SegScores(1.0, 0.5, 0.5, 0.5, 0.25)
    b = SegScores(0.0, 0.5, 1.0, 0.5, 0.75)
    assert mean_seg_scores([a, b]) == SegScores(0.5, 0.5, 0.75, 0.5, 0.5)
    with pytest.raises(ValueError):
        mean_seg_scores([])
