import math

import numpy as np
import pytest

from trialbench.metrics import (
    FIXED_HR_THRESHOLDS,
    Prediction,
    SCALE_LOG_HR,
    SCALE_RMST_DAYS,
    ScoredEffect,
    direction_of,
    magnitude_of,
    pr_curve,
    predict,
    score,
    threshold_to_magnitude,
)
from trialbench.refset import (
    DIRECTION_A,
    DIRECTION_B,
    DIRECTION_NONE,
    LABEL_STRONG,
    LABEL_WEAK,
    ReferenceEntry,
    ReferenceSet,
)


def _entry(i, label, direction):
    return ReferenceEntry("A", "B", f"E{i:04d}", label, direction, 1.0, 0.01, 0.02)


def _effect(entry, available=True, direction=DIRECTION_A, magnitude=1.0):
    return ScoredEffect(entry.key, "m", available, direction, magnitude)


def test_direction_conventions():
    assert direction_of(SCALE_LOG_HR, 0.3) == DIRECTION_A
    assert direction_of(SCALE_LOG_HR, -0.3) == DIRECTION_B
    assert direction_of(SCALE_RMST_DAYS, -5.0) == DIRECTION_A  # A loses time
    assert direction_of(SCALE_RMST_DAYS, 5.0) == DIRECTION_B
    with pytest.raises(ValueError):
        direction_of("risk_difference", 0.1)


def test_threshold_mapping():
    assert threshold_to_magnitude(SCALE_LOG_HR, 2.0) == pytest.approx(math.log(2))
    assert threshold_to_magnitude(SCALE_RMST_DAYS, 30.0) == 30.0
    with pytest.raises(ValueError):
        threshold_to_magnitude(SCALE_LOG_HR, 0.9)
    with pytest.raises(ValueError):
        threshold_to_magnitude(SCALE_RMST_DAYS, -1.0)


def test_predict_labels():
    class Est:
        method_id = "m"
        scale = SCALE_LOG_HR
        point = math.log(1.8)
        converged = True
        entry_key = ("A", "B", "E1")

    strong = predict(Est(), 1.5)
    assert strong.predicted_label == "strong" and strong.predicted_direction == DIRECTION_A
    weak = predict(Est(), 2.0)
    assert weak.predicted_label == "weak" and weak.predicted_direction == DIRECTION_NONE
    Est.converged = False
    assert predict(Est(), 1.5).predicted_label == "unavailable"


def _hand_fixture():
    """2 strong + 2 weak entries; 3 strong predictions, 1 correct."""
    entries = [
        _entry(0, LABEL_STRONG, DIRECTION_A),
        _entry(1, LABEL_STRONG, DIRECTION_B),
        _entry(2, LABEL_WEAK, DIRECTION_NONE),
        _entry(3, LABEL_WEAK, DIRECTION_NONE),
    ]
    effects = [
        _effect(entries[0], direction=DIRECTION_A, magnitude=2.0),   # TP
        _effect(entries[1], direction=DIRECTION_B, magnitude=0.1),   # predicted weak: miss
        _effect(entries[2], direction=DIRECTION_A, magnitude=2.0),   # FP
        _effect(entries[3], direction=DIRECTION_B, magnitude=2.0),   # FP
    ]
    return ReferenceSet(entries), effects


def test_score_hand_fixture():
    refset, effects = _hand_fixture()
    row = score(effects, refset, magnitude_threshold=1.0)
    assert row.weighted_precision == pytest.approx(1 / 3)
    assert row.recall == pytest.approx(1 / 2)
    assert row.recall_evaluable == pytest.approx(1 / 2)
    assert (row.tp, row.fp, row.fn) == (1, 2, 1)
    assert row.n_evaluable == 4


def test_score_requires_direction_match():
    refset, effects = _hand_fixture()
    flipped = [ScoredEffect(e.entry_key, e.method_id, e.available,
                            DIRECTION_B if e.direction == DIRECTION_A else DIRECTION_A,
                            e.magnitude) for e in effects]
    row = score(flipped, refset, 1.0)
    assert row.tp == 0 and row.recall == 0.0


def test_score_family_weighting():
    # 1 strong + 3 weak evaluable: strong entries carry weight 3
    entries = [_entry(0, LABEL_STRONG, DIRECTION_A)] + [
        _entry(i, LABEL_WEAK, DIRECTION_NONE) for i in (1, 2, 3)]
    effects = [_effect(e, magnitude=2.0) for e in entries]  # all predicted strong
    row = score(effects, ReferenceSet(entries), 1.0)
    assert row.tp_weighted == pytest.approx(3.0)
    assert row.fp_weighted == pytest.approx(3.0)
    assert row.weighted_precision == pytest.approx(0.5)


def test_score_unavailable_entries():
    entries = [_entry(0, LABEL_STRONG, DIRECTION_A), _entry(1, LABEL_STRONG, DIRECTION_A),
               _entry(2, LABEL_WEAK, DIRECTION_NONE)]
    effects = [
        _effect(entries[0], magnitude=2.0),
        ScoredEffect(entries[1].key, "m", False, DIRECTION_NONE, math.nan),
        _effect(entries[2], magnitude=0.0),
    ]
    row = score(effects, ReferenceSet(entries), 1.0)
    assert row.n_evaluable == 2
    assert row.recall == pytest.approx(1 / 2)            # both strong in denominator
    assert row.recall_evaluable == pytest.approx(1.0)    # only evaluable strong
    assert row.weighted_precision == pytest.approx(1.0)


def test_score_no_strong_predictions_yields_none():
    refset, effects = _hand_fixture()
    row = score(effects, refset, magnitude_threshold=100.0)
    assert row.weighted_precision is None
    assert row.recall == 0.0


def test_score_empty_reference_set():
    with pytest.raises(ValueError):
        score([], ReferenceSet([]), 1.0)


def test_pr_curve_structure():
    rng = np.random.default_rng(8)
    entries, effects = [], []
    for i in range(60):
        label = LABEL_STRONG if i % 2 else LABEL_WEAK
        direction = DIRECTION_A if label == LABEL_STRONG else DIRECTION_NONE
        entry = _entry(i, label, direction)
        entries.append(entry)
        effects.append(_effect(entry, direction=DIRECTION_A,
                               magnitude=float(rng.uniform(0, 2))))
    refset = ReferenceSet(entries)
    rows = pr_curve(effects, refset, SCALE_LOG_HR)
    thresholds = [r.threshold for r in rows]
    assert thresholds == sorted(thresholds, reverse=True)
    for hr in FIXED_HR_THRESHOLDS:
        assert any(abs(t - math.log(hr)) < 1e-12 for t in thresholds)
    recalls = [r.recall for r in rows]
    assert recalls == sorted(recalls)  # recall grows as the threshold drops
    with pytest.raises(ValueError):
        pr_curve([ScoredEffect(("A", "B", "E"), "m", False, DIRECTION_NONE, math.nan)],
                 refset, SCALE_LOG_HR)
