# tests/test_metrics.py
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from emotion_ensemble.errors import AlignmentError, EmptyInputError
from emotion_ensemble.metrics import (
    average_precision,
    ers,
    evaluate,
    r_squared,
    roc_auc,
)
from emotion_ensemble.records import LOGIT, PROBABILITY, EmotionAnnotation, Prediction, PredictionSet


def _sweep_ap(scores, labels):
    """Threshold-sweep oracle: precision at each distinct threshold, weighted by the recall gain."""
    scores, labels = np.asarray(scores, float), np.asarray(labels, int)
    total = labels.sum()
    ap, prev_recall = 0.0, 0.0
    for thr in sorted(set(scores), reverse=True):
        picked = scores >= thr
        tp = labels[picked].sum()
        recall = tp / total
        ap += (recall - prev_recall) * tp / picked.sum()
        prev_recall = recall
    return ap


def _pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def _dataset(n, rng, num_categories=4):
    annotations, preds = {}, {}
    for i in range(n):
        cat = rng.uniform(size=num_categories)
        vad = rng.uniform(size=3)
        annotations[f"c{i:03d}"] = EmotionAnnotation(cat, vad)
        preds[f"c{i:03d}"] = Prediction(rng.normal(size=num_categories), rng.uniform(size=3))
    return preds, annotations


# ---------- average precision ----------

def test_ap_example():
    assert average_precision([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(5 / 6)


def test_ap_perfect_ranking():
    assert average_precision([0.9, 0.8, 0.3, 0.2, 0.1], [1, 1, 0, 0, 0]) == pytest.approx(1.0)


def test_ap_all_ties_is_base_rate():
    assert average_precision([0.5] * 8, [1, 0, 0, 1, 0, 1, 0, 0]) == pytest.approx(3 / 8)


def test_ap_without_positives_is_undefined():
    assert average_precision([0.3, 0.2], [0, 0]) is None


def test_ap_matches_threshold_sweep_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = rng.integers(0, 5, size=15) / 4.0
        labels = rng.integers(0, 2, size=15)
        if labels.sum() == 0:
            continue
        assert average_precision(scores, labels) == pytest.approx(_sweep_ap(scores, labels))


# ---------- ROC-AUC ----------

def test_auc_example():
    assert roc_auc([0.9, 0.8, 0.1], [1, 0, 1]) == pytest.approx(0.5)


def test_auc_perfect_and_ties():
    assert roc_auc([0.9, 0.8, 0.2], [1, 1, 0]) == pytest.approx(1.0)
    assert roc_auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == pytest.approx(0.5)


def test_auc_single_class_is_undefined():
    assert roc_auc([0.1, 0.9], [1, 1]) is None


def test_auc_matches_pairwise_count():
    rng = np.random.default_rng(1)
    scores = rng.integers(0, 6, size=30) / 5.0
    labels = rng.integers(0, 2, size=30)
    assert roc_auc(scores, labels) == pytest.approx(_pairwise_auc(scores, labels))


# ---------- R2 ----------

def test_r2_examples():
    t = np.array([0.1, 0.5, 0.9, 0.3])
    assert r_squared(t, t) == pytest.approx(1.0)
    assert r_squared(np.full(4, t.mean()), t) == pytest.approx(0.0)
    assert r_squared([1.0, 0.0], [0.0, 1.0]) == pytest.approx(-3.0)


def test_r2_constant_targets_undefined():
    assert r_squared([0.1, 0.2], [0.5, 0.5]) is None
    assert r_squared([0.1], [0.5]) is None


# ---------- ERS ----------

@pytest.mark.parametrize("m_r2, m_ap, m_ra, expected, tol", [
    (0.1597, 0.2185, 0.6826, 0.3051, 5e-5),
    (0.1141, 0.1796, 0.6416, 0.2624, 2e-4),
    (0.1030, 0.1714, 0.6352, 0.2530, 2e-4),
    (0.0, 0.0, 0.0, 0.0, 0.0),
])
def test_ers_table_rows(m_r2, m_ap, m_ra, expected, tol):
    assert ers(m_r2, m_ap, m_ra) == pytest.approx(expected, abs=tol)


# ---------- evaluate ----------

def test_perfect_predictions():
    rng = np.random.default_rng(2)
    _, annotations = _dataset(40, rng)
    preds = PredictionSet({cid: Prediction(a.categorical, a.vad) for cid, a in annotations.items()},
                          space=PROBABILITY)
    report = evaluate(preds, annotations)
    assert report.mR2 == pytest.approx(1.0)
    assert report.mAP == pytest.approx(1.0)
    assert report.mRA == pytest.approx(1.0)
    assert report.ers == pytest.approx(1.0)
    assert report.score_space == PROBABILITY


def test_random_scores_give_chance_auc():
    rng = np.random.default_rng(3)
    n, c = 10_000, 26
    annotations = {f"c{i}": EmotionAnnotation(rng.integers(0, 2, size=c).astype(float), rng.uniform(size=3))
                   for i in range(n)}
    preds = {cid: Prediction(rng.normal(size=c), rng.uniform(size=3)) for cid in annotations}
    report = evaluate(preds, annotations)
    assert report.mRA == pytest.approx(0.5, abs=0.02)


def test_evaluate_is_order_invariant():
    rng = np.random.default_rng(4)
    preds, annotations = _dataset(30, rng)
    base = evaluate(preds, annotations)
    items = list(preds.items())
    rng.shuffle(items)
    shuffled = evaluate(dict(items), dict(reversed(list(annotations.items()))))
    assert shuffled.to_dict() == base.to_dict()


def test_logits_are_ranked_raw_and_vad_is_clamped():
    annotations = {
        "a": EmotionAnnotation(np.array([1.0, 0.0]), np.array([1.0, 0.0, 0.5])),
        "b": EmotionAnnotation(np.array([0.0, 1.0]), np.array([0.0, 1.0, 0.5])),
    }
    preds = {
        "a": Prediction(np.array([3.0, -3.0]), np.array([1.7, -0.4, 0.5])),
        "b": Prediction(np.array([-3.0, 3.0]), np.array([-2.0, 1.2, 0.5])),
    }
    report = evaluate(preds, annotations, ["x", "y"])
    assert report.mAP == pytest.approx(1.0)
    # clamped VAD equals the targets on the first two dimensions; the third is constant
    assert report.r2[:2] == [pytest.approx(1.0), pytest.approx(1.0)]
    assert report.r2[2] is None and report.skipped_r2 == 1
    assert report.score_space == LOGIT
    assert [row[0] for row in report.per_class_rows()] == ["x", "y"]


def test_saturated_logits_keep_their_ranking():
    labels = [0.0, 0.0, 1.0, 1.0]
    logits = [40.0, 50.0, 60.0, 45.0]
    annotations = {f"c{i}": EmotionAnnotation(np.array([y]), np.array([i / 3, 0.5, 0.5])) for i, y in enumerate(labels)}
    preds = PredictionSet({f"c{i}": Prediction(np.array([s]), np.array([i / 3, 0.5, 0.5])) for i, s in enumerate(logits)},
                          space=LOGIT)
    report = evaluate(preds, annotations)
    assert report.ap[0] == pytest.approx(5 / 6)
    assert report.roc_auc[0] == pytest.approx(0.75)
    shifted = {cid: Prediction(p.categorical - 50.0, p.vad) for cid, p in preds.predictions.items()}
    assert evaluate(shifted, annotations).ap == report.ap


def test_undefined_classes_are_skipped_and_counted(caplog):
    annotations = {f"c{i}": EmotionAnnotation(np.array([float(i % 2), 0.0]), np.array([i / 4, 0.5, i / 4]))
                   for i in range(4)}
    preds = {cid: Prediction(np.array([0.1 * i, 0.2]), np.array([0.5, 0.5, 0.5]))
             for i, cid in enumerate(annotations)}
    with caplog.at_level("WARNING", logger="emotion_ensemble"):
        report = evaluate(preds, annotations)
    assert report.ap[1] is None and report.roc_auc[1] is None
    assert report.skipped_ap == 1 and report.skipped_roc_auc == 1 and report.skipped_r2 == 1
    assert report.mAP == pytest.approx(report.ap[0])
    assert "skipped" in caplog.text


def test_report_dict_fields():
    rng = np.random.default_rng(5)
    preds, annotations = _dataset(12, rng, num_categories=3)
    d = evaluate(preds, annotations).to_dict()
    for key in ("mR2", "mAP", "mRA", "ers", "skipped_ap", "skipped_roc_auc", "skipped_r2",
                "tie_policy", "num_clips", "per_class", "per_dimension"):
        assert key in d
    assert d["tie_policy"] == "grouped"
    assert [r["dimension"] for r in d["per_dimension"]] == ["valence", "arousal", "dominance"]


def test_ers_recomputed_matches():
    rng = np.random.default_rng(6)
    preds, annotations = _dataset(20, rng)
    report = evaluate(preds, annotations)
    assert report.ers_recomputed() == pytest.approx(report.ers)


def test_all_undefined_gives_nan_means():
    annotations = {"a": EmotionAnnotation(np.zeros(2), np.full(3, 0.5))}
    report = evaluate({"a": Prediction(np.zeros(2), np.zeros(3))}, annotations)
    assert math.isnan(report.mAP) and math.isnan(report.ers)
    assert report.to_dict()["mAP"] is None


def test_alignment_and_empty_errors():
    a = EmotionAnnotation(np.zeros(2), np.zeros(3))
    p = Prediction(np.zeros(2), np.zeros(3))
    with pytest.raises(AlignmentError, match="only in predictions"):
        evaluate({"x": p, "y": p}, {"x": a})
    with pytest.raises(EmptyInputError):
        evaluate({}, {})
