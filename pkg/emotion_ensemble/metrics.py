# emotion_ensemble/metrics.py
"""
Per-class average precision and ROC-AUC, per-dimension R², their means and
the aggregate emotion recognition score

    ERS = 1/2 * (mR2 + 1/2 * (mAP + mRA))

Classes without positives (AP) or with a single label value (ROC-AUC), and
dimensions with constant targets (R²), are left out of the means and counted.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from sklearn.metrics import average_precision_score, r2_score, roc_auc_score

from .config_loader import load_app_config
from .errors import AlignmentError, EmptyInputError, ShapeError
from .objectives import binarize
from .records import LOGIT, EmotionAnnotation, Prediction, PredictionSet, annotation_matrix

log = logging.getLogger(__name__)

TIE_POLICY = "grouped"


def _pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeError("metric", s.shape, y.shape)
    return s, (y >= 0.5).astype(np.int64)


def average_precision(scores, labels) -> Optional[float]:
    """
    Non-interpolated AP: sum over distinct thresholds of (R_n - R_{n-1}) * P_n.
    Tied scores enter the ranking together. None without positives.
    """
    s, y = _pair(scores, labels)
    if y.sum() == 0:
        return None
    return float(average_precision_score(y, s))


def roc_auc(scores, labels) -> Optional[float]:
    """Fraction of (positive, negative) pairs ranked correctly, ties counted 1/2. None for one class."""
    s, y = _pair(scores, labels)
    if y.min() == y.max():
        return None
    return float(roc_auc_score(y, s))


def r_squared(preds, targets) -> Optional[float]:
    """1 - SS_res / SS_tot; None with fewer than two samples or constant targets."""
    p = np.asarray(preds, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ShapeError("r_squared", p.shape, t.shape)
    if t.size < 2 or np.all(t == t[0]):
        return None
    return float(r2_score(t, p))


def ers(mR2: float, mAP: float, mRA: float) -> float:
    return 0.5 * (mR2 + 0.5 * (mAP + mRA))


def _mean_defined(values: Sequence[Optional[float]]) -> float:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else math.nan


@dataclass
class EvaluationReport:
    categories: tuple[str, ...]
    ap: list[Optional[float]]
    roc_auc: list[Optional[float]]
    r2: list[Optional[float]]
    mAP: float
    mRA: float
    mR2: float
    ers: float
    num_clips: int
    skipped_ap: int = 0
    skipped_roc_auc: int = 0
    skipped_r2: int = 0
    tie_policy: str = TIE_POLICY
    score_space: str = LOGIT
    meta: dict = field(default_factory=dict)

    def ers_recomputed(self) -> float:
        return ers(self.mR2, self.mAP, self.mRA)

    def per_class_rows(self) -> list[tuple[str, Optional[float], Optional[float]]]:
        return list(zip(self.categories, self.ap, self.roc_auc))

    def per_dimension_rows(self) -> list[tuple[str, Optional[float]]]:
        return list(zip(load_app_config().vad, self.r2))

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or (isinstance(x, float) and math.isnan(x)) else x

        return {
            "mR2": num(self.mR2),
            "mAP": num(self.mAP),
            "mRA": num(self.mRA),
            "ers": num(self.ers),
            "skipped_ap": self.skipped_ap,
            "skipped_roc_auc": self.skipped_roc_auc,
            "skipped_r2": self.skipped_r2,
            "tie_policy": self.tie_policy,
            "score_space": self.score_space,
            "num_clips": self.num_clips,
            "per_class": [
                {"category": c, "ap": num(a), "roc_auc": num(r)} for c, a, r in self.per_class_rows()
            ],
            "per_dimension": [{"dimension": d, "r2": num(v)} for d, v in self.per_dimension_rows()],
            **({"meta": self.meta} if self.meta else {}),
        }


def _aligned_ids(pred_ids, ann_ids) -> list[str]:
    pred_ids, ann_ids = set(pred_ids), set(ann_ids)
    if pred_ids != ann_ids:
        only_pred = sorted(pred_ids - ann_ids)[:5]
        only_ann = sorted(ann_ids - pred_ids)[:5]
        raise AlignmentError(
            f"clip ids differ: {len(pred_ids - ann_ids)} only in predictions {only_pred}, "
            f"{len(ann_ids - pred_ids)} only in annotations {only_ann}"
        )
    return sorted(pred_ids)


def evaluate(
    predictions: Union[PredictionSet, Mapping[str, Prediction]],
    annotations: Mapping[str, EmotionAnnotation],
    categories: Optional[Sequence[str]] = None,
) -> EvaluationReport:
    """
    Score aligned predictions against annotations. Categorical scores are
    ranked as given, logits included; VAD predictions are clamped to [0, 1].
    Clips are processed in sorted id order.
    """
    if isinstance(predictions, PredictionSet):
        space, preds = predictions.space, predictions.predictions
    else:
        space, preds = LOGIT, dict(predictions)
    ids = _aligned_ids(preds, annotations)
    if not ids:
        raise EmptyInputError("nothing to evaluate: no clips")

    cat = np.stack([preds[c].categorical for c in ids]).astype(np.float64)
    vad = np.clip(np.stack([preds[c].vad for c in ids]).astype(np.float64), 0.0, 1.0)
    gt_cat, gt_vad = annotation_matrix(annotations, ids)
    if cat.shape != gt_cat.shape:
        raise ShapeError("evaluate", cat.shape, gt_cat.shape)
    labels = binarize(gt_cat)
    num_classes = cat.shape[1]
    names = tuple(categories) if categories is not None else tuple(f"class_{i}" for i in range(num_classes))

    ap = [average_precision(cat[:, j], labels[:, j]) for j in range(num_classes)]
    ra = [roc_auc(cat[:, j], labels[:, j]) for j in range(num_classes)]
    r2 = [r_squared(vad[:, d], gt_vad[:, d]) for d in range(vad.shape[1])]

    skipped = (ap.count(None), ra.count(None), r2.count(None))
    if any(skipped):
        log.warning("metrics: undefined and skipped -> AP %d class(es), ROC-AUC %d class(es), R2 %d dim(s)",
                    *skipped)

    m_ap, m_ra, m_r2 = _mean_defined(ap), _mean_defined(ra), _mean_defined(r2)
    return EvaluationReport(
        categories=names,
        ap=ap,
        roc_auc=ra,
        r2=r2,
        mAP=m_ap,
        mRA=m_ra,
        mR2=m_r2,
        ers=ers(m_r2, m_ap, m_ra),
        num_clips=len(ids),
        skipped_ap=skipped[0],
        skipped_roc_auc=skipped[1],
        skipped_r2=skipped[2],
        score_space=space,
    )
