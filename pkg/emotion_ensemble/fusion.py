# emotion_ensemble/fusion.py
"""Late fusion of per-clip predictions from several models."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, EmptyInputError
from .ndcore.tensor import _stable_sigmoid
from .records import LOGIT, PROBABILITY, Prediction, PredictionSet

log = logging.getLogger(__name__)

SCHEMES = ("maximum", "average", "weighted_average")
DEFAULT_WEIGHTS = (2.0, 2.0, 1.0)  # tsn-rgb : tsn-flow : stgcn


@dataclass(frozen=True)
class FusionSpec:
    scheme: str = "weighted_average"
    weights: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown fusion scheme '{self.scheme}' (expected one of {SCHEMES})")
        if self.weights is not None and any(not w > 0 for w in self.weights):
            raise ConfigError(f"fusion weights must be positive, got {list(self.weights)}")

    def resolved_weights(self, num_models: int) -> Optional[np.ndarray]:
        if self.scheme != "weighted_average":
            return None
        weights = self.weights
        if weights is None:
            if num_models != len(DEFAULT_WEIGHTS):
                raise ConfigError(f"weighted_average over {num_models} models needs explicit weights")
            weights = DEFAULT_WEIGHTS
        if len(weights) != num_models:
            raise ConfigError(f"{len(weights)} weights given for {num_models} prediction sets")
        return np.asarray(weights, dtype=np.float64)


def parse_weights(text: str) -> tuple[float, ...]:
    """'2,2,1' -> (2.0, 2.0, 1.0)"""
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"cannot parse weights '{text}' (expected e.g. 2,2,1)") from None


def _fold(stack: np.ndarray, scheme: str, weights: Optional[np.ndarray]) -> np.ndarray:
    if scheme == "maximum":
        return stack.max(axis=0)
    if scheme == "average" or weights is None or np.all(weights == weights[0]):
        return stack.mean(axis=0)
    w = weights / weights.sum()
    return np.tensordot(w, stack, axes=1)


def fuse(prediction_sets: Sequence[PredictionSet], spec: FusionSpec) -> PredictionSet:
    """
    Fuse aligned prediction sets. Categorical scores are brought to
    probability space first (sigmoid on logits); VAD values are fused raw.
    The result is in probability space.
    """
    if not prediction_sets:
        raise EmptyInputError("fuse needs at least one prediction set")
    ids = prediction_sets[0].clip_ids()
    for i, ps in enumerate(prediction_sets[1:], start=1):
        if ps.clip_ids() != ids:
            diff = sorted(set(ids) ^ set(ps.clip_ids()))[:5]
            raise AlignmentError(f"prediction set {i} is not aligned with set 0 (e.g. {diff})")
    weights = spec.resolved_weights(len(prediction_sets))

    cats, vads = [], []
    for ps in prediction_sets:
        cat, vad = ps.matrix(ids)
        cats.append(_stable_sigmoid(cat) if ps.space == LOGIT else cat)
        vads.append(vad)
    cat = _fold(np.stack(cats), spec.scheme, weights)
    vad = _fold(np.stack(vads), spec.scheme, weights)
    log.debug("fused %d prediction sets over %d clips (%s)", len(prediction_sets), len(ids), spec.scheme)

    fused = {cid: Prediction(cat[i], vad[i]) for i, cid in enumerate(ids)}
    return PredictionSet(
        fused,
        space=PROBABILITY,
        model=f"fusion:{spec.scheme}",
        meta={
            "sources": [ps.model for ps in prediction_sets],
            "weights": None if weights is None else weights.tolist(),
        },
    )
