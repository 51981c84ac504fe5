# emotion_ensemble/records.py
"""Plain records shared by models, losses, metrics, fusion and storage."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Mapping

import numpy as np

from .errors import RangeError, ShapeError

NUM_CATEGORIES = 26
NUM_VAD = 3
HEAD_WIDTH = NUM_CATEGORIES + NUM_VAD

LOGIT = "logit"
PROBABILITY = "probability"


@dataclass(frozen=True)
class EmotionAnnotation:
    """26 categorical confidences and 3 VAD values, all in [0, 1]."""

    categorical: np.ndarray
    vad: np.ndarray

    @classmethod
    def validated(cls, categorical, vad, clip_id: str = "?",
                  num_categories: int = NUM_CATEGORIES) -> "EmotionAnnotation":
        cat = np.asarray(categorical, dtype=np.float64)
        v = np.asarray(vad, dtype=np.float64)
        if cat.shape != (num_categories,) or v.shape != (NUM_VAD,):
            raise RangeError(
                f"clip {clip_id}: annotation expects {num_categories} categorical and "
                f"{NUM_VAD} vad values, got {cat.shape} and {v.shape}"
            )
        for label, arr in (("categorical", cat), ("vad", v)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
                raise RangeError(f"clip {clip_id}: {label} values must lie in [0, 1], got {arr.tolist()}")
        return cls(cat, v)

    def binarized(self, threshold: float = 0.5) -> np.ndarray:
        return (self.categorical >= threshold).astype(np.float64)


@dataclass(frozen=True)
class Prediction:
    """Categorical scores (raw logits unless stated otherwise) and regressed VAD."""

    categorical: np.ndarray
    vad: np.ndarray

    @classmethod
    def from_row(cls, row: np.ndarray, num_categories: int = NUM_CATEGORIES) -> "Prediction":
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (num_categories + NUM_VAD,):
            raise ShapeError("prediction row", row.shape, (num_categories + NUM_VAD,))
        return cls(row[:num_categories].copy(), row[num_categories:].copy())

    def as_row(self) -> np.ndarray:
        return np.concatenate([self.categorical, self.vad])


@dataclass
class PredictionSet:
    """Per-clip predictions plus the space the categorical scores live in."""

    predictions: dict[str, Prediction]
    space: str = LOGIT
    model: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.space not in (LOGIT, PROBABILITY):
            raise RangeError(f"unknown score space '{self.space}'")

    def __len__(self) -> int:
        return len(self.predictions)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.predictions))

    def __getitem__(self, clip_id: str) -> Prediction:
        return self.predictions[clip_id]

    def clip_ids(self) -> list[str]:
        return sorted(self.predictions)

    def matrix(self, clip_ids=None) -> tuple[np.ndarray, np.ndarray]:
        """(N, C) categorical and (N, 3) vad arrays in `clip_ids` order."""
        ids = self.clip_ids() if clip_ids is None else list(clip_ids)
        cat = np.stack([self.predictions[c].categorical for c in ids])
        vad = np.stack([self.predictions[c].vad for c in ids])
        return cat, vad


def annotation_matrix(annotations: Mapping[str, EmotionAnnotation], clip_ids) -> tuple[np.ndarray, np.ndarray]:
    cat = np.stack([annotations[c].categorical for c in clip_ids])
    vad = np.stack([annotations[c].vad for c in clip_ids])
    return cat, vad
