# emotion_ensemble/objectives.py
"""
Loss terms for multi-label emotion recognition.

  cat1  MSE between sigmoid(scores) and the raw confidence targets
  cat2  BCE between sigmoid(scores) and targets binarized at 0.5 (ties -> 1)
  cont  MSE on valence / arousal / dominance
  emb   squared distance between a projected feature and the mean word
        embedding of the positive categories

Plain numpy versions are used for reporting; the *_tensor versions feed
backward() during training. Every term is mean-reduced over samples.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .config_loader import LossWeights
from .errors import SchemaError, ShapeError
from .ndcore import functional as F
from .ndcore.tensor import Tensor, _stable_sigmoid, as_tensor, mean, sigmoid
from .records import EmotionAnnotation

log = logging.getLogger(__name__)

POSITIVE_THRESHOLD = 0.5


def binarize(gt: np.ndarray, threshold: float = POSITIVE_THRESHOLD) -> np.ndarray:
    return (np.asarray(gt) >= threshold).astype(np.float64)


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


# ---------- embedding table ----------

@dataclass(frozen=True)
class EmbeddingTable:
    labels: tuple[str, ...]
    vectors: np.ndarray  # (num_labels, dim)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[float]],
                     categories: Optional[Sequence[str]] = None, dim: int = 300) -> "EmbeddingTable":
        labels = tuple(categories) if categories is not None else tuple(mapping)
        missing = [c for c in labels if c not in mapping]
        if missing:
            raise SchemaError(f"embedding table is missing categories: {missing}")
        vectors = np.stack([np.asarray(mapping[c], dtype=np.float64) for c in labels])
        if vectors.shape[1] != dim:
            raise SchemaError(f"embedding width must be {dim}, got {vectors.shape[1]}")
        return cls(labels, vectors)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def vector(self, label: str) -> np.ndarray:
        return self.vectors[self.labels.index(label)]

    def restricted(self, categories: Sequence[str]) -> "EmbeddingTable":
        """Table in `categories` order (used to align with a dataset vocabulary)."""
        return EmbeddingTable.from_mapping(dict(zip(self.labels, self.vectors)), categories, self.dim)


def positive_mean_embeddings(
    targets: np.ndarray, table: EmbeddingTable, threshold: float = POSITIVE_THRESHOLD
) -> tuple[np.ndarray, np.ndarray]:
    """
    (N, dim) mean embedding of each sample's positive labels and an (N,) mask
    that is False where a sample has no positive label.
    """
    pos = binarize(np.atleast_2d(targets), threshold)
    if pos.shape[1] != len(table.labels):
        raise ShapeError("positive_mean_embeddings", pos.shape, table.vectors.shape)
    counts = pos.sum(axis=1)
    valid = counts > 0
    means = (pos @ table.vectors) / np.maximum(counts, 1.0)[:, None]
    skipped = int((~valid).sum())
    if skipped:
        log.debug("embedding loss: %d sample(s) without positive labels skipped", skipped)
    return means, valid


# ---------- numpy losses ----------

def loss_cat1(scores, gt) -> float:
    s, g = np.asarray(scores, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _same_shape("loss_cat1", s, g)
    return float(np.mean((_stable_sigmoid(s) - g) ** 2))


def loss_cat2(scores, gt, threshold: float = POSITIVE_THRESHOLD) -> float:
    x, g = np.asarray(scores, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _same_shape("loss_cat2", x, g)
    t = binarize(g, threshold)
    return float(np.mean(np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))))


def loss_cont(pred_vad, gt_vad) -> float:
    p, g = np.asarray(pred_vad, dtype=np.float64), np.asarray(gt_vad, dtype=np.float64)
    _same_shape("loss_cont", p, g)
    return float(np.mean((p - g) ** 2))


@dataclass
class SkipCounter:
    count: int = 0


def loss_emb(projected, gt: EmotionAnnotation, table: EmbeddingTable,
             counter: Optional[SkipCounter] = None, threshold: float = POSITIVE_THRESHOLD) -> float:
    """||projected - mean(positive embeddings)||^2; 0 (and counted) without positives."""
    p = np.asarray(projected, dtype=np.float64)
    if p.shape != (table.dim,):
        raise ShapeError("loss_emb", p.shape, (table.dim,))
    target, valid = positive_mean_embeddings(gt.categorical[None, :], table, threshold)
    if not valid[0]:
        if counter is not None:
            counter.count += 1
        return 0.0
    return float(np.sum((p - target[0]) ** 2))


@dataclass(frozen=True)
class LossParts:
    cat1: float = 0.0
    cat2: float = 0.0
    cont: float = 0.0
    emb: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {"cat1": self.cat1, "cat2": self.cat2, "cont": self.cont, "emb": self.emb}


def combined_loss(parts: LossParts, include_embedding: bool,
                  weights: LossWeights = LossWeights()) -> float:
    total = weights.cat1 * parts.cat1 + weights.cat2 * parts.cat2 + weights.cont * parts.cont
    if include_embedding:
        total += weights.emb * parts.emb
    return float(total)


# ---------- tensor losses ----------

def loss_cat1_tensor(scores: Tensor, gt: np.ndarray) -> Tensor:
    return F.mse(sigmoid(scores), as_tensor(gt, scores))


def loss_cat2_tensor(scores: Tensor, gt: np.ndarray, threshold: float = POSITIVE_THRESHOLD) -> Tensor:
    return F.bce_with_logits(scores, as_tensor(binarize(gt, threshold), scores))


def loss_cont_tensor(pred_vad: Tensor, gt_vad: np.ndarray) -> Tensor:
    return F.mse(pred_vad, as_tensor(gt_vad, pred_vad))


def loss_emb_tensor(projected: Tensor, target: np.ndarray, valid: np.ndarray) -> Optional[Tensor]:
    """
    projected (N, dim) or per-snippet (N, K, dim); target (N, dim).
    Squared distance per snippet, averaged over snippets, then over the valid
    samples. None when no sample in the batch has a positive label.
    """
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        return None
    if projected.ndim == 2:
        diff = projected - as_tensor(target, projected)
        per_sample = diff * diff
        per_sample = per_sample.sum(axis=1)
    elif projected.ndim == 3:
        diff = projected - as_tensor(target[:, None, :], projected)
        per_sample = mean((diff * diff).sum(axis=2), axis=1)
    else:
        raise ShapeError("loss_emb", projected.shape, target.shape)
    weight = valid.astype(np.float64) / valid.sum()
    return (per_sample * as_tensor(weight, projected)).sum()


def training_loss(
    cat_scores: Tensor,
    vad: Tensor,
    gt_cat: np.ndarray,
    gt_vad: np.ndarray,
    *,
    weights: LossWeights = LossWeights(),
    projected: Optional[Tensor] = None,
    table: Optional[EmbeddingTable] = None,
) -> tuple[Tensor, LossParts, int]:
    """
    Weighted sum of the loss terms as one differentiable scalar, the detached
    parts, and the number of samples whose embedding term was skipped.
    The embedding term is used only when `projected` and `table` are given.
    """
    l1 = loss_cat1_tensor(cat_scores, gt_cat)
    l2 = loss_cat2_tensor(cat_scores, gt_cat)
    l3 = loss_cont_tensor(vad, gt_vad)
    total = l1 * weights.cat1 + l2 * weights.cat2 + l3 * weights.cont

    emb_value, skipped = 0.0, 0
    if projected is not None and table is not None:
        target, valid = positive_mean_embeddings(gt_cat, table)
        skipped = int((~valid).sum())
        l4 = loss_emb_tensor(projected, target, valid)
        if l4 is not None:
            total = total + l4 * weights.emb
            emb_value = l4.item()
    parts = LossParts(l1.item(), l2.item(), l3.item(), emb_value)
    return total, parts, skipped
