# emotion_ensemble/tsn.py
"""
Temporal segment network on precomputed per-frame feature streams.

A clip is split into K segments, one snippet is drawn per segment, each
snippet's stream features are concatenated (plus scene / attribute
probabilities on rgb) and passed through linear heads. Video-level scores
are the average of the raw snippet scores.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .config_loader import TSN_STREAMS, AppCfg, TsnCfg, load_app_config
from .errors import ConfigError, EmptyInputError, SchemaError, ShapeError
from .ndcore.layers import BatchNorm, Dropout, Linear, Module
from .ndcore.tensor import Tensor, as_tensor, concat, mean, no_grad
from .records import NUM_CATEGORIES, NUM_VAD, Prediction

log = logging.getLogger(__name__)

MODALITIES = ("rgb", "flow")
STREAM_WIDTH = 512
_app = load_app_config()
NUM_SCENES = _app.num_scenes
NUM_ATTRIBUTES = _app.num_attributes
EMBEDDING_DIM = _app.embedding_dim


# ---------- segment sampling ----------

def segment_bounds(num_frames: int, k: int) -> list[tuple[int, int]]:
    """[start, end) of K contiguous near-equal segments (num_frames >= k)."""
    edges = [(i * num_frames) // k for i in range(k + 1)]
    return list(zip(edges[:-1], edges[1:]))


def segment_sample(num_frames: int, k: int, mode: str = "eval",
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    One frame index per segment: uniformly random in train mode, the lower
    median of the segment in eval mode. With fewer frames than segments the
    indices are clamped to the last frame.
    """
    if k < 1:
        raise EmptyInputError(f"number of segments must be >= 1, got {k}")
    if num_frames < 1:
        raise EmptyInputError("clip has no frames")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown sampling mode '{mode}'")
    if num_frames < k:
        return np.minimum(np.arange(k), num_frames - 1)

    bounds = segment_bounds(num_frames, k)
    if mode == "eval":
        return np.array([s + (e - s - 1) // 2 for s, e in bounds], dtype=np.int64)
    if rng is None:
        raise ConfigError("train-mode sampling needs a random generator")
    return np.array([rng.integers(s, e) for s, e in bounds], dtype=np.int64)


# ---------- scene / attribute head ----------

@dataclass(frozen=True)
class SceneAttrWeights:
    w_scenes: np.ndarray  # (512, 365)
    w_attr: np.ndarray  # (512, 102)

    def __post_init__(self):
        for label, arr, cols in (("W_scenes", self.w_scenes, NUM_SCENES), ("W_attr", self.w_attr, NUM_ATTRIBUTES)):
            if arr.shape != (STREAM_WIDTH, cols):
                raise SchemaError(f"{label} must be ({STREAM_WIDTH}, {cols}), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"{label} contains non-finite entries")

    @classmethod
    def zeros(cls) -> "SceneAttrWeights":
        return cls(np.zeros((STREAM_WIDTH, NUM_SCENES)), np.zeros((STREAM_WIDTH, NUM_ATTRIBUTES)))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def scene_attr_scores(feature: np.ndarray, w: SceneAttrWeights) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise softmax(feature @ W_scenes), softmax(feature @ W_attr); leading axes kept."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape[-1] != STREAM_WIDTH:
        raise ShapeError("scene_attr_scores", f.shape, w.w_scenes.shape)
    return _softmax_rows(f @ w.w_scenes), _softmax_rows(f @ w.w_attr)


# ---------- concatenation ----------

@dataclass
class SnippetFeatureSet:
    """Stream name -> feature array whose last axis is the stream width."""

    streams: dict[str, np.ndarray]
    modality: str = "rgb"
    face_present: Optional[np.ndarray] = None  # False -> face stream read as zeros


def concat_width(modality: str, streams: Sequence[str] = TSN_STREAMS, scenes: bool = True,
                 attributes: bool = True) -> int:
    width = STREAM_WIDTH * len(streams)
    if modality == "rgb":
        width += NUM_SCENES * scenes + NUM_ATTRIBUTES * attributes
    return width


def concat_streams(
    features: SnippetFeatureSet,
    scene_probs: Optional[np.ndarray] = None,
    attr_probs: Optional[np.ndarray] = None,
    streams: Sequence[str] = TSN_STREAMS,
) -> np.ndarray:
    """body | context | face | scenes | attributes, restricted to the active parts."""
    parts = []
    for name in TSN_STREAMS:
        if name not in streams:
            continue
        if name not in features.streams:
            raise SchemaError(f"missing feature stream '{name}' ({features.modality})")
        arr = np.asarray(features.streams[name], dtype=np.float64)
        if arr.shape[-1] != STREAM_WIDTH:
            raise SchemaError(f"stream '{name}' has width {arr.shape[-1]}, expected {STREAM_WIDTH}")
        if name == "face" and features.face_present is not None:
            arr = np.where(np.asarray(features.face_present, dtype=bool)[..., None], arr, 0.0)
        parts.append(arr)
    if features.modality == "rgb":
        parts.extend(p for p in (scene_probs, attr_probs) if p is not None)
    return np.concatenate(parts, axis=-1)


# ---------- model ----------

class TsnModel(Module):
    """
    Optional per-stream BN on the 512-d inputs, dropout, and three linear
    maps from the concatenated snippet vector: categorical (26), VAD (3) and
    the bias-free embedding projection W_emb (300).
    """

    def __init__(
        self,
        modality: str,
        rng: np.random.Generator,
        *,
        streams: Sequence[str] = TSN_STREAMS,
        scenes: bool = True,
        attributes: bool = True,
        stream_bn: bool = True,
        dropout: float = 0.5,
        num_categories: int = NUM_CATEGORIES,
        embedding_dim: int = EMBEDDING_DIM,
    ):
        super().__init__()
        if modality not in MODALITIES:
            raise ConfigError(f"unknown modality '{modality}'")
        if modality == "flow" and (scenes or attributes):
            log.debug("tsn: scene / attribute probabilities apply to rgb only; disabled for flow")
            scenes = attributes = False
        self.modality = modality
        self.streams = tuple(s for s in TSN_STREAMS if s in streams)
        if not self.streams:
            raise ConfigError("tsn needs at least one feature stream")
        self.scenes = scenes
        self.attributes = attributes
        self.width = concat_width(modality, self.streams, scenes, attributes)

        self.stream_bns = [BatchNorm(STREAM_WIDTH) for _ in self.streams] if stream_bn else []
        self.drop = Dropout(dropout, rng)
        self.cat_head = Linear(self.width, num_categories, rng)
        self.vad_head = Linear(self.width, NUM_VAD, rng)
        self.w_emb = Linear(self.width, embedding_dim, rng, bias=False)

    @classmethod
    def from_config(cls, cfg: TsnCfg, modality: str, rng: np.random.Generator,
                    app: Optional[AppCfg] = None) -> "TsnModel":
        app = app or load_app_config()
        return cls(
            modality, rng,
            streams=cfg.streams,
            scenes=cfg.scenes,
            attributes=cfg.attributes,
            stream_bn=cfg.stream_bn,
            dropout=cfg.dropout,
            num_categories=len(app.categories),
            embedding_dim=app.embedding_dim,
        )

    def _normalize_streams(self, x: Tensor) -> Tensor:
        if not self.stream_bns:
            return x
        parts = []
        for i, bn in enumerate(self.stream_bns):
            parts.append(bn(x[:, i * STREAM_WIDTH:(i + 1) * STREAM_WIDTH]))
        tail = len(self.streams) * STREAM_WIDTH
        if tail < self.width:
            parts.append(x[:, tail:])
        return concat(parts, axis=1)

    def forward_snippets(self, x) -> tuple[Tensor, Tensor, Tensor]:
        """(N, K, width) -> per-snippet (N, K, 26), (N, K, 3), (N, K, 300)."""
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[2] != self.width:
            raise ShapeError("tsn input", x.shape, ("N", "K", self.width))
        n, k, _ = x.shape
        h = self.drop(self._normalize_streams(x.reshape(n * k, self.width)))
        cat = self.cat_head(h).reshape(n, k, -1)
        vad = self.vad_head(h).reshape(n, k, -1)
        emb = self.w_emb(h).reshape(n, k, -1)
        return cat, vad, emb

    def forward(self, x) -> tuple[Tensor, Tensor, Tensor]:
        """Video-level categorical and VAD scores (average consensus) plus per-snippet embeddings."""
        cat, vad, emb = self.forward_snippets(x)
        return mean(cat, axis=1), mean(vad, axis=1), emb

    def predict(self, batch: np.ndarray) -> list[Prediction]:
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                cat, vad, _ = self.forward(Tensor(batch))
        finally:
            self.train(was_training)
        return [Prediction(c.astype(np.float64), v.astype(np.float64)) for c, v in zip(cat.data, vad.data)]


def snippet_predict(model: TsnModel, concat_vec: np.ndarray) -> Prediction:
    vec = np.asarray(concat_vec)
    if vec.shape != (model.width,):
        raise ShapeError("snippet_predict", vec.shape, (model.width,))
    return model.predict(vec[None, None, :])[0]


def embed_project(model: TsnModel, concat_vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(concat_vec)
    if vec.shape != (model.width,):
        raise ShapeError("embed_project", vec.shape, (model.width,))
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            _, _, emb = model.forward_snippets(Tensor(vec[None, None, :]))
    finally:
        model.train(was_training)
    return emb.data[0, 0].astype(np.float64)


def consensus(preds: Sequence[Prediction], fn: str = "average") -> Prediction:
    """Elementwise mean of raw snippet scores."""
    if not preds:
        raise EmptyInputError("consensus needs at least one snippet prediction")
    if fn != "average":
        raise ConfigError(f"unsupported consensus function '{fn}'")
    cat = np.stack([p.categorical for p in preds])
    vad = np.stack([p.vad for p in preds])
    return Prediction(cat.mean(axis=0), vad.mean(axis=0))


# ---------- clip assembly ----------

def snippet_matrix(
    frames: Mapping[str, np.ndarray],
    indices: np.ndarray,
    model: TsnModel,
    weights: Optional[SceneAttrWeights] = None,
    face_present: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    (K, width) concatenated snippet vectors for one clip. `frames` maps stream
    name to per-frame features (T, 512); rgb clips also carry a 'scene' stream
    when the scene / attribute head is active. Snippets whose frame has no
    face (`face_present` False) get a zero face vector.
    """
    picked = {name: np.asarray(arr)[indices] for name, arr in frames.items()}
    present = None if face_present is None else np.asarray(face_present, dtype=bool)[indices]
    scene_p = attr_p = None
    if model.modality == "rgb" and (model.scenes or model.attributes):
        if "scene" not in picked:
            raise SchemaError("rgb features need a 'scene' stream for scene / attribute scores")
        if weights is None:
            raise SchemaError("scene / attribute weights are required for the rgb model")
        s, a = scene_attr_scores(picked["scene"], weights)
        scene_p = s if model.scenes else None
        attr_p = a if model.attributes else None
    return concat_streams(SnippetFeatureSet(picked, model.modality, present), scene_p, attr_p, model.streams)
