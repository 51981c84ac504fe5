# emotion_ensemble/dataio.py
"""
Skeleton and optical-flow transforms applied before the models see data.

Skeleton arrays are (3, T, V): x, y, detection confidence per frame and joint.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .config_loader import AugmentCfg
from .errors import EmptyInputError, RangeError, ShapeError
from .records import EmotionAnnotation

log = logging.getLogger(__name__)

FLOW_FIELDS = 5
FLOW_BOUND = 20.0


@dataclass(frozen=True)
class SkeletonSequence:
    clip_id: str
    joints: np.ndarray  # (3, T, V)
    annotation: Optional[EmotionAnnotation] = None

    def __post_init__(self):
        j = self.joints
        if j.ndim != 3 or j.shape[0] != 3 or j.shape[1] < 1:
            raise ShapeError(f"clip {self.clip_id}", j.shape, (3, "T>=1", "V"))

    @property
    def num_frames(self) -> int:
        return int(self.joints.shape[1])

    @property
    def num_joints(self) -> int:
        return int(self.joints.shape[2])

    def with_joints(self, joints: np.ndarray) -> "SkeletonSequence":
        return replace(self, joints=joints)


def _joints(seq: Union[SkeletonSequence, np.ndarray]) -> np.ndarray:
    return seq.joints if isinstance(seq, SkeletonSequence) else np.asarray(seq)


# ---------- normalization ----------

def frame_boxes(joints: np.ndarray) -> np.ndarray:
    """(T, 4) [x_min, y_min, x_max, y_max] over detected joints; NaN rows for empty frames."""
    x, y, conf = joints[0], joints[1], joints[2]
    detected = conf > 0
    if not detected.any():
        detected = np.ones_like(conf, dtype=bool)
    boxes = np.full((joints.shape[1], 4), np.nan)
    for t in range(joints.shape[1]):
        m = detected[t]
        if m.any():
            boxes[t] = (x[t, m].min(), y[t, m].min(), x[t, m].max(), y[t, m].max())
    return boxes


def largest_box(joints: np.ndarray) -> np.ndarray:
    boxes = frame_boxes(joints)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    areas = np.where(np.isnan(areas), -1.0, areas)
    return boxes[int(np.argmax(areas))]


def normalize_joints(seq: SkeletonSequence) -> SkeletonSequence:
    """
    Map x, y into [0, 1] with the largest-area per-frame joint box of the
    sequence: subtract its min corner, divide by its width / height, clamp.
    A zero-extent axis is divided by 1 instead.
    """
    joints = np.array(seq.joints, dtype=np.float64)
    x0, y0, x1, y1 = largest_box(joints)
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        axes = [a for a, size in (("x", w), ("y", h)) if size <= 0]
        log.warning("clip %s: degenerate joint bounding box on axis %s; not scaled",
                    seq.clip_id, "/".join(axes))
    joints[0] = np.clip((joints[0] - x0) / (w if w > 0 else 1.0), 0.0, 1.0)
    joints[1] = np.clip((joints[1] - y0) / (h if h > 0 else 1.0), 0.0, 1.0)
    joints[2] = np.clip(joints[2], 0.0, 1.0)
    return seq.with_joints(joints)


# ---------- padding ----------

def pad_sequence(seq: Union[SkeletonSequence, np.ndarray], t_max: int, mode: str = "eval",
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """
    Zero-pad to (3, t_max, V). Eval keeps the data at the start; train
    places it at a uniformly random offset in [0, t_max - T].
    """
    joints = _joints(seq)
    c, t, v = joints.shape
    if t > t_max:
        raise ShapeError("pad_sequence", joints.shape, (c, t_max, v), detail=f"T={t} exceeds T_max={t_max}")
    offset = 0
    if mode == "train" and t < t_max:
        if rng is None:
            raise ValueError("train-mode padding needs a random generator")
        offset = int(rng.integers(0, t_max - t + 1))
    out = np.zeros((c, t_max, v), dtype=joints.dtype)
    out[:, offset:offset + t] = joints
    return out


def compute_t_max(sequences: Sequence[Union[SkeletonSequence, np.ndarray]]) -> int:
    if not sequences:
        raise EmptyInputError("cannot compute T_max of an empty split")
    return max(_joints(s).shape[1] for s in sequences)


# ---------- affine augmentation ----------

def interpolate_anchors(values: np.ndarray, num_frames: int) -> np.ndarray:
    """Linear interpolation of per-anchor values over evenly spaced anchor frames."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 1 or num_frames == 1:
        return np.full(num_frames, values[0])
    anchor_frames = np.linspace(0, num_frames - 1, len(values))
    return np.interp(np.arange(num_frames), anchor_frames, values)


def apply_affine(joints: np.ndarray, rotation_deg: np.ndarray, scale: np.ndarray,
                 translation: np.ndarray, center: tuple[float, float] = (0.5, 0.5)) -> np.ndarray:
    """
    Per-frame x' = s R(theta) (x - c) + c + t on detected joints; confidences
    untouched; results clamped to [0, 1].
    """
    out = np.array(joints, dtype=np.float64)
    theta = np.radians(rotation_deg)[:, None]
    cos, sin = np.cos(theta), np.sin(theta)
    s = np.asarray(scale, dtype=np.float64)[:, None]
    tr = np.asarray(translation, dtype=np.float64)
    dx, dy = out[0] - center[0], out[1] - center[1]
    x = s * (cos * dx - sin * dy) + center[0] + tr[:, 0:1]
    y = s * (sin * dx + cos * dy) + center[1] + tr[:, 1:2]
    detected = out[2] > 0
    out[0] = np.where(detected, np.clip(x, 0.0, 1.0), out[0])
    out[1] = np.where(detected, np.clip(y, 0.0, 1.0), out[1])
    return out


def random_affine(seq: SkeletonSequence, params: AugmentCfg, rng: np.random.Generator,
                  anchors: Optional[int] = None) -> SkeletonSequence:
    """
    Rotation, isotropic scale and translation drawn at `anchors` evenly
    spaced frames and interpolated linearly in between (smooth camera motion).
    """
    if params.max_rotation_deg == 0 and params.max_scale_delta == 0 and params.max_translation == 0:
        return seq
    k = max(1, int(anchors if anchors is not None else params.anchors))
    t = seq.num_frames
    rot = rng.uniform(-params.max_rotation_deg, params.max_rotation_deg, size=k)
    scale = 1.0 + rng.uniform(-params.max_scale_delta, params.max_scale_delta, size=k)
    shift = rng.uniform(-params.max_translation, params.max_translation, size=(k, 2))
    translation = np.stack([interpolate_anchors(shift[:, 0], t), interpolate_anchors(shift[:, 1], t)], axis=1)
    joints = apply_affine(seq.joints, interpolate_anchors(rot, t), interpolate_anchors(scale, t), translation)
    return seq.with_joints(joints)


# ---------- face box ----------

def head_bbox(seq: Union[SkeletonSequence, np.ndarray], head_joints: Sequence[int],
              min_confidence: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """
    Per-frame smallest box (x_min, y_min, x_max, y_max) around the detected
    head joints, and a presence flag; frames without any are marked absent.
    """
    joints = _joints(seq)
    idx = np.asarray(head_joints, dtype=np.int64)
    if idx.size == 0:
        raise ShapeError("head_bbox", joints.shape, detail="no head joints given")
    x, y, conf = joints[0][:, idx], joints[1][:, idx], joints[2][:, idx]
    detected = conf > min_confidence
    present = detected.any(axis=1)
    boxes = np.zeros((joints.shape[1], 4))
    for t in np.nonzero(present)[0]:
        m = detected[t]
        boxes[t] = (x[t, m].min(), y[t, m].min(), x[t, m].max(), y[t, m].max())
    return boxes, present


# ---------- optical flow ----------

@dataclass(frozen=True)
class FlowVolume:
    """(10, H, W): [h1, v1, ..., h5, v5] displacement planes."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 2 * FLOW_FIELDS:
            raise ShapeError("flow volume", self.data.shape, (2 * FLOW_FIELDS, "H", "W"))

    def field(self, i: int) -> np.ndarray:
        return self.data[2 * i:2 * i + 2]


def discretize_flow(field: np.ndarray, bound: float = FLOW_BOUND) -> np.ndarray:
    """Displacements in [-bound, bound] -> uint8 [0, 255], clamped outside."""
    if bound <= 0:
        raise RangeError(f"flow bound must be > 0, got {bound}")
    f = np.clip(np.asarray(field, dtype=np.float64), -bound, bound)
    return np.round((f + bound) * (255.0 / (2.0 * bound))).astype(np.uint8)


def stack_flow(fields: Sequence[np.ndarray]) -> FlowVolume:
    """
    Stack L=5 consecutive (2, H, W) flow fields into a 10-channel volume.
    Near the clip end fewer fields exist; the last one is then repeated.
    """
    if len(fields) == 0:
        raise EmptyInputError("stack_flow needs at least one flow field")
    if len(fields) > FLOW_FIELDS:
        raise ShapeError("stack_flow", (len(fields),), (FLOW_FIELDS,), detail="too many flow fields")
    arrays = [np.asarray(f) for f in fields]
    shape = arrays[0].shape
    if len(shape) != 3 or shape[0] != 2:
        raise ShapeError("stack_flow", shape, (2, "H", "W"))
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeError("stack_flow", shape, a.shape)
    if len(arrays) < FLOW_FIELDS:
        log.debug("stack_flow: %d field(s) available, repeating the last", len(arrays))
        arrays = arrays + [arrays[-1]] * (FLOW_FIELDS - len(arrays))
    return FlowVolume(np.concatenate(arrays, axis=0))
