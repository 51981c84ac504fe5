# emotion_ensemble/synthetic.py
"""
Desk-scale synthetic dataset with two separable "emotions".

  waving   arms swing up and down      -> category 0, high valence / arousal
  swaying  whole body drifts sideways  -> category 1, low valence / arousal

Everything a run needs is written: skeleton clips with annotations, rgb and
flow feature files, an embedding table, scene / attribute weights and a
manifest with train / val splits.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config_loader import load_app_config
from .dataio import SkeletonSequence, compute_t_max
from .objectives import EmbeddingTable
from .records import NUM_VAD, EmotionAnnotation
from .storage import (
    Manifest,
    feature_path,
    save_embedding_table,
    save_feature_file,
    save_manifest,
    save_scene_weights,
    save_skeleton_dataset,
)
from .tsn import NUM_ATTRIBUTES, NUM_SCENES, STREAM_WIDTH, SceneAttrWeights

log = logging.getLogger(__name__)

EMOTIONS = ("waving", "swaying")
VAD_BY_EMOTION = {"waving": (0.8, 0.7, 0.6), "swaying": (0.2, 0.3, 0.4)}

# bold18 rest pose in pixels (x, y)
REST_POSE = np.array([
    (100, 40), (100, 70), (80, 70), (70, 100), (65, 130), (120, 70), (130, 100), (135, 130),
    (90, 140), (90, 180), (90, 220), (110, 140), (110, 180), (110, 220),
    (95, 35), (105, 35), (90, 38), (110, 38),
], dtype=np.float64)
ARM_JOINTS = (3, 4, 6, 7)


def _motion(emotion: str, num_frames: int, rng: np.random.Generator) -> np.ndarray:
    """(3, T, 18) pixel-space joints."""
    t = np.arange(num_frames)
    phase = rng.uniform(0, 2 * np.pi)
    xy = np.repeat(REST_POSE[None], num_frames, axis=0)  # (T, V, 2)
    if emotion == "waving":
        swing = 35.0 * np.sin(2 * np.pi * t / 6.0 + phase)
        for j in ARM_JOINTS:
            scale = 1.0 if j in (4, 7) else 0.5
            xy[:, j, 1] -= scale * (swing + 40.0)
    else:
        drift = 25.0 * np.sin(2 * np.pi * t / max(num_frames, 2) + phase)
        xy[:, :, 0] += drift[:, None]
    xy += rng.normal(0.0, 1.0, size=xy.shape)
    conf = np.clip(rng.uniform(0.7, 1.0, size=(num_frames, 18)), 0.0, 1.0)
    return np.concatenate([np.moveaxis(xy, 2, 0), conf[None]], axis=0)


def _annotation(emotion: str, num_categories: int, rng: np.random.Generator) -> EmotionAnnotation:
    cat = rng.uniform(0.0, 0.2, size=num_categories)
    cat[EMOTIONS.index(emotion)] = rng.uniform(0.8, 1.0)
    vad = np.asarray(VAD_BY_EMOTION[emotion]) + rng.uniform(-0.05, 0.05, size=NUM_VAD)
    return EmotionAnnotation.validated(cat, np.clip(vad, 0.0, 1.0), num_categories=num_categories)


def make_synthetic_clips(num_clips: int = 20, num_frames: int = 16, seed: int = 0,
                         num_categories: Optional[int] = None,
                         fixed_length: bool = False) -> list[SkeletonSequence]:
    """Alternating waving / swaying clips; lengths vary in [num_frames // 2, num_frames] unless fixed."""
    rng = np.random.default_rng(seed)
    n_cat = num_categories or len(load_app_config().categories)
    clips = []
    for i in range(num_clips):
        emotion = EMOTIONS[i % 2]
        length = num_frames if fixed_length else int(rng.integers(max(1, num_frames // 2), num_frames + 1))
        clips.append(SkeletonSequence(f"clip{i:04d}", _motion(emotion, length, rng), _annotation(emotion, n_cat, rng)))
    return clips


def _emotion_of(seq: SkeletonSequence) -> int:
    return int(np.argmax(seq.annotation.categorical[: len(EMOTIONS)]))


def _features(seq: SkeletonSequence, modality: str, centers: np.ndarray,
              rng: np.random.Generator) -> tuple[dict, np.ndarray]:
    t = seq.num_frames
    label = _emotion_of(seq)
    streams = {}
    names = ("body", "context", "face", "scene") if modality == "rgb" else ("body", "context", "face")
    for k, name in enumerate(names):
        base = centers[label, k] if name != "scene" else centers[label, k] * 0.5
        streams[name] = (base[None, :] + rng.normal(0.0, 0.5, size=(t, STREAM_WIDTH))).astype(np.float32)
    face_present = rng.random(t) > 0.2
    return streams, face_present


def make_synthetic_dataset(out_dir: Path, num_clips: int = 20, num_frames: int = 16, seed: int = 0,
                           val_every: int = 5, categories: Optional[Sequence[str]] = None) -> Path:
    """Write a complete synthetic dataset under `out_dir` and return the manifest path."""
    out_dir = Path(out_dir)
    app = load_app_config()
    cats = tuple(categories) if categories is not None else app.categories
    rng = np.random.default_rng(seed + 1)

    clips = make_synthetic_clips(num_clips, num_frames, seed, len(cats))
    ids = [c.clip_id for c in clips]
    val = [cid for i, cid in enumerate(ids) if val_every and i % val_every == val_every - 1]
    train = [cid for cid in ids if cid not in val]

    save_skeleton_dataset(out_dir / "skeletons.json", clips)

    centers = rng.normal(0.0, 1.0, size=(len(EMOTIONS), 4, STREAM_WIDTH))
    features_dir = out_dir / "features"
    for modality in ("rgb", "flow"):
        for seq in clips:
            streams, present = _features(seq, modality, centers, rng)
            save_feature_file(feature_path(features_dir, modality, seq.clip_id), seq.clip_id, modality,
                              streams, present)

    table = EmbeddingTable(tuple(cats), rng.normal(0.0, 0.1, size=(len(cats), app.embedding_dim)))
    save_embedding_table(out_dir / "embeddings.txt", table)
    save_scene_weights(out_dir / "scene_weights.npz",
                       SceneAttrWeights(rng.normal(0.0, 0.05, size=(STREAM_WIDTH, NUM_SCENES)),
                                        rng.normal(0.0, 0.05, size=(STREAM_WIDTH, NUM_ATTRIBUTES))))

    manifest = Manifest(
        categories=tuple(cats),
        t_max=compute_t_max(clips),
        splits={"train": train, "val": val},
        paths={
            "skeletons": "skeletons.json",
            "features": "features",
            "embeddings": "embeddings.txt",
            "scene_weights": "scene_weights.npz",
        },
    )
    manifest_path = out_dir / "manifest.yaml"
    save_manifest(manifest_path, manifest)
    log.info("synthetic dataset: %d clips (%d train / %d val) -> %s", len(clips), len(train), len(val), out_dir)
    return manifest_path
