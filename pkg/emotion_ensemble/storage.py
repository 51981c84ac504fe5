# emotion_ensemble/storage.py
"""
Files on disk: the app directory plus every dataset and artifact format.

  skeleton dataset / annotations / predictions / reports   JSON
  dataset manifest                                          YAML
  embedding table                                           text, "label v1 ... v300"
  feature files / scene weights / checkpoints               .npz with a __header__ entry

Every structured file carries `format_version` and `kind`. Writes are atomic.
"""
from __future__ import annotations

import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Sequence

import numpy as np
import yaml

from .config_loader import TSN_STREAMS, load_app_config
from .dataio import SkeletonSequence
from .errors import FormatVersionError, RangeError, SchemaError, app_home
from .objectives import EmbeddingTable
from .records import NUM_VAD, PROBABILITY, EmotionAnnotation, Prediction, PredictionSet
from .tsn import SceneAttrWeights

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADER_KEY = "__header__"
RUNS_DIRNAME = "runs"


# ---------- path helpers ----------

def get_app_dir() -> Path:
    """
    Per-user data dir:
      ~/.emoens   (or $EMOENS_HOME)
    """
    app_dir = app_home()
    app_dir.mkdir(parents=True, exist_ok=True)
    return app_dir


def get_runs_dir() -> Path:
    d = get_app_dir() / RUNS_DIRNAME
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------- low-level io (atomic) ----------

def _move_into_place(tmp_path: Path, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    shutil.move(str(tmp_path), str(path))


def _tmp_file(path: Path, suffix: str) -> Path:
    fd, name = tempfile.mkstemp(prefix=path.name + ".", suffix=suffix)
    os.close(fd)
    return Path(name)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp_path = _tmp_file(path, ".tmp")
    tmp_path.write_text(text, encoding="utf-8")
    _move_into_place(tmp_path, path)


def _atomic_write_json(path: Path, data: Dict[str, Any]) -> None:
    """
    Write JSON atomically to avoid corrupting files on crash/kill.
    """
    _atomic_write_text(Path(path), json.dumps(data, ensure_ascii=False, indent=2) + "\n")


def _read_json(path: Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None


def _header(kind: str, **extra: Any) -> Dict[str, Any]:
    return {"format_version": FORMAT_VERSION, "kind": kind, **extra}


def _check_header(data: Mapping[str, Any], kind: str, path: Path) -> None:
    if not isinstance(data, Mapping):
        raise SchemaError(f"{path}: expected an object at top level")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"{path}: format_version {version!r} is not supported (expected {FORMAT_VERSION})")
    if data.get("kind") != kind:
        raise SchemaError(f"{path}: expected kind '{kind}', found {data.get('kind')!r}")


def _write_npz(path: Path, arrays: Mapping[str, np.ndarray], header: Dict[str, Any]) -> None:
    if HEADER_KEY in arrays:
        raise SchemaError(f"array name '{HEADER_KEY}' is reserved")
    tmp_path = _tmp_file(Path(path), ".npz")
    with tmp_path.open("wb") as f:
        np.savez(f, **{HEADER_KEY: np.array(json.dumps(header))}, **arrays)
    _move_into_place(tmp_path, Path(path))


def _read_npz(path: Path, kind: str) -> tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (ValueError, OSError) as e:
        raise SchemaError(f"{path}: not a readable .npz container ({e})") from None
    if HEADER_KEY not in arrays:
        raise SchemaError(f"{path}: missing {HEADER_KEY}")
    header = json.loads(str(arrays.pop(HEADER_KEY)))
    _check_header(header, kind, path)
    return header, arrays


# ---------- annotations ----------

def _annotation_record(clip_id: str, ann: EmotionAnnotation) -> Dict[str, Any]:
    return {"clip_id": clip_id, "categorical": ann.categorical.tolist(), "vad": ann.vad.tolist()}


def _parse_annotation(rec: Mapping[str, Any], num_categories: int) -> EmotionAnnotation:
    clip_id = str(rec.get("clip_id", "?"))
    try:
        return EmotionAnnotation.validated(rec["categorical"], rec["vad"], clip_id, num_categories)
    except KeyError as e:
        raise SchemaError(f"clip {clip_id}: annotation lacks field {e}") from None


# ---------- skeleton dataset ----------

def save_skeleton_dataset(path: Path, sequences: Sequence[SkeletonSequence], layout_id: str = "bold18") -> None:
    clips = []
    for seq in sequences:
        rec = {"clip_id": seq.clip_id, "joints": np.asarray(seq.joints, dtype=np.float64).tolist()}
        if seq.annotation is not None:
            rec["annotation"] = _annotation_record(seq.clip_id, seq.annotation)
            del rec["annotation"]["clip_id"]
        clips.append(rec)
    _atomic_write_json(Path(path), {**_header("skeleton_dataset", layout=layout_id), "clips": clips})


def load_skeleton_dataset(path: Path, num_categories: Optional[int] = None) -> list[SkeletonSequence]:
    data = _read_json(path)
    _check_header(data, "skeleton_dataset", Path(path))
    n_cat = num_categories or len(load_app_config().categories)
    out = []
    seen = set()
    for rec in data.get("clips", []):
        clip_id = str(rec.get("clip_id", ""))
        if not clip_id or clip_id in seen:
            raise SchemaError(f"{path}: missing or duplicate clip_id {clip_id!r}")
        seen.add(clip_id)
        joints = np.asarray(rec.get("joints"), dtype=np.float64)
        if joints.ndim != 3 or joints.shape[0] != 3 or joints.shape[1] < 1:
            raise SchemaError(f"clip {clip_id}: joints must be (3, T, V), got {joints.shape}")
        if np.any(joints[2] < 0) or np.any(joints[2] > 1):
            raise RangeError(f"clip {clip_id}: joint confidences must lie in [0, 1]")
        ann = rec.get("annotation")
        annotation = _parse_annotation({"clip_id": clip_id, **ann}, n_cat) if ann is not None else None
        out.append(SkeletonSequence(clip_id, joints, annotation))
    logger.debug("loaded %d skeleton clips from %s", len(out), path)
    return out


# ---------- annotations file ----------

def save_annotations(path: Path, annotations: Mapping[str, EmotionAnnotation]) -> None:
    clips = [_annotation_record(cid, annotations[cid]) for cid in sorted(annotations)]
    _atomic_write_json(Path(path), {**_header("annotations"), "clips": clips})


def load_annotations(path: Path, num_categories: Optional[int] = None) -> Dict[str, EmotionAnnotation]:
    """Annotations from an annotations file or from a skeleton dataset."""
    data = _read_json(path)
    if isinstance(data, Mapping) and data.get("kind") == "skeleton_dataset":
        return {s.clip_id: s.annotation for s in load_skeleton_dataset(path, num_categories)
                if s.annotation is not None}
    _check_header(data, "annotations", Path(path))
    n_cat = num_categories or len(load_app_config().categories)
    return {str(rec["clip_id"]): _parse_annotation(rec, n_cat) for rec in data.get("clips", [])}


# ---------- manifest ----------

@dataclass
class Manifest:
    categories: tuple[str, ...]
    t_max: int
    splits: Dict[str, list[str]]
    paths: Dict[str, str]
    vad_scaling: str = "unit-interval"
    root: Path = field(default=Path("."), compare=False)

    def resolve(self, key: str) -> Path:
        if key not in self.paths:
            raise SchemaError(f"manifest has no path entry '{key}'")
        return (self.root / self.paths[key]).resolve()

    def split(self, name: str) -> list[str]:
        if name not in self.splits:
            raise SchemaError(f"manifest has no split '{name}' (available: {sorted(self.splits)})")
        return list(self.splits[name])


def save_manifest(path: Path, manifest: Manifest) -> None:
    data = {
        **_header("manifest"),
        "categories": list(manifest.categories),
        "vad_scaling": manifest.vad_scaling,
        "t_max": int(manifest.t_max),
        "splits": {k: list(v) for k, v in manifest.splits.items()},
        "paths": dict(manifest.paths),
    }
    _atomic_write_text(Path(path), yaml.safe_dump(data, sort_keys=False))


def load_manifest(path: Path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: manifest not found")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise SchemaError(f"{path}: invalid YAML ({e})") from None
    _check_header(data, "manifest", path)
    missing = [k for k in ("categories", "t_max", "splits", "paths") if k not in data]
    if missing:
        raise SchemaError(f"{path}: manifest lacks {missing}")
    scaling = load_app_config().vad_scaling
    if data.get("vad_scaling", scaling) != scaling:
        raise SchemaError(f"{path}: VAD scaling '{data['vad_scaling']}' is not supported (expected '{scaling}')")
    return Manifest(
        categories=tuple(data["categories"]),
        t_max=int(data["t_max"]),
        splits={k: [str(c) for c in v] for k, v in data["splits"].items()},
        paths={k: str(v) for k, v in data["paths"].items()},
        vad_scaling=data.get("vad_scaling", scaling),
        root=path.parent,
    )


# ---------- feature files ----------

@dataclass
class FeatureFile:
    clip_id: str
    modality: str
    streams: Dict[str, np.ndarray]  # name -> (T, width)
    face_present: np.ndarray  # (T,) bool

    @property
    def num_frames(self) -> int:
        return int(self.face_present.shape[0])


def feature_path(root: Path, modality: str, clip_id: str) -> Path:
    return Path(root) / modality / f"{clip_id}.npz"


def _stream_widths() -> Dict[str, int]:
    return dict(load_app_config().stream_widths)


def _validate_streams(clip_id: str, modality: str, streams: Mapping[str, np.ndarray],
                      expected_frames: Optional[int] = None) -> int:
    widths = _stream_widths()
    frames = expected_frames
    for name, arr in streams.items():
        if name not in widths:
            raise SchemaError(f"clip {clip_id} ({modality}): unknown feature stream '{name}'")
        if arr.ndim != 2 or arr.shape[1] != widths[name]:
            raise SchemaError(
                f"clip {clip_id} ({modality}): stream '{name}' must be (T, {widths[name]}), got {arr.shape}"
            )
        if frames is None:
            frames = arr.shape[0]
        elif arr.shape[0] != frames:
            raise SchemaError(f"clip {clip_id} ({modality}): stream '{name}' has {arr.shape[0]} frames, expected {frames}")
    if frames is None:
        raise SchemaError(f"clip {clip_id} ({modality}): no feature streams")
    return int(frames)


def save_feature_file(path: Path, clip_id: str, modality: str, streams: Mapping[str, np.ndarray],
                      face_present: Optional[np.ndarray] = None) -> None:
    """
    Frames without a face crop are stored as zero vectors in the 'face'
    stream with face_present False. A missing 'face' stream means no frame
    had a face.
    """
    arrays = {k: np.asarray(v) for k, v in streams.items()}
    frames = _validate_streams(clip_id, modality, arrays)
    if "face" not in arrays:
        arrays["face"] = np.zeros((frames, _stream_widths()["face"]), dtype=np.float32)
        face_present = np.zeros(frames, dtype=bool)
    present = np.ones(frames, dtype=bool) if face_present is None else np.asarray(face_present, dtype=bool)
    if present.shape != (frames,):
        raise SchemaError(f"clip {clip_id}: face_present must have {frames} entries, got {present.shape}")
    arrays["face"] = np.where(present[:, None], arrays["face"], 0).astype(arrays["face"].dtype)
    _write_npz(Path(path), {**arrays, "face_present": present},
               _header("features", clip_id=clip_id, modality=modality))


def load_feature_file(path: Path, expected_frames: Optional[int] = None) -> FeatureFile:
    header, arrays = _read_npz(Path(path), "features")
    clip_id = str(header.get("clip_id", "?"))
    modality = str(header.get("modality", "?"))
    present = arrays.pop("face_present", None)
    frames = _validate_streams(clip_id, modality, arrays, expected_frames)
    if present is None:
        present = np.ones(frames, dtype=bool)
    missing = [s for s in TSN_STREAMS if s not in arrays]
    if missing:
        raise SchemaError(f"clip {clip_id} ({modality}): missing streams {missing}")
    return FeatureFile(clip_id, modality, arrays, present.astype(bool))


# ---------- embedding table ----------

def save_embedding_table(path: Path, table: EmbeddingTable) -> None:
    lines = [" ".join([label] + [repr(float(v)) for v in vec]) for label, vec in zip(table.labels, table.vectors)]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")


def load_embedding_table(path: Path, categories: Optional[Sequence[str]] = None, dim: int = 300) -> EmbeddingTable:
    """
    One entry per line: a label followed by `dim` numbers. Labels may contain
    spaces; the last `dim` tokens are the vector.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: embedding table not found")
    mapping: Dict[str, np.ndarray] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < dim + 1:
            raise SchemaError(f"{path}:{lineno}: expected a label and {dim} values, got {len(tokens)} tokens")
        label = " ".join(tokens[:-dim])
        try:
            mapping[label] = np.array([float(t) for t in tokens[-dim:]])
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric embedding value") from None
    wanted = categories if categories is not None else list(mapping)
    return EmbeddingTable.from_mapping(mapping, wanted, dim)


# ---------- scene / attribute weights ----------

def save_scene_weights(path: Path, weights: SceneAttrWeights) -> None:
    _write_npz(Path(path), {"W_scenes": weights.w_scenes, "W_attr": weights.w_attr}, _header("scene_weights"))


def load_scene_weights(path: Path) -> SceneAttrWeights:
    _, arrays = _read_npz(Path(path), "scene_weights")
    try:
        return SceneAttrWeights(arrays["W_scenes"], arrays["W_attr"])
    except KeyError as e:
        raise SchemaError(f"{path}: missing matrix {e}") from None


# ---------- predictions ----------

def save_predictions(path: Path, preds: PredictionSet, categories: Optional[Sequence[str]] = None) -> None:
    records = [
        {"clip_id": cid, "categorical": preds[cid].categorical.tolist(), "vad": preds[cid].vad.tolist()}
        for cid in preds.clip_ids()
    ]
    data = {
        **_header("predictions"),
        "model": preds.model,
        "categorical_space": preds.space,
        "categories": list(categories) if categories is not None else None,
        "meta": preds.meta,
        "predictions": records,
    }
    _atomic_write_json(Path(path), data)


def load_predictions(path: Path) -> PredictionSet:
    data = _read_json(path)
    _check_header(data, "predictions", Path(path))
    preds: Dict[str, Prediction] = {}
    width = None
    for rec in data.get("predictions", []):
        cid = str(rec["clip_id"])
        cat = np.asarray(rec["categorical"], dtype=np.float64)
        vad = np.asarray(rec["vad"], dtype=np.float64)
        width = cat.shape if width is None else width
        if cat.shape != width or vad.shape != (NUM_VAD,):
            raise SchemaError(f"{path}: clip {cid} has malformed score vectors")
        if not (np.all(np.isfinite(cat)) and np.all(np.isfinite(vad))):
            raise RangeError(f"{path}: clip {cid} has non-finite scores")
        if cid in preds:
            raise SchemaError(f"{path}: duplicate clip {cid}")
        preds[cid] = Prediction(cat, vad)
    space = data.get("categorical_space")
    if space == PROBABILITY:
        for cid, p in preds.items():
            if np.any(p.categorical < 0) or np.any(p.categorical > 1):
                raise RangeError(f"{path}: clip {cid} probabilities outside [0, 1]")
    meta = dict(data.get("meta") or {})
    if data.get("categories"):
        meta.setdefault("categories", list(data["categories"]))
    return PredictionSet(preds, space=space, model=str(data.get("model", "")), meta=meta)


# ---------- checkpoints ----------

@dataclass
class Checkpoint:
    state: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: Path, state: Mapping[str, np.ndarray], meta: Optional[Mapping[str, Any]] = None) -> None:
    _write_npz(Path(path), dict(state), _header("checkpoint", meta=dict(meta or {})))


def load_checkpoint(path: Path) -> Checkpoint:
    header, arrays = _read_npz(Path(path), "checkpoint")
    return Checkpoint(arrays, dict(header.get("meta") or {}))


# ---------- reports ----------

def save_report(path: Path, report: Mapping[str, Any]) -> None:
    _atomic_write_json(Path(path), {**_header("report"), **report})


def write_jsonl(path: Path, records: Iterable[Mapping[str, Any]]) -> None:
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    _atomic_write_text(Path(path), text)
