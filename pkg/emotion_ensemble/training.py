# emotion_ensemble/training.py
"""
Training and inference loops behind `emoens train` / `emoens eval`.

A run is deterministic given its config and seed: parameter init, batch
order, augmentation and dropout all draw from generators derived from the
seed, and the per-epoch log carries no timestamps.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np
import yaml

from .config_loader import RunConfig, load_app_config, parse_run_config
from .dataio import SkeletonSequence, normalize_joints, pad_sequence, random_affine
from .errors import EmptyInputError, SchemaError
from .ndcore.layers import Module, set_partial_bn
from .ndcore.optim import SGD, ReduceLROnPlateau
from .ndcore.tensor import Tensor, no_grad
from .objectives import EmbeddingTable, LossParts, training_loss
from .records import LOGIT, NUM_VAD, EmotionAnnotation, Prediction, PredictionSet
from .stgcn import StgcnModel, split_outputs
from .storage import (
    Manifest,
    _atomic_write_text,
    feature_path,
    load_checkpoint,
    load_embedding_table,
    load_feature_file,
    load_manifest,
    load_scene_weights,
    load_skeleton_dataset,
    save_checkpoint,
    write_jsonl,
)
from .tsn import SceneAttrWeights, TsnModel, segment_sample, snippet_matrix

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "best.npz"
LOG_NAME = "train_log.jsonl"
CONFIG_NAME = "config.yaml"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    parts: Dict[str, float] = field(default_factory=dict)
    improved: bool = False


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float


# ---------- data ----------

class SkeletonBatcher:
    """Normalized skeleton clips, padded (and augmented in training) on demand."""

    def __init__(self, sequences: Sequence[SkeletonSequence], t_max: int, cfg: RunConfig):
        self.clips = {s.clip_id: normalize_joints(s) for s in sequences}
        self.t_max = t_max
        self.cfg = cfg

    def inputs(self, ids: Sequence[str], train: bool, rng: np.random.Generator) -> np.ndarray:
        batch = []
        for cid in ids:
            seq = self.clips[cid]
            if train and self.cfg.data.augment:
                seq = random_affine(seq, self.cfg.data.augmentation, rng)
            batch.append(pad_sequence(seq, self.t_max, "train" if train else "eval", rng))
        return np.stack(batch)


class FeatureBatcher:
    """Per-clip feature streams turned into (N, K, width) snippet batches."""

    def __init__(self, manifest: Manifest, ids: Sequence[str], model: TsnModel,
                 weights: Optional[SceneAttrWeights], k_train: int, k_eval: int):
        root = manifest.resolve("features")
        self.model = model
        self.weights = weights
        self.k_train = k_train
        self.k_eval = k_eval
        self.frames: Dict[str, Dict[str, np.ndarray]] = {}
        self.face_present: Dict[str, np.ndarray] = {}
        for cid in ids:
            ff = load_feature_file(feature_path(root, model.modality, cid))
            if ff.clip_id != cid:
                raise SchemaError(f"feature file for {cid} declares clip {ff.clip_id}")
            self.frames[cid] = ff.streams
            self.face_present[cid] = ff.face_present

    def inputs(self, ids: Sequence[str], train: bool, rng: np.random.Generator) -> np.ndarray:
        batch = []
        for cid in ids:
            streams = self.frames[cid]
            num_frames = next(iter(streams.values())).shape[0]
            k = self.k_train if train else self.k_eval
            idx = segment_sample(num_frames, k, "train" if train else "eval", rng)
            batch.append(snippet_matrix(streams, idx, self.model, self.weights, self.face_present[cid]))
        return np.stack(batch)


@dataclass
class RunData:
    manifest: Manifest
    annotations: Dict[str, EmotionAnnotation]
    batcher: Union[SkeletonBatcher, FeatureBatcher]
    table: Optional[EmbeddingTable] = None


def _load_run_data(cfg: RunConfig, manifest: Manifest, model: Module, ids: Sequence[str],
                   require_annotations: bool = False) -> RunData:
    sequences = load_skeleton_dataset(manifest.resolve("skeletons"), len(manifest.categories))
    by_id = {s.clip_id: s for s in sequences}
    missing = [cid for cid in ids if cid not in by_id]
    if missing:
        raise SchemaError(f"clips listed in the manifest are missing from the skeleton file: {missing[:5]}")
    unannotated = [cid for cid in ids if by_id[cid].annotation is None]
    if require_annotations and unannotated:
        raise SchemaError(f"train/val clips without an annotation in the skeleton file: {unannotated[:5]}")
    annotations = {cid: by_id[cid].annotation for cid in ids if by_id[cid].annotation is not None}

    table = None
    if isinstance(model, TsnModel):
        weights = None
        if model.modality == "rgb" and (model.scenes or model.attributes):
            weights = load_scene_weights(manifest.resolve("scene_weights"))
        batcher = FeatureBatcher(manifest, ids, model, weights, cfg.tsn.k_train, cfg.tsn.k_eval)
        if cfg.model.embedding_loss:
            table = load_embedding_table(manifest.resolve("embeddings"), manifest.categories,
                                         load_app_config().embedding_dim)
    else:
        batcher = SkeletonBatcher([by_id[cid] for cid in ids], manifest.t_max, cfg)
    return RunData(manifest, annotations, batcher, table)


# ---------- model ----------

def build_model(cfg: RunConfig, num_categories: int, rng: np.random.Generator) -> Module:
    if cfg.model.is_tsn:
        app = load_app_config()
        model: Module = TsnModel(
            cfg.model.modality, rng,
            streams=cfg.tsn.streams,
            scenes=cfg.tsn.scenes,
            attributes=cfg.tsn.attributes,
            stream_bn=cfg.tsn.stream_bn,
            dropout=cfg.tsn.dropout,
            num_categories=num_categories,
            embedding_dim=app.embedding_dim,
        )
    else:
        model = StgcnModel.from_config(cfg.stgcn, rng, num_outputs=num_categories + NUM_VAD)
    if cfg.model.partial_bn:
        set_partial_bn(model)
    return model


def _forward(model: Module, x: np.ndarray, num_categories: int):
    """(categorical scores, vad, projected embeddings or None)."""
    if isinstance(model, TsnModel):
        return model(Tensor(x))
    out = model(Tensor(x))
    return out[:, :num_categories], out[:, num_categories:], None


def _batch_loss(model: Module, data: RunData, ids: Sequence[str], train: bool, cfg: RunConfig,
                rng: np.random.Generator):
    num_categories = len(data.manifest.categories)
    x = data.batcher.inputs(ids, train, rng)
    gt_cat = np.stack([data.annotations[c].categorical for c in ids])
    gt_vad = np.stack([data.annotations[c].vad for c in ids])
    cat, vad, emb = _forward(model, x, num_categories)
    use_emb = cfg.model.embedding_loss and emb is not None
    return training_loss(
        cat, vad, gt_cat, gt_vad,
        weights=cfg.model.loss_weights,
        projected=emb if use_emb else None,
        table=data.table if use_emb else None,
    )


def _batches(ids: Sequence[str], size: int) -> list[list[str]]:
    return [list(ids[i:i + size]) for i in range(0, len(ids), size)]


def _evaluate_loss(model: Module, data: RunData, ids: Sequence[str], cfg: RunConfig,
                   rng: np.random.Generator) -> float:
    model.eval()
    total = 0.0
    with no_grad():
        for batch in _batches(ids, cfg.optimizer.batch_size):
            loss, _, _ = _batch_loss(model, data, batch, False, cfg, rng)
            total += loss.item() * len(batch)
    model.train()
    return total / len(ids)


def _mean_parts(parts: Sequence[tuple[LossParts, int]]) -> Dict[str, float]:
    n = sum(size for _, size in parts)
    out = {k: 0.0 for k in ("cat1", "cat2", "cont", "emb")}
    for p, size in parts:
        for k, v in p.as_dict().items():
            out[k] += v * size / n
    return out


# ---------- public ----------

def train(cfg: RunConfig, manifest_path: Union[str, Path], out_dir: Union[str, Path],
          epochs: Optional[int] = None) -> TrainResult:
    """
    SGD with momentum and weight decay, plateau LR schedule on the validation
    loss and a best-by-validation-loss checkpoint. Without a 'val' split the
    training loss is monitored instead.
    """
    manifest = load_manifest(Path(manifest_path))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ids = manifest.split("train")
    val_ids = manifest.splits.get("val") or []
    if not train_ids:
        raise EmptyInputError("the manifest's train split is empty")

    init_rng = np.random.default_rng(cfg.seed)
    data_rng = np.random.default_rng([cfg.seed, 1])
    model = build_model(cfg, len(manifest.categories), init_rng)
    data = _load_run_data(cfg, manifest, model, list(train_ids) + list(val_ids), require_annotations=True)

    opt = SGD(model.parameters(), lr=cfg.learning_rate, momentum=cfg.optimizer.momentum,
              weight_decay=cfg.optimizer.weight_decay)
    sched = ReduceLROnPlateau(opt, cfg.scheduler.factor, cfg.scheduler.patience,
                              cfg.scheduler.min_delta, cfg.scheduler.min_lr)

    raw = {**cfg.raw, "seed": cfg.seed}
    _atomic_write_text(out_dir / CONFIG_NAME, yaml.safe_dump(raw, sort_keys=False))
    ckpt_path = out_dir / CHECKPOINT_NAME
    log_path = out_dir / LOG_NAME

    history: list[EpochRecord] = []
    best_loss, best_epoch = float("inf"), 0
    n_epochs = epochs if epochs is not None else cfg.optimizer.epochs
    model.train()
    for epoch in range(1, n_epochs + 1):
        order = [train_ids[i] for i in data_rng.permutation(len(train_ids))]
        running, parts, skipped = 0.0, [], 0
        for batch in _batches(order, cfg.optimizer.batch_size):
            loss, p, s = _batch_loss(model, data, batch, True, cfg, data_rng)
            loss.backward()
            opt.step()
            running += loss.item() * len(batch)
            parts.append((p, len(batch)))
            skipped += s
        train_loss = running / len(order)
        val_loss = _evaluate_loss(model, data, val_ids, cfg, data_rng) if val_ids else train_loss
        lr_used = opt.lr
        sched.step(val_loss)

        improved = val_loss < best_loss
        if improved:
            best_loss, best_epoch = val_loss, epoch
            save_checkpoint(ckpt_path, model.state_dict(), {
                "config": raw,
                "categories": list(manifest.categories),
                "t_max": manifest.t_max,
                "epoch": epoch,
                "val_loss": val_loss,
            })
        rec = EpochRecord(epoch, train_loss, val_loss, lr_used, _mean_parts(parts), improved)
        history.append(rec)
        write_jsonl(log_path, [asdict(r) for r in history])
        if skipped:
            log.warning("epoch %d: embedding loss skipped for %d sample(s) without positive labels", epoch, skipped)
        log.info("epoch %d/%d  train %.4f  val %.4f  lr %.2g%s", epoch, n_epochs, train_loss, val_loss,
                 lr_used, "  *" if improved else "")
        if sched.optimizer.lr < lr_used:
            log.info("epoch %d: learning rate reduced to %.2g", epoch, sched.optimizer.lr)

    return TrainResult(ckpt_path, log_path, history, best_epoch, best_loss)


def restore_model(checkpoint_path: Union[str, Path]) -> tuple[Module, RunConfig, dict]:
    ckpt = load_checkpoint(Path(checkpoint_path))
    if "config" not in ckpt.meta or "categories" not in ckpt.meta:
        raise SchemaError(f"{checkpoint_path}: checkpoint lacks run metadata")
    cfg = parse_run_config(yaml.safe_dump(ckpt.meta["config"]), source=str(checkpoint_path))
    model = build_model(cfg, len(ckpt.meta["categories"]), np.random.default_rng(cfg.seed))
    model.load_state_dict(ckpt.state, strict=True)
    model.eval()
    return model, cfg, ckpt.meta


def predict(checkpoint_path: Union[str, Path], manifest_path: Union[str, Path],
            split: str = "val") -> PredictionSet:
    """Video-level raw predictions for every clip of `split`."""
    model, cfg, meta = restore_model(checkpoint_path)
    manifest = load_manifest(Path(manifest_path))
    if list(manifest.categories) != list(meta["categories"]):
        raise SchemaError("checkpoint and manifest use different category vocabularies")
    ids = manifest.split(split)
    if not ids:
        raise EmptyInputError(f"split '{split}' is empty")
    data = _load_run_data(cfg, manifest, model, ids)
    rng = np.random.default_rng(cfg.seed)
    num_categories = len(manifest.categories)

    preds: Dict[str, Prediction] = {}
    for batch in _batches(ids, cfg.optimizer.batch_size):
        x = data.batcher.inputs(batch, False, rng)
        if isinstance(model, TsnModel):
            rows = model.predict(x)
        else:
            with no_grad():
                rows = split_outputs(model(Tensor(x)).data, num_categories)
        preds.update(zip(batch, rows))
    return PredictionSet(preds, space=LOGIT, model=cfg.model.kind,
                         meta={"split": split, "categories": list(manifest.categories)})
