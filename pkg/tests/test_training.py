# tests/test_training.py
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from emotion_ensemble.config_loader import parse_run_config
from emotion_ensemble.errors import SchemaError
from emotion_ensemble.metrics import evaluate
from emotion_ensemble.records import LOGIT
from emotion_ensemble.storage import (
    load_annotations,
    load_checkpoint,
    load_manifest,
    load_skeleton_dataset,
    save_skeleton_dataset,
)
from emotion_ensemble.synthetic import make_synthetic_dataset
from emotion_ensemble.training import CHECKPOINT_NAME, CONFIG_NAME, LOG_NAME, predict, restore_model, train

TINY_STGCN = """\
seed: 3
stgcn:
  channels: [8, 8, 16]
  strides: [1, 1, 2]
  temporal_kernel: 3
optimizer:
  epochs: 2
  batch_size: 4
"""

TINY_TSN = """\
model:
  kind: tsn-rgb
  embedding_loss: true
tsn:
  k_train: 2
  k_eval: 3
optimizer:
  epochs: 1
  batch_size: 4
"""


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return make_synthetic_dataset(tmp_path_factory.mktemp("synth"), num_clips=10, num_frames=8, seed=0)


def test_synthetic_dataset_layout(dataset):
    m = load_manifest(dataset)
    assert len(m.categories) == 26
    assert m.split("val") == ["clip0004", "clip0009"]
    assert len(m.split("train")) == 8
    assert 4 <= m.t_max <= 8
    for key in ("skeletons", "features", "embeddings", "scene_weights"):
        assert m.resolve(key).exists()
    assert (m.resolve("features") / "flow" / "clip0000.npz").exists()
    assert len(load_annotations(m.resolve("skeletons"))) == 10


def test_stgcn_run_writes_artifacts(dataset, tmp_path):
    cfg = parse_run_config(TINY_STGCN)
    result = train(cfg, dataset, tmp_path / "run")
    assert result.checkpoint == tmp_path / "run" / CHECKPOINT_NAME and result.checkpoint.exists()
    assert (tmp_path / "run" / CONFIG_NAME).exists()
    assert result.log_path.read_text(encoding="utf-8").count("\n") == 2
    assert [r.epoch for r in result.history] == [1, 2]
    assert result.best_epoch in (1, 2)
    assert math.isfinite(result.best_val_loss)
    assert result.history[0].improved
    assert set(result.history[0].parts) == {"cat1", "cat2", "cont", "emb"}
    meta = load_checkpoint(result.checkpoint).meta
    assert meta["epoch"] == result.best_epoch and meta["config"]["seed"] == 3


def test_same_seed_same_log_and_checkpoint(dataset, tmp_path):
    cfg = parse_run_config(TINY_STGCN)
    a = train(cfg, dataset, tmp_path / "a", epochs=1)
    b = train(cfg, dataset, tmp_path / "b", epochs=1)
    assert a.log_path.read_bytes() == b.log_path.read_bytes()
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    other = train(parse_run_config(TINY_STGCN, seed=4), dataset, tmp_path / "c", epochs=1)
    assert other.log_path.read_bytes() != a.log_path.read_bytes()


def test_predict_from_checkpoint(dataset, tmp_path):
    result = train(parse_run_config(TINY_STGCN), dataset, tmp_path / "run", epochs=1)
    preds = predict(result.checkpoint, dataset, split="val")
    assert preds.space == LOGIT and preds.model == "stgcn"
    assert preds.clip_ids() == ["clip0004", "clip0009"]
    assert preds["clip0004"].categorical.shape == (26,) and preds["clip0004"].vad.shape == (3,)
    again = predict(result.checkpoint, dataset, split="val")
    np.testing.assert_array_equal(again["clip0009"].categorical, preds["clip0009"].categorical)

    annotations = load_annotations(load_manifest(dataset).resolve("skeletons"))
    report = evaluate(preds, {cid: annotations[cid] for cid in preds.clip_ids()})
    assert report.num_clips == 2


def test_unannotated_training_clip_is_a_schema_error(tmp_path):
    manifest = make_synthetic_dataset(tmp_path / "data", num_clips=5, num_frames=8, seed=1)
    skeletons = load_manifest(manifest).resolve("skeletons")
    clips = [replace(s, annotation=None) if s.clip_id == "clip0000" else s
             for s in load_skeleton_dataset(skeletons)]
    save_skeleton_dataset(skeletons, clips)
    with pytest.raises(SchemaError, match="clip0000"):
        train(parse_run_config(TINY_STGCN), manifest, tmp_path / "run", epochs=1)
    assert not (tmp_path / "run" / CONFIG_NAME).exists()


def test_config_snapshot_is_written_atomically(dataset, tmp_path, monkeypatch):
    from emotion_ensemble import training

    written = []
    original = training._atomic_write_text
    monkeypatch.setattr(training, "_atomic_write_text", lambda path, text: (written.append(path), original(path, text)))
    train(parse_run_config(TINY_STGCN), dataset, tmp_path / "run", epochs=1)
    assert tmp_path / "run" / CONFIG_NAME in written
    assert parse_run_config((tmp_path / "run" / CONFIG_NAME).read_text(encoding="utf-8")).seed == 3


def test_restore_model_rebuilds_config(dataset, tmp_path):
    result = train(parse_run_config(TINY_STGCN), dataset, tmp_path / "run", epochs=1)
    model, cfg, meta = restore_model(result.checkpoint)
    assert cfg.stgcn.channels == (8, 8, 16)
    assert not model.training
    assert len(meta["categories"]) == 26


def test_predict_rejects_other_vocabulary(dataset, tmp_path):
    result = train(parse_run_config(TINY_STGCN), dataset, tmp_path / "run", epochs=1)
    other = make_synthetic_dataset(tmp_path / "other", num_clips=5, num_frames=8,
                                   categories=[f"c{i}" for i in range(26)])
    with pytest.raises(SchemaError, match="vocabular"):
        predict(result.checkpoint, other)


def test_partial_bn_run(dataset, tmp_path):
    cfg = parse_run_config(TINY_STGCN + "model:\n  partial_bn: true\n")
    result = train(cfg, dataset, tmp_path / "run", epochs=1)
    assert result.checkpoint.exists()


def test_tsn_rgb_run_with_embedding_loss(dataset, tmp_path):
    cfg = parse_run_config(TINY_TSN)
    result = train(cfg, dataset, tmp_path / "tsn")
    assert len(result.history) == 1
    assert result.history[0].parts["emb"] > 0.0
    preds = predict(result.checkpoint, dataset, split="val")
    assert preds.model == "tsn-rgb" and len(preds) == 2


def test_tsn_flow_run(dataset, tmp_path):
    cfg = parse_run_config(TINY_TSN.replace("tsn-rgb", "tsn-flow"))
    result = train(cfg, dataset, tmp_path / "flow")
    preds = predict(result.checkpoint, dataset, split="train")
    assert len(preds) == 8
