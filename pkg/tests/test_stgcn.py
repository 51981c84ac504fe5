# tests/test_stgcn.py
from __future__ import annotations

import numpy as np
import pytest

from conftest import message_passing_oracle, random_connected_graph
from emotion_ensemble.config_loader import LossWeights, load_run_config
from emotion_ensemble.dataio import normalize_joints
from emotion_ensemble.errors import ConfigError, ShapeError
from emotion_ensemble.graph import build_partitioned_adjacency, build_skeleton_graph, graph_from_edges
from emotion_ensemble.ndcore import SGD, Parameter, Tensor
from emotion_ensemble.objectives import training_loss
from emotion_ensemble.records import HEAD_WIDTH, NUM_CATEGORIES
from emotion_ensemble.stgcn import (
    StgcnModel,
    StgcnUnit,
    StgcnUnitConfig,
    load_pretrained,
    spatial_graph_conv,
    split_outputs,
    stgcn_forward,
    stgcn_unit_forward,
)
from emotion_ensemble.synthetic import EMOTIONS, VAD_BY_EMOTION, make_synthetic_clips


def _small_model(rng, **kw):
    adj = build_partitioned_adjacency(build_skeleton_graph("bold18"), "spatial")
    kw.setdefault("temporal_kernel", 3)
    return StgcnModel(adj, [8, 8, 16], [1, 1, 2], rng, **kw)


# ---------- spatial graph convolution ----------

def test_single_node_identity(float64):
    g = graph_from_edges(1, [], root=0)
    adj = build_partitioned_adjacency(g, "uniform")
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 4, 1)))
    out = spatial_graph_conv(x, Tensor(np.eye(3)), adj.matrices, Parameter(np.ones((1, 1, 1))))
    np.testing.assert_allclose(out.data, x.data / 1.001)


def test_zero_mask_annihilates(float64, path3):
    adj = build_partitioned_adjacency(path3, "spatial")
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(2, 3, 4, 3)))
    w = Tensor(rng.normal(size=(3 * 5, 3)))
    out = spatial_graph_conv(x, w, adj.matrices, Parameter(np.zeros((3, 3, 3))))
    np.testing.assert_array_equal(out.data, 0.0)


@pytest.mark.parametrize("strategy", ["uniform", "distance", "spatial"])
def test_matches_message_passing_oracle(float64, strategy):
    rng = np.random.default_rng(11)
    for _ in range(100):
        g = random_connected_graph(int(rng.integers(2, 7)), rng)
        adj = build_partitioned_adjacency(g, strategy)
        k, v = adj.num_subsets, adj.num_joints
        x = rng.normal(size=(2, 3, 4, v))
        w = rng.normal(size=(k * 5, 3))
        b = rng.normal(size=k * 5)
        m = rng.uniform(0.5, 1.5, size=(k, v, v))
        out = spatial_graph_conv(Tensor(x), Tensor(w), adj.matrices, Parameter(m), Tensor(b))
        np.testing.assert_allclose(out.data, message_passing_oracle(x, w, adj.matrices, m, b), atol=1e-10)


def test_graph_conv_is_permutation_equivariant(float64):
    rng = np.random.default_rng(5)
    g = random_connected_graph(6, rng)
    adj = build_partitioned_adjacency(g, "spatial")
    perm = rng.permutation(6)
    x = rng.normal(size=(1, 3, 4, 6))
    w = Tensor(rng.normal(size=(3 * 4, 3)))
    base = spatial_graph_conv(Tensor(x), w, adj.matrices).data
    moved = spatial_graph_conv(Tensor(x[..., perm]), w, adj.permuted(perm).matrices).data
    np.testing.assert_allclose(moved, base[..., perm], atol=1e-12)


def test_graph_conv_shape_errors(path3):
    adj = build_partitioned_adjacency(path3, "spatial")
    with pytest.raises(ShapeError):
        spatial_graph_conv(Tensor(np.zeros((1, 3, 4, 5))), Tensor(np.zeros((6, 3))), adj.matrices)
    with pytest.raises(ShapeError):
        spatial_graph_conv(Tensor(np.zeros((1, 3, 4, 3))), Tensor(np.zeros((4, 3))), adj.matrices)


# ---------- unit ----------

def test_unit_config_validation():
    with pytest.raises(ConfigError):
        StgcnUnitConfig(3, 8, temporal_kernel=4)
    with pytest.raises(ConfigError):
        StgcnUnitConfig(3, 8, stride=3)


def test_unit_stride_two_halves_time(float64, path3):
    adj = build_partitioned_adjacency(path3, "spatial")
    unit = StgcnUnit(StgcnUnitConfig(3, 4, temporal_kernel=9, stride=2), 3, 3, np.random.default_rng(0))
    out = stgcn_unit_forward(Tensor(np.random.default_rng(1).normal(size=(1, 3, 150, 3))), unit, adj)
    assert out.shape == (1, 4, 75, 3)
    assert unit.residual is not None and not unit.identity_residual


def test_unit_with_zero_weights_passes_residual(float64, path3):
    adj = build_partitioned_adjacency(path3, "spatial")
    unit = StgcnUnit(StgcnUnitConfig(4, 4, temporal_kernel=3), 3, 3, np.random.default_rng(0))
    assert unit.identity_residual
    for p in unit.parameters():
        p.data[...] = 0.0
    x = np.random.default_rng(2).normal(size=(2, 4, 5, 3))
    out = stgcn_unit_forward(Tensor(x), unit, adj)
    np.testing.assert_allclose(out.data, np.maximum(x, 0.0))


def test_unit_eval_is_deterministic(path3):
    adj = build_partitioned_adjacency(path3, "spatial")
    unit = StgcnUnit(StgcnUnitConfig(3, 4, temporal_kernel=3), 3, 3, np.random.default_rng(0), dropout=0.0)
    unit.eval()
    x = Tensor(np.random.default_rng(3).normal(size=(2, 3, 6, 3)))
    np.testing.assert_array_equal(unit(x, adj.matrices).data, unit(x, adj.matrices).data)


def test_unit_edge_importance_is_a_parameter(path3):
    unit = StgcnUnit(StgcnUnitConfig(3, 4, temporal_kernel=3), 3, 3, np.random.default_rng(0))
    names = [n for n, _ in unit.named_parameters()]
    assert "edge_importance" in names
    np.testing.assert_array_equal(unit.edge_importance.data, np.ones((3, 3, 3)))
    plain = StgcnUnit(StgcnUnitConfig(3, 4, temporal_kernel=3), 3, 3, np.random.default_rng(0),
                      edge_importance=False)
    assert plain.edge_importance is None


# ---------- model ----------

def test_zero_input_gives_zero_prediction():
    model = _small_model(np.random.default_rng(0))
    preds = stgcn_forward(model, np.zeros((2, 3, 12, 18)))
    assert len(preds) == 2
    for p in preds:
        np.testing.assert_array_equal(p.categorical, np.zeros(NUM_CATEGORIES))
        np.testing.assert_array_equal(p.vad, np.zeros(3))


def test_identical_sequences_give_identical_rows():
    model = _small_model(np.random.default_rng(0))
    seq = np.random.default_rng(4).uniform(size=(1, 3, 12, 18))
    preds = model.predict(np.concatenate([seq, seq, seq]))
    for p in preds[1:]:
        np.testing.assert_array_equal(p.as_row(), preds[0].as_row())


def test_predict_restores_training_mode():
    model = _small_model(np.random.default_rng(0))
    assert model.training
    model.predict(np.zeros((1, 3, 8, 18)))
    assert model.training


def test_forward_output_width():
    model = _small_model(np.random.default_rng(0), dropout=0.0)
    out = model(Tensor(np.random.default_rng(1).uniform(size=(3, 3, 10, 18))))
    assert out.shape == (3, HEAD_WIDTH)
    assert split_outputs(out.data)[0].vad.shape == (3,)


def test_first_unit_has_no_residual_or_dropout():
    model = _small_model(np.random.default_rng(0))
    first = model.units[0]
    assert first.residual is None and not first.identity_residual
    assert first.drop.p == 0.0
    assert model.units[1].drop.p == 0.5
    assert model.data_bn is not None and model.data_bn.weight.shape == (3 * 18,)


def test_input_shape_checked():
    model = _small_model(np.random.default_rng(0))
    with pytest.raises(ShapeError):
        model(Tensor(np.zeros((1, 3, 10, 17))))


def test_from_config_default_stack():
    cfg = load_run_config().stgcn
    model = StgcnModel.from_config(cfg, np.random.default_rng(0))
    assert len(model.units) == 9
    assert [u.cfg.out_channels for u in model.units] == [64, 64, 64, 128, 128, 128, 256, 256, 256]
    assert model.adjacency.num_subsets == 3


def test_load_pretrained_keeps_fresh_head():
    src = _small_model(np.random.default_rng(0))
    dst = _small_model(np.random.default_rng(1))
    head_before = dst.head.weight.data.copy()
    missing, unexpected = load_pretrained(dst, src.state_dict())
    assert missing == [] and unexpected == []
    np.testing.assert_array_equal(dst.units[0].gcn.conv.weight.data, src.units[0].gcn.conv.weight.data)
    np.testing.assert_array_equal(dst.head.weight.data, head_before)


# ---------- overfit smoke run ----------

@pytest.mark.slow
def test_reduced_stack_overfits_synthetic_clips():
    clips = [normalize_joints(c) for c in make_synthetic_clips(20, 16, seed=0, fixed_length=True)]
    x = np.stack([c.joints for c in clips]).astype(np.float32)
    labels = np.array([i % 2 for i in range(len(clips))])
    gt_cat = np.zeros((len(clips), NUM_CATEGORIES))
    gt_cat[np.arange(len(clips)), labels] = 1.0
    gt_vad = np.array([VAD_BY_EMOTION[EMOTIONS[k]] for k in labels])

    model = _small_model(np.random.default_rng(0), dropout=0.0)
    opt = SGD(model.parameters(), lr=0.05, momentum=0.9, weight_decay=0.0)
    loss_value = float("inf")
    for _ in range(200):
        out = model(Tensor(x))
        total, _, _ = training_loss(out[:, :NUM_CATEGORIES], out[:, NUM_CATEGORIES:], gt_cat, gt_vad,
                                    weights=LossWeights())
        total.backward()
        opt.step()
        loss_value = total.item()
        if loss_value < 0.02:
            break

    assert loss_value < 0.02
    preds = model.predict(x)
    predicted = np.array([int(np.argmax(p.categorical[:2])) for p in preds])
    np.testing.assert_array_equal(predicted, labels)
