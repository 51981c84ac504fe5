# tests/test_ndcore.py
from __future__ import annotations

import numpy as np
import pytest

from emotion_ensemble.errors import GradientError, SchemaError, ShapeError
from emotion_ensemble.gradchecks import run_gradcheck_suite
from emotion_ensemble.ndcore import (
    SGD,
    BatchNorm,
    Linear,
    Module,
    OptimizerState,
    Parameter,
    ReduceLROnPlateau,
    Tensor,
    default_dtype,
    get_default_dtype,
    gradcheck,
    no_grad,
    reduce_lr_on_plateau,
    relative_error,
    set_partial_bn,
    sigmoid,
    softmax,
    temporal_conv,
)
from emotion_ensemble.ndcore import functional as F
from emotion_ensemble.ndcore.optim import sgd_step
from emotion_ensemble.ndcore.tensor import einsum


# ---------- forward ops ----------

def test_softmax_of_equal_logits_is_uniform():
    out = softmax(Tensor([[0.0, 0.0, 0.0]]), axis=1)
    np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]], rtol=1e-6)


def test_sigmoid_of_zero():
    assert sigmoid(Tensor(0.0)).item() == pytest.approx(0.5)


def test_sigmoid_is_stable_for_large_inputs():
    out = sigmoid(Tensor([-1000.0, 1000.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0])


def test_identity_temporal_kernel(float64):
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3, 5, 4)))
    w = Tensor(np.eye(3)[:, :, None])
    np.testing.assert_allclose(temporal_conv(x, w).data, x.data)


def test_temporal_stride_halves_length(float64):
    x = Tensor(np.zeros((1, 2, 150, 3)))
    w = Tensor(np.zeros((4, 2, 9)))
    assert temporal_conv(x, w, stride=2).shape == (1, 4, 75, 3)


def test_even_temporal_kernel_rejected():
    with pytest.raises(ShapeError):
        temporal_conv(Tensor(np.zeros((1, 2, 5, 3))), Tensor(np.zeros((2, 2, 4))))


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 5)))
    with pytest.raises(ShapeError):
        Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))


def test_einsum_rejects_unpartnered_reduction():
    with pytest.raises(ShapeError):
        einsum("ij,kl->ik", Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_default_dtype_switch():
    assert get_default_dtype() is np.float32
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


# ---------- backward ----------

def test_square_gradient():
    w = Parameter(3.0)
    (w * w).backward()
    assert w.grad == pytest.approx(6.0)


def test_gradients_accumulate_over_backward_calls():
    w = Parameter(2.0)
    (w * 3.0).backward()
    (w * 3.0).backward()
    assert w.grad == pytest.approx(6.0)


def test_backward_needs_scalar():
    w = Parameter(np.ones(3))
    with pytest.raises(GradientError):
        (w * 2.0).backward()


def test_backward_on_untracked_tensor():
    with pytest.raises(GradientError):
        Tensor(1.0).backward()


def test_no_grad_records_nothing():
    w = Parameter(np.ones(2))
    with no_grad():
        y = (w * w).sum()
    assert not y.requires_grad


def test_gradcheck_passes_on_composed_graph(float64):
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    res = gradcheck(lambda: sigmoid(a @ b).sum(), [a, b], name="sigmoid(ab)")
    assert res.passed
    assert len(res.per_input) == 2


def test_gradcheck_detects_a_wrong_backward(float64):
    from emotion_ensemble.ndcore.tensor import _result

    a = Tensor(np.random.default_rng(1).normal(size=5), requires_grad=True)

    def wrong_square():
        return _result(a.data ** 2, (a,), lambda g: (g * a.data,), "bad").sum()

    assert not gradcheck(wrong_square, [a]).passed


def test_relative_error_is_scale_free_and_safe_at_zero():
    a = np.array([1.0, 2.0])
    assert relative_error(a, a) == 0.0
    assert relative_error(a, 2 * a) == pytest.approx(1 / 3)
    assert relative_error(1e6 * a, 2e6 * a) == pytest.approx(1 / 3)
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0


@pytest.mark.slow
def test_full_gradcheck_suite_over_fifty_seeds():
    results = run_gradcheck_suite(seeds=50)
    assert len(results) == 18
    failed = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert not failed
    assert any("st-gcn unit" in r.name for r in results)
    assert any("losses" in r.name for r in results)


def test_bce_matches_naive_form(float64):
    x = np.array([[-2.0, 0.0, 3.0]])
    t = np.array([[0.0, 1.0, 1.0]])
    s = 1 / (1 + np.exp(-x))
    naive = -(t * np.log(s) + (1 - t) * np.log(1 - s)).mean()
    assert F.bce_with_logits(Tensor(x), t).item() == pytest.approx(naive)


# ---------- optimizer ----------

def test_vanilla_sgd_step():
    w = Parameter(1.0)
    w.grad = np.array(1.0, dtype=w.dtype)
    sgd_step(OptimizerState(learning_rate=0.1, momentum=0.0, weight_decay=0.0), [w])
    assert w.item() == pytest.approx(0.9)
    assert w.grad is None


def test_momentum_two_steps():
    w = Parameter(0.0)
    opt = SGD([w], lr=0.1, momentum=0.9, weight_decay=0.0)
    for expected in (-0.1, -0.29):
        w.grad = np.array(1.0, dtype=w.dtype)
        opt.step()
        assert w.item() == pytest.approx(expected, abs=1e-6)


def test_frozen_parameter_receives_grad_but_is_not_updated():
    w = Parameter(np.array([1.0, 2.0]), frozen=True)
    (w * w).sum().backward()
    np.testing.assert_allclose(w.grad, [2.0, 4.0])
    SGD([w], lr=0.5, momentum=0.0, weight_decay=0.0).step()
    np.testing.assert_allclose(w.data, [1.0, 2.0])


def test_weight_decay_adds_to_gradient():
    w = Parameter(2.0)
    w.grad = np.array(0.0, dtype=w.dtype)
    sgd_step(OptimizerState(learning_rate=0.1, momentum=0.0, weight_decay=0.5), [w])
    assert w.item() == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_plateau_keeps_lr_while_improving():
    assert reduce_lr_on_plateau([1.0, 0.9, 0.8], lr=0.01) == pytest.approx(0.01)


def test_plateau_reduces_after_patience():
    opt = SGD([], lr=0.01)
    sched = ReduceLROnPlateau(opt, factor=0.1, patience=2, min_delta=1e-4)
    assert sched.step(1.0) == pytest.approx(0.01)
    assert sched.step(1.0) == pytest.approx(0.01)
    assert sched.step(1.0) == pytest.approx(0.001)


def test_plateau_floor():
    lr = reduce_lr_on_plateau([1.0] * 40, lr=1e-6, min_lr=1e-8)
    assert lr == pytest.approx(1e-8)


def test_improvement_below_min_delta_counts_as_plateau():
    assert reduce_lr_on_plateau([1.0, 0.99995, 0.99992], lr=1.0) == pytest.approx(0.1)


# ---------- modules / partial BN ----------

class _ThreeBn(Module):
    def __init__(self):
        super().__init__()
        self.bns = [BatchNorm(2), BatchNorm(2), BatchNorm(2)]

    def forward(self, x):
        for bn in self.bns:
            x = bn(x)
        return x


def test_partial_bn_freezes_all_but_first():
    model = set_partial_bn(_ThreeBn())
    assert [bn.stats_frozen for bn in model.bns] == [False, True, True]


def test_partial_bn_single_layer_is_untouched():
    bn = set_partial_bn(BatchNorm(3))
    assert bn.stats_frozen is False


def test_partial_bn_without_bn_layers_warns(caplog):
    lin = Linear(2, 2, np.random.default_rng(0))
    with caplog.at_level("WARNING", logger="emotion_ensemble"):
        assert set_partial_bn(lin) is lin
    assert "no batch-norm" in caplog.text


def test_frozen_bn_uses_stored_statistics(float64):
    x = Tensor(np.random.default_rng(0).normal(5.0, 2.0, size=(8, 2)))
    frozen, free = BatchNorm(2), BatchNorm(2)
    frozen.stats_frozen = True
    out_frozen = frozen(x).data
    out_free = free(x).data
    # stored stats are mean 0 / var 1, so the frozen layer is (nearly) the identity
    np.testing.assert_allclose(out_frozen, x.data / np.sqrt(1 + 1e-5))
    assert not np.allclose(out_frozen, out_free)
    np.testing.assert_array_equal(frozen.running_mean, [0.0, 0.0])


def test_bn_eval_uses_running_stats(float64):
    bn = BatchNorm(2)
    x = Tensor(np.random.default_rng(1).normal(3.0, 1.0, size=(64, 2)))
    for _ in range(50):
        bn(x)
    bn.eval()
    out = bn(x).data
    assert np.abs(out.mean(axis=0)).max() < 0.1


def test_state_dict_round_trip():
    a, b = _ThreeBn(), _ThreeBn()
    a.bns[1].running_mean[:] = [1.0, 2.0]
    a.bns[2].weight.data[:] = [3.0, 4.0]
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(b.bns[1].running_mean, [1.0, 2.0])
    np.testing.assert_array_equal(b.bns[2].weight.data, [3.0, 4.0])
    assert list(a.state_dict()) == list(b.state_dict())


def test_load_state_dict_strict_mismatch():
    m = _ThreeBn()
    state = m.state_dict()
    state.pop("bns.0.weight")
    with pytest.raises(SchemaError):
        m.load_state_dict(state)
    missing, unexpected = m.load_state_dict(state, strict=False)
    assert missing == ["bns.0.weight"] and unexpected == []


def test_dropout_scaling_and_eval_identity():
    x = Tensor(np.ones((1000,)))
    rng = np.random.default_rng(0)
    out = F.dropout(x, 0.5, rng, training=True).data
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert F.dropout(x, 0.5, rng, training=False) is x
