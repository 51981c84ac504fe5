# emotion_ensemble/gradchecks.py
"""Finite-difference checks over every differentiable op, the ST-GCN unit and the losses."""
from __future__ import annotations

import logging
from typing import Callable, Iterator

import numpy as np

from .graph import graph_from_edges, build_partitioned_adjacency
from .ndcore import functional as F
from .ndcore import tensor as T
from .ndcore.gradcheck import GradcheckResult, gradcheck
from .ndcore.layers import BatchNorm
from .ndcore.tensor import Parameter, Tensor, default_dtype
from .objectives import (
    loss_cat1_tensor,
    loss_cat2_tensor,
    loss_cont_tensor,
    loss_emb_tensor,
)
from .stgcn import StgcnUnit, StgcnUnitConfig, spatial_graph_conv

log = logging.getLogger(__name__)

Case = Callable[[np.random.Generator], tuple[str, Callable[[], Tensor], list[Tensor]]]


def _leaf(rng: np.random.Generator, *shape, positive: bool = False) -> Tensor:
    data = rng.uniform(0.5, 1.5, size=shape) if positive else rng.normal(size=shape)
    return Tensor(data, requires_grad=True)


def _project(out_fn: Callable[[], Tensor], rng: np.random.Generator, shape) -> Callable[[], Tensor]:
    """Reduce a tensor-valued function to a scalar with fixed random weights."""
    w = Tensor(rng.normal(size=shape))
    return lambda: (out_fn() * w).sum()


def _cases() -> Iterator[Case]:
    def add(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
        return "add (broadcast)", _project(lambda: a + b, rng, (3, 4)), [a, b]

    def mul_div(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 1, positive=True)
        return "mul / div", _project(lambda: (a * b) / (b + 1.0) - a, rng, (3, 4)), [a, b]

    def power(rng):
        a = _leaf(rng, 5, positive=True)
        return "power", _project(lambda: a ** 1.5, rng, (5,)), [a]

    def matmul(rng):
        a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
        return "matmul", _project(lambda: a @ b, rng, (3, 2)), [a, b]

    def einsum(rng):
        a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)
        return "einsum", _project(lambda: T.einsum("nci,ij->ncj", a, b), rng, (2, 3, 5)), [a, b]

    def activations(rng):
        a = _leaf(rng, 4, 6)
        fn = lambda: T.relu(a) + T.sigmoid(a) + T.softmax(a, axis=1)  # noqa: E731
        return "relu / sigmoid / softmax", _project(fn, rng, (4, 6)), [a]

    def reductions(rng):
        a = _leaf(rng, 2, 3, 4)
        fn = lambda: T.mean(a, axis=(0, 2)) + a.sum(axis=2).reshape(2, 3).permute(1, 0).sum(axis=1)  # noqa: E731
        return "sum / mean / reshape / permute", _project(fn, rng, (3,)), [a]

    def indexing(rng):
        a = _leaf(rng, 2, 5, 3)
        idx = np.array([[0, 2, 2], [4, 1, 0]])
        fn = lambda: T.take(T.pad_axis(a[:, 1:], 1, 1, 2), idx, axis=1)  # noqa: E731
        return "getitem / pad / take", _project(fn, rng, (2, 2, 3, 3)), [a]

    def joins(rng):
        a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
        fn = lambda: T.concat([a, b], axis=1) + T.stack([a, b], axis=1).reshape(2, 6)  # noqa: E731
        return "concat / stack", _project(fn, rng, (2, 6)), [a, b]

    def linear(rng):
        x, w, b = _leaf(rng, 4, 5), _leaf(rng, 3, 5), _leaf(rng, 3)
        return "linear", _project(lambda: F.linear(x, w, b), rng, (4, 3)), [x, w, b]

    def conv1x1(rng):
        x, w, b = _leaf(rng, 2, 3, 4, 5), _leaf(rng, 6, 3), _leaf(rng, 6)
        return "conv 1x1", _project(lambda: F.conv_1x1(x, w, b), rng, (2, 6, 4, 5)), [x, w, b]

    def temporal(rng):
        x, w, b = _leaf(rng, 2, 3, 7, 4), _leaf(rng, 2, 3, 3), _leaf(rng, 2)
        return ("temporal conv (stride 2)",
                _project(lambda: F.temporal_conv(x, w, b, stride=2), rng, (2, 2, 4, 4)), [x, w, b])

    def bn_train(rng):
        x = _leaf(rng, 4, 3, 5, 2)
        bn = BatchNorm(3)
        return "batch norm (batch stats)", _project(lambda: bn(x), rng, (4, 3, 5, 2)), [x, bn.weight, bn.bias]

    def bn_eval(rng):
        x = _leaf(rng, 4, 3)
        bn = BatchNorm(3)
        bn.running_mean[:] = rng.normal(size=3)
        bn.running_var[:] = rng.uniform(0.5, 2.0, size=3)
        bn.eval()
        return "batch norm (running stats)", _project(lambda: bn(x), rng, (4, 3)), [x, bn.weight, bn.bias]

    def pool_dropout(rng):
        x = _leaf(rng, 2, 3, 4, 5)
        seed = int(rng.integers(1 << 30))
        fn = lambda: F.dropout(F.average_pool(x) * 1.0, 0.3, np.random.default_rng(seed), True)  # noqa: E731
        return "average pool / dropout", _project(fn, rng, (2, 3)), [x]

    def graph_conv(rng):
        v = 5
        g = graph_from_edges(v, [(0, 1), (1, 2), (1, 3), (3, 4)], root=1, layout_id="check")
        adj = build_partitioned_adjacency(g, "spatial")
        x, w = _leaf(rng, 2, 3, 4, v), _leaf(rng, 3 * 2, 3)
        m = Parameter(rng.uniform(0.5, 1.5, size=(3, v, v)))
        fn = lambda: spatial_graph_conv(x, w, adj.matrices, m)  # noqa: E731
        return "spatial graph conv", _project(fn, rng, (2, 2, 4, v)), [x, w, m]

    def unit(rng):
        v = 4
        g = graph_from_edges(v, [(0, 1), (1, 2), (2, 3)], root=1, layout_id="check")
        adj = build_partitioned_adjacency(g, "spatial")
        u = StgcnUnit(StgcnUnitConfig(3, 4, temporal_kernel=3, stride=2, residual=True),
                      adj.num_subsets, v, rng, dropout=0.0)
        x = _leaf(rng, 2, 3, 6, v)
        fn = lambda: u(x, adj.matrices)  # noqa: E731
        return "st-gcn unit (all parameters + M)", _project(fn, rng, (2, 4, 3, v)), [x] + u.parameters()

    def losses(rng):
        s, vad, p = _leaf(rng, 4, 6), _leaf(rng, 4, 3), _leaf(rng, 4, 2, 5)
        gt = rng.uniform(size=(4, 6))
        gt_vad = rng.uniform(size=(4, 3))
        target = rng.normal(size=(4, 5))
        valid = np.array([True, True, False, True])

        def fn():
            return (loss_cat1_tensor(s, gt) + loss_cat2_tensor(s, gt) + loss_cont_tensor(vad, gt_vad)
                    + loss_emb_tensor(p, target, valid))

        return "losses (cat1 + cat2 + cont + emb)", fn, [s, vad, p]

    yield from (add, mul_div, power, matmul, einsum, activations, reductions, indexing, joins,
                linear, conv1x1, temporal, bn_train, bn_eval, pool_dropout, graph_conv, unit, losses)


def run_gradcheck_suite(seeds: int = 50, tolerance: float = 1e-4, eps: float = 1e-6) -> list[GradcheckResult]:
    """
    One result per case, keeping the worst error over `seeds` random draws.
    `eps` bounds how close a relu input may sit to zero before central
    differences straddle the kink.
    """
    results = []
    with default_dtype(np.float64):
        for case in _cases():
            worst = None
            for seed in range(seeds):
                name, fn, inputs = case(np.random.default_rng(seed))
                res = gradcheck(fn, inputs, name=name, eps=eps, tolerance=tolerance)
                if worst is None or res.max_rel_error > worst.max_rel_error:
                    worst = res
            log.debug("gradcheck %-36s %.2e", worst.name, worst.max_rel_error)
            results.append(worst)
    return results
