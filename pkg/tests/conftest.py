# tests/conftest.py
from __future__ import annotations

import logging

import numpy as np
import pytest

from emotion_ensemble.graph import graph_from_edges
from emotion_ensemble.ndcore.tensor import default_dtype


@pytest.fixture(autouse=True)
def _package_logs_propagate():
    # the CLI detaches the package logger from the root; caplog listens on the root
    logging.getLogger("emotion_ensemble").propagate = True
    yield


@pytest.fixture
def float64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def emoens_home(tmp_path, monkeypatch):
    home = tmp_path / "home"
    monkeypatch.setenv("EMOENS_HOME", str(home))
    return home


@pytest.fixture
def path3():
    return graph_from_edges(3, [(0, 1), (1, 2)], root=0, layout_id="path3")


@pytest.fixture
def star5():
    return graph_from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)], root=0, layout_id="star5")


def random_connected_graph(num_joints: int, rng: np.random.Generator, layout_id: str = "cyclic"):
    """Random spanning tree plus up to `num_joints` extra edges (cycles allowed)."""
    edges = [(int(rng.integers(i)), i) for i in range(1, num_joints)]
    if num_joints > 2:
        for _ in range(int(rng.integers(num_joints + 1))):
            i, j = rng.choice(num_joints, size=2, replace=False)
            edges.append((int(i), int(j)))
    return graph_from_edges(num_joints, edges, root=int(rng.integers(num_joints)), layout_id=layout_id)


def message_passing_oracle(x, weight, adjacency, mask=None, bias=None):
    """
    Reference graph convolution with explicit loops:
    out[n, c, t, i] = sum_k sum_j A_k[i, j] * M_k[i, j] * (W_k x[n, :, t, j] + b_k)[c]
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(adjacency, dtype=np.float64)
    if mask is not None:
        a = a * np.asarray(mask, dtype=np.float64)
    k_subsets, v, _ = a.shape
    n, c_in, t, _ = x.shape
    c_out = weight.shape[0] // k_subsets
    out = np.zeros((n, c_out, t, v))
    for b in range(n):
        for f in range(t):
            for i in range(v):
                for k in range(k_subsets):
                    w_k = weight[k * c_out:(k + 1) * c_out]
                    b_k = 0.0 if bias is None else bias[k * c_out:(k + 1) * c_out]
                    for j in range(v):
                        if a[k, i, j] != 0.0:
                            out[b, :, f, i] += a[k, i, j] * (w_k @ x[b, :, f, j] + b_k)
    return out
