# emotion_ensemble/ndcore/functional.py
"""Network ops on top of the tensor core: convolutions, batch norm, pooling, losses."""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import (
    Tensor,
    _result,
    _stable_sigmoid,
    as_tensor,
    einsum,
    mean,
    pad_axis,
    take,
)


# ---------- linear maps ----------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x (N, in) @ weight(out, in).T + bias(out)."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError("linear", x.shape, weight.shape)
    out = einsum("ni,oi->no", x, weight)
    return out + bias if bias is not None else out


def conv_1x1(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Pointwise channel mixing on (N, C_in, T, V) with weight (C_out, C_in)."""
    if x.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError("conv_1x1", x.shape, weight.shape)
    out = einsum("nctv,oc->notv", x, weight)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def temporal_windows(num_frames: int, kernel: int, stride: int) -> np.ndarray:
    """(kernel, T_out) frame indices into the zero-padded time axis."""
    pad = (kernel - 1) // 2
    t_out = (num_frames + 2 * pad - kernel) // stride + 1
    return np.arange(kernel)[:, None] + stride * np.arange(t_out)[None, :]


def temporal_conv(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """
    C_out×Γ×1 convolution along time on (N, C_in, T, V), weight (C_out, C_in, Γ),
    symmetric zero padding (Γ-1)/2, so T_out = ceil(T / stride).
    """
    if x.ndim != 4 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeError("temporal_conv", x.shape, weight.shape)
    kernel = weight.shape[2]
    if kernel % 2 != 1:
        raise ShapeError("temporal_conv", weight.shape, detail="temporal kernel must be odd")
    pad = (kernel - 1) // 2
    xp = pad_axis(x, 2, pad, pad) if pad else x
    windows = take(xp, temporal_windows(x.shape[2], kernel, stride), axis=2)  # (N, C, Γ, T_out, V)
    out = einsum("ncgtv,ocg->notv", windows, weight)
    if bias is not None:
        out = out + bias.reshape(1, -1, 1, 1)
    return out


def average_pool(x: Tensor, axes: Sequence[int] = (2, 3)) -> Tensor:
    """Global average over `axes` (default time and joints)."""
    return mean(x, axis=tuple(axes))


# ---------- normalization / regularization ----------

def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    *,
    use_batch_stats: bool,
    update_stats: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """
    Batch norm over every axis except the channel axis 1.
    Running statistics are updated in place when `update_stats` is set
    (variance with the unbiased estimator).
    """
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batch_norm", x.shape, gamma.shape)
    axes = tuple(ax for ax in range(x.ndim) if ax != 1)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    g_ = gamma.data.reshape(bshape)
    b_ = beta.data.reshape(bshape)

    if use_batch_stats:
        n = int(np.prod([x.shape[ax] for ax in axes]))
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu) * inv_std
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(c) * (n / max(n - 1, 1))

        def _bw(g):
            dxhat = g * g_
            dx = inv_std / n * (
                n * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return dx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        inv_std = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv_std

        def _bw(g):
            return g * g_ * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = (xhat * g_ + b_).astype(x.dtype, copy=False)
    return _result(out, (x, gamma, beta), _bw, "batch_norm")


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------- losses (mean reduction) ----------

def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeError("mse", pred.shape, target.shape)
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)
    return _result(out, (pred, target), lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n), "mse")


def bce_with_logits(logits: Tensor, target) -> Tensor:
    """
    Mean binary cross-entropy between sigmoid(logits) and targets, in the
    stable form max(x, 0) - x*t + log(1 + exp(-|x|)).
    """
    target = as_tensor(target, logits)
    if logits.shape != target.shape:
        raise ShapeError("bce", logits.shape, target.shape)
    x, t = logits.data, target.data
    n = x.size
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(per.sum() / n, dtype=logits.dtype)
    s = _stable_sigmoid(x)
    return _result(out, (logits, target), lambda g: (g * (s - t) / n, -g * x / n), "bce")
