# emotion_ensemble/ndcore/layers.py
from __future__ import annotations

import logging
from typing import Iterator, Optional, Sequence

import numpy as np

from ..errors import SchemaError
from . import functional as F
from .tensor import Parameter, Tensor, get_default_dtype

log = logging.getLogger(__name__)


def _uniform(rng: np.random.Generator, fan_in: int, shape: Sequence[int]) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=tuple(shape))


class Module:
    """
    Minimal module tree. Children, parameters and buffers are discovered from
    attributes in assignment order, so names and iteration order are stable.
    """

    _buffer_names: tuple[str, ...] = ()

    def __init__(self) -> None:
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # --- traversal ---
    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children():
            yield from child.named_modules(f"{prefix}{name}.")

    def modules(self) -> list["Module"]:
        return [m for _, m in self.named_modules()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield f"{prefix}{name}", value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffer_names:
            yield f"{prefix}{name}", getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    # --- modes ---
    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # --- state ---
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: np.array(b, copy=True) for name, b in self.named_buffers()})
        return state

    def load_state_dict(
        self,
        state: dict[str, np.ndarray],
        *,
        strict: bool = True,
        skip_prefixes: Sequence[str] = (),
    ) -> tuple[list[str], list[str]]:
        """
        Copy arrays by name. Names starting with any of `skip_prefixes` keep
        their current (fresh) values. Returns (missing, unexpected).
        """
        own_params = dict(self.named_parameters())
        own_buffers = dict(self.named_buffers())
        skip = tuple(skip_prefixes)
        missing, unexpected = [], []

        for name in list(own_params) + list(own_buffers):
            if skip and name.startswith(skip):
                continue
            if name not in state:
                missing.append(name)
                continue
            src = np.asarray(state[name])
            dst = own_params[name].data if name in own_params else own_buffers[name]
            if src.shape != dst.shape:
                raise SchemaError(f"checkpoint entry '{name}' has shape {src.shape}, model expects {dst.shape}")
            dst[...] = src
        for name in state:
            if name not in own_params and name not in own_buffers:
                unexpected.append(name)
        if strict and (missing or unexpected):
            raise SchemaError(f"state mismatch: missing={missing} unexpected={unexpected}")
        return missing, unexpected


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        dt = get_default_dtype()
        self.weight = Parameter(_uniform(rng, in_features, (out_features, in_features)).astype(dt))
        self.bias = Parameter(np.zeros(out_features, dtype=dt)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv1x1(Module):
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        dt = get_default_dtype()
        self.weight = Parameter(_uniform(rng, in_channels, (out_channels, in_channels)).astype(dt))
        self.bias = Parameter(np.zeros(out_channels, dtype=dt)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_1x1(x, self.weight, self.bias)


class TemporalConv(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, bias: bool = True):
        super().__init__()
        dt = get_default_dtype()
        self.stride = stride
        self.weight = Parameter(
            _uniform(rng, in_channels * kernel, (out_channels, in_channels, kernel)).astype(dt)
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=dt)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.temporal_conv(x, self.weight, self.bias, stride=self.stride)


class BatchNorm(Module):
    """
    Batch norm over channel axis 1. With `stats_frozen` the layer normalizes
    with its stored running statistics even in training mode and never
    updates them; gamma/beta remain trainable.
    """

    _buffer_names = ("running_mean", "running_var")

    def __init__(self, num_channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        dt = get_default_dtype()
        self.momentum = momentum
        self.eps = eps
        self.stats_frozen = False
        self.weight = Parameter(np.ones(num_channels, dtype=dt))
        self.bias = Parameter(np.zeros(num_channels, dtype=dt))
        self.running_mean = np.zeros(num_channels, dtype=dt)
        self.running_var = np.ones(num_channels, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        batch_stats = self.training and not self.stats_frozen
        return F.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            use_batch_stats=batch_stats, update_stats=batch_stats,
            momentum=self.momentum, eps=self.eps,
        )


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        self.p = float(p)
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.p, self.rng, self.training)


def batch_norm_layers(model: Module) -> list[BatchNorm]:
    return [m for m in model.modules() if isinstance(m, BatchNorm)]


def set_partial_bn(model: Module, first_bn_trainable: bool = True) -> Module:
    """
    Freeze the running mean/variance of every BN layer except the first one
    (in module order). Affine weights stay trainable.
    """
    layers = batch_norm_layers(model)
    if not layers:
        log.warning("partial BN requested but the model has no batch-norm layers")
        return model
    for i, bn in enumerate(layers):
        bn.stats_frozen = not (i == 0 and first_bn_trainable)
    log.debug("partial BN: %d of %d BN layers use stored statistics",
              sum(bn.stats_frozen for bn in layers), len(layers))
    return model
