# emotion_ensemble/ndcore/tensor.py
"""
Dense tensors with reverse-mode gradients on a numpy backend.

Every differentiable op builds its output with `_result(...)`, handing over a
closure that maps the output gradient to one gradient per parent. `backward()`
walks the recorded graph in reverse topological order.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import GradientError, ShapeError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


# ---------- global switches ----------

def get_default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def default_dtype(dtype):
    """float32 for training, float64 for verification (gradcheck)."""
    global _DEFAULT_DTYPE
    prev, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = prev


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


# ---------- tensor ----------

class Tensor:
    __array_priority__ = 100  # make ndarray (op) Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=_DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(Tensor)
        t.data = arr
        t.grad = None
        t.requires_grad = False
        t.name = ""
        t._parents = ()
        t._backward = None
        t._op = ""
        return t

    # --- basic properties ---
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, (), detail="only one-element tensors")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # --- backward ---
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None and self.data.size != 1:
            raise GradientError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GradientError("backward() on a tensor that was not produced by recorded ops")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.dtype)
        }
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape).astype(parent.dtype, copy=False)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # --- operators ---
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, power: float): return power_(self, power)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def permute(self, *axes): return permute(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)
    def relu(self): return relu(self)
    def sigmoid(self): return sigmoid(self)


class Parameter(Tensor):
    """Trainable leaf tensor. `frozen` parameters still receive gradients but are not updated."""

    def __init__(self, data, name: str = "", frozen: bool = False):
        super().__init__(data, requires_grad=True, name=name)
        self.frozen = frozen

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape}, frozen={self.frozen})"


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor._wrap(np.asarray(x, dtype=dtype))


def _result(arr: np.ndarray, parents: Iterable[Tensor], backward, op: str) -> Tensor:
    out = Tensor._wrap(arr)
    parents = tuple(parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------- elementwise ----------

def add(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check("sub", a, b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check("mul", a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_check("div", a, b)
    out = a.data / b.data
    return _result(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power_(a: Tensor, p: float) -> Tensor:
    return _result(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), f"pow{p}")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis` (row-wise for 2-D inputs)."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),), "softmax")


# ---------- reductions / shape ----------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _result(np.asarray(out), (a,), _bw, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = tuple(range(a.ndim)) if axis is None else ((axis,) if isinstance(axis, int) else tuple(axis))
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axes)
        elif axis is None and not keepdims:
            g = np.reshape(g, (1,) * a.ndim)
        return (np.broadcast_to(g / count, a.shape),)

    return _result(np.asarray(out, dtype=a.dtype), (a,), _bw, "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape)) from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("permute", a.shape, axes, detail="axes must be a permutation")
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "permute")


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), _bw, "getitem")


def take(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along `axis`; indices may be multi-dimensional (repeats allowed)."""
    idx = np.asarray(indices)
    axis = axis % a.ndim
    out = np.take(a.data, idx, axis=axis)

    def _bw(g):
        full = np.zeros_like(a.data)
        sel = (slice(None),) * axis + (idx,)
        np.add.at(full, sel, g)
        return (full,)

    return _result(out, (a,), _bw, "take")


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero padding on a single axis."""
    axis = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)

    def _bw(g):
        sel = [slice(None)] * a.ndim
        sel[axis] = slice(before, before + a.shape[axis])
        return (g[tuple(sel)],)

    return _result(out, (a,), _bw, "pad")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", (), detail="nothing to concatenate")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tensors, _bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError("stack", *shapes)
    out = np.stack([t.data for t in tensors], axis=axis)
    return _result(out, tensors, lambda g: tuple(np.moveaxis(g, axis, 0)), "stack")


# ---------- products ----------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def _bw(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _result(out, (a, b), _bw, "matmul")


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """
    Two-operand einsum. Every index of an operand must appear in the other
    operand or in the output, which keeps the backward pass an einsum too.
    """
    lhs, out_spec = spec.replace(" ", "").split("->")
    a_spec, b_spec = lhs.split(",")
    for name, s, other in (("first", a_spec, b_spec), ("second", b_spec, a_spec)):
        if len(set(s)) != len(s):
            raise ShapeError("einsum", a.shape, b.shape, detail=f"repeated index in {name} operand")
        lost = [c for c in s if c not in other and c not in out_spec]
        if lost:
            raise ShapeError("einsum", a.shape, b.shape, detail=f"indices {lost} reduced without partner")
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = np.einsum(f"{a_spec},{b_spec}->{out_spec}", a.data, b.data)
    except ValueError:
        raise ShapeError(f"einsum[{spec}]", a.shape, b.shape) from None

    def _bw(g):
        ga = np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, b.data) if a.requires_grad else None
        gb = np.einsum(f"{out_spec},{a_spec}->{b_spec}", g, a.data) if b.requires_grad else None
        return (ga, gb)

    return _result(out, (a, b), _bw, "einsum")
