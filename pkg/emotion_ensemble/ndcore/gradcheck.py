# emotion_ensemble/ndcore/gradcheck.py
"""Central finite-difference checks for the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor

TINY = 1e-12


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    max_rel_error: float
    per_input: tuple[float, ...]
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), TINY)
    return float(num / den)


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(fn().data)
        flat[i] = orig - eps
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    *,
    name: str = "",
    eps: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradcheckResult:
    """
    Compare backward() of the scalar `fn()` against central differences for
    every tensor in `inputs` (which must require grad). Run under float64.
    `fn` is re-evaluated for each perturbation, so it must be deterministic.
    """
    for x in inputs:
        x.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    errors = []
    for x, a in zip(inputs, analytic):
        n = numerical_grad(fn, x, eps)
        errors.append(relative_error(a, n))
    for x in inputs:
        x.grad = None
    return GradcheckResult(
        name=name,
        max_rel_error=max(errors) if errors else 0.0,
        per_input=tuple(errors),
        tolerance=tolerance,
    )
