# emotion_ensemble/ndcore/optim.py
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import ConfigError
from .tensor import Parameter

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 1e-5
    velocity: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")


def sgd_step(state: OptimizerState, params: Iterable[Parameter]) -> None:
    """
    v <- momentum * v + grad + weight_decay * w
    w <- w - lr * v
    Gradients are cleared afterwards; frozen parameters are left untouched.
    """
    for p in params:
        if p.grad is not None and not p.frozen:
            g = p.grad + state.weight_decay * p.data if state.weight_decay else p.grad
            v = state.velocity.get(id(p))
            v = g.copy() if v is None else state.momentum * v + g
            state.velocity[id(p)] = v
            p.data -= (state.learning_rate * v).astype(p.dtype, copy=False)
        p.grad = None


class SGD:
    """Stateful wrapper binding a parameter list to an OptimizerState."""

    def __init__(self, params: Sequence[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 1e-5):
        self.params = list(params)
        self.state = OptimizerState(learning_rate=lr, momentum=momentum, weight_decay=weight_decay)

    @property
    def lr(self) -> float:
        return self.state.learning_rate

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.learning_rate = float(value)

    def step(self) -> None:
        sgd_step(self.state, self.params)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class ReduceLROnPlateau:
    """
    Multiply the learning rate by `factor` once the monitored loss has not
    improved by more than `min_delta` for `patience` consecutive epochs.
    """

    def __init__(self, optimizer: SGD, factor: float = 0.1, patience: int = 2,
                 min_delta: float = 1e-4, min_lr: float = 1e-8):
        if not 0.0 < factor < 1.0:
            raise ConfigError(f"plateau factor must be in (0, 1), got {factor}")
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.min_lr = min_lr
        self.best = float("inf")
        self.num_bad_epochs = 0
        self.history: list[float] = []

    def step(self, loss: float) -> float:
        """Record one epoch's validation loss; return the (possibly reduced) lr."""
        self.history.append(float(loss))
        if loss < self.best - self.min_delta:
            self.best = float(loss)
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1

        if self.num_bad_epochs >= self.patience:
            old = self.optimizer.lr
            new = max(old * self.factor, self.min_lr)
            if new < old:
                self.optimizer.lr = new
                log.info("plateau: learning rate %.3g -> %.3g", old, new)
            self.num_bad_epochs = 0
        return self.optimizer.lr


def reduce_lr_on_plateau(history: Sequence[float], lr: float, factor: float = 0.1, patience: int = 2,
                         min_delta: float = 1e-4, min_lr: float = 1e-8) -> float:
    """Replay a validation-loss series through the scheduler and return the final lr."""
    if not history:
        raise ConfigError("reduce_lr_on_plateau needs at least one recorded epoch")
    sched = ReduceLROnPlateau(SGD([], lr), factor, patience, min_delta, min_lr)
    for loss in history:
        sched.step(loss)
    return sched.optimizer.lr
