"""Human-designed baseline optimizers as lr-free direction steppers."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..expr import AdamState, RMSpropState, parse

MOMENTUM = 0.9


class _SGD:
    def __init__(self, shape):
        pass

    def step(self, g):
        return np.asarray(g, dtype=float).copy()


class _HeavyBall:
    """PyTorch-style momentum buffer: buf <- mu*buf + g."""

    def __init__(self, shape, nesterov=False):
        self.buf = np.zeros(shape)
        self.nesterov = nesterov

    def step(self, g):
        self.buf = MOMENTUM * self.buf + g
        return g + MOMENTUM * self.buf if self.nesterov else self.buf.copy()


class _Adam:
    def __init__(self, shape):
        self.state = AdamState(np.zeros(shape), np.zeros(shape))

    def step(self, g):
        return self.state.update(np.asarray(g, dtype=float))


class _RMSprop:
    def __init__(self, shape):
        self.state = RMSpropState(np.zeros(shape))

    def step(self, g):
        return self.state.update(np.asarray(g, dtype=float))


@dataclass(frozen=True)
class PresetOptimizer:
    name: str
    factory: Callable
    expression: Optional[str] = None

    def stepper(self, dim, T, seed=0):
        shape = tuple(dim) if isinstance(dim, (tuple, list)) else (dim,)
        return self.factory(shape)

    def tree(self):
        return None if self.expression is None else parse(self.expression)


PRESETS = {
    "sgd": PresetOptimizer("sgd", _SGD, expression="g"),
    "momentum": PresetOptimizer("momentum", _HeavyBall),
    "nesterov": PresetOptimizer("nesterov", lambda shape: _HeavyBall(shape, nesterov=True)),
    "adam": PresetOptimizer("adam", _Adam),
    "rmsprop": PresetOptimizer("rmsprop", _RMSprop),
}
