from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..screen import LOSS

MNISTNET_LR_GRID = (0.0006, 0.001, 0.003, 0.006, 0.01, 0.03, 0.06, 0.1, 0.3, 1.0)


@dataclass(frozen=True)
class GridSearchConfig:
    lr_grid: tuple = MNISTNET_LR_GRID
    proxy_steps: int = 100

    def __post_init__(self):
        if not self.lr_grid:
            raise ValueError("lr_grid must not be empty")
        if self.proxy_steps < 1:
            raise ValueError("proxy_steps must be >= 1")


class Task:
    """A differentiable training problem.

    Subclasses provide `init_params`, `batch_stream`, `loss` and `gradient`.
    `metric_kind` is the full-run search signal: "loss" (cumulative training
    loss) or "accuracy" (held-out accuracy from `metric`). Proxy runs are
    always scored by training loss.
    """

    name = "task"
    metric_kind = LOSS
    dim: int
    proxy_steps: int = 100
    full_steps: int = 1000
    batch_size: int = 1
    lr_grid: tuple = MNISTNET_LR_GRID

    def init_params(self, seed: int) -> np.ndarray:
        raise NotImplementedError

    def batch_stream(self, seed: int) -> Iterator:
        raise NotImplementedError

    def loss(self, params: np.ndarray, batch) -> float:
        raise NotImplementedError

    def gradient(self, params: np.ndarray, batch) -> np.ndarray:
        raise NotImplementedError

    def loss_and_gradient(self, params, batch):
        return self.loss(params, batch), self.gradient(params, batch)

    def metric(self, params: np.ndarray) -> float:
        raise NotImplementedError(f"{self.name} has no held-out metric")

    def grid(self) -> GridSearchConfig:
        return GridSearchConfig(tuple(self.lr_grid), self.proxy_steps)

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim}
