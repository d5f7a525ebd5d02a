"""Rejection sampling: the train-free descent test, score thresholds and early stopping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .expr import make_stepper

LOSS = "loss"
ACCURACY = "accuracy"
METRIC_KINDS = (LOSS, ACCURACY)


@dataclass(frozen=True)
class DescentTestConfig:
    lambda_d: float = 0.15
    batch: int = 25
    dim: int = 100
    steps: int = 5
    seed: int = 0

    def __post_init__(self):
        if not -1 < self.lambda_d < 1:
            raise ValueError(f"lambda_d must lie in (-1, 1), got {self.lambda_d}")
        if self.batch < 1 or self.dim < 1 or self.steps < 1:
            raise ValueError("descent test batch, dim and steps must be >= 1")


def descent_test(rule, cfg: DescentTestConfig = DescentTestConfig()):
    """Mean cosine between phi(u) and u for Gaussian surrogate gradients u.

    Each of the `batch` draws runs a fresh state for `steps` steps (horizon
    = steps); the cosine is read at the last step. Zero updates count as
    cosine 0, and any non-finite update fails the test outright.

    Returns ``(passed, mean_cosine)``; ``mean_cosine`` is NaN for non-finite rules.
    """
    rng = np.random.default_rng(cfg.seed)
    grads = rng.standard_normal((cfg.steps, cfg.batch, cfg.dim))
    # All draws run side by side as rows of one state; rows never interact.
    stepper = make_stepper(rule, (cfg.batch, cfg.dim), cfg.steps, seed=cfg.seed)
    for g in grads:
        update = stepper.step(g)
        if not np.isfinite(update).all():
            return False, math.nan
    g = grads[-1]
    dots = np.einsum("ij,ij->i", update, g)
    norms = np.linalg.norm(update, axis=1) * np.linalg.norm(g, axis=1)
    cosines = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0)
    mean_cos = float(np.sum(cosines) / cfg.batch)
    return mean_cos > cfg.lambda_d, mean_cos


@dataclass(frozen=True)
class ScoreThreshold:
    """Raw threshold in the metric's own units; `canonical` is its higher-is-better form."""

    metric_kind: str = LOSS
    raw_threshold: float = 10.0

    def __post_init__(self):
        if self.metric_kind not in METRIC_KINDS:
            raise ValueError(f"metric_kind must be one of {METRIC_KINDS}")

    @property
    def canonical(self) -> float:
        return -self.raw_threshold if self.metric_kind == LOSS else self.raw_threshold


def canonical_score(metric: float, metric_kind: str) -> float:
    return -metric if metric_kind == LOSS else metric


def passes_threshold(score: float, th: ScoreThreshold) -> bool:
    if math.isnan(score) or score == -math.inf:
        return False
    return score > th.canonical


@dataclass(frozen=True)
class EarlyStopPolicy:
    loss_window: int = 10
    patience: int = 5
    accuracy_checkpoint_fraction: float = 0.10

    def __post_init__(self):
        if self.loss_window < 1 or self.patience < 1:
            raise ValueError("loss_window and patience must be >= 1")
        if not 0 < self.accuracy_checkpoint_fraction < 1:
            raise ValueError("accuracy_checkpoint_fraction must lie in (0, 1)")


def early_stop_check(
    loss_history,
    policy: EarlyStopPolicy,
    metric_kind: str = LOSS,
    elapsed_fraction: float = 0.0,
    current_metric: float = math.nan,
    raw_threshold: float = 0.20,
) -> bool:
    """Decide whether to terminate a training run now.

    Loss runs stop once the moving average of the loss has risen for
    `patience` consecutive steps and sits above the first full-window
    average. Accuracy runs stop once `elapsed_fraction` has passed the
    checkpoint with `current_metric` still below `raw_threshold`. Any
    non-finite loss stops immediately.
    """
    if len(loss_history) == 0:
        raise ValueError("loss history is empty")
    if not math.isfinite(loss_history[-1]):
        return True
    if metric_kind == ACCURACY:
        return (
            elapsed_fraction >= policy.accuracy_checkpoint_fraction
            and not current_metric >= raw_threshold
        )
    w, p = policy.loss_window, policy.patience
    n = len(loss_history)
    if n < w + p:
        return False
    tail = np.asarray(loss_history[n - w - p :], dtype=float)
    averages = np.convolve(tail, np.ones(w) / w, mode="valid")
    if not np.all(np.diff(averages) > 0):
        return False
    baseline = float(np.mean(loss_history[:w]))
    return averages[-1] > baseline


@dataclass(frozen=True)
class ScreenConfig:
    """Everything that decides whether a candidate is rejected or stopped early."""

    descent: DescentTestConfig = field(default_factory=DescentTestConfig)
    early_stop: EarlyStopPolicy = field(default_factory=EarlyStopPolicy)
    loss_threshold: float = 10.0
    accuracy_threshold: float = 0.20
    use_descent_test: bool = True

    def threshold_for(self, metric_kind: str) -> ScoreThreshold:
        raw = self.loss_threshold if metric_kind == LOSS else self.accuracy_threshold
        return ScoreThreshold(metric_kind, raw)
