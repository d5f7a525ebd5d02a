"""Learning-rate grid search on a proxy run followed by one full training run."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..expr import make_stepper, rule_name
from ..records import EARLY_STOPPED, EVALUATED, CandidateRecord
from ..screen import ACCURACY, LOSS, EarlyStopPolicy, ScreenConfig, early_stop_check
from .base import GridSearchConfig, Task


@dataclass
class RunResult:
    losses: list
    stopped: bool
    params: np.ndarray
    steps: int

    @property
    def cumulative_loss(self) -> float:
        return float(np.sum(self.losses))

    @property
    def mean_loss(self) -> float:
        return self.cumulative_loss / self.steps


def train(
    rule,
    task: Task,
    lr: float,
    steps: int,
    seed: int = 0,
    policy: Optional[EarlyStopPolicy] = None,
    metric_kind: str = LOSS,
    raw_threshold: float = 0.20,
) -> RunResult:
    """Run theta <- theta - lr * phi(g) for `steps` steps; `policy=None` disables early stopping."""
    params = task.init_params(seed)
    stream = task.batch_stream(seed)
    stepper = make_stepper(rule, task.dim, steps, seed)
    losses = []
    checkpoint = None
    if policy is not None and metric_kind == ACCURACY:
        checkpoint = max(1, math.ceil(policy.accuracy_checkpoint_fraction * steps))
    for k in range(steps):
        loss, grad = task.loss_and_gradient(params, next(stream))
        losses.append(loss)
        if policy is not None:
            if metric_kind == ACCURACY:
                stop = not math.isfinite(loss)
                if not stop and k + 1 == checkpoint:
                    stop = early_stop_check(
                        losses, policy, ACCURACY, (k + 1) / steps, task.metric(params), raw_threshold
                    )
            else:
                stop = early_stop_check(losses, policy, LOSS)
            if stop:
                return RunResult(losses, True, params, steps)
        with np.errstate(all="ignore"):
            params = params - lr * stepper.step(grad)
        if not np.isfinite(params).all():
            losses.append(math.nan)
            return RunResult(losses, True, params, steps)
    return RunResult(losses, False, params, steps)


def grid_search(rule, task: Task, grid: GridSearchConfig, policy: Optional[EarlyStopPolicy], seed: int = 0):
    """Return (best_lr, proxy_scores) where proxy scores are -mean proxy loss; None for stopped arms."""
    scores = {}
    best_lr, best = None, -math.inf
    # Ascending order with strict improvement breaks ties toward the smaller lr.
    for lr in sorted(grid.lr_grid):
        run = train(rule, task, lr, grid.proxy_steps, seed, policy, LOSS)
        score = -run.mean_loss
        if run.stopped or not math.isfinite(score):
            scores[lr] = None
            continue
        scores[lr] = score
        if score > best:
            best_lr, best = lr, score
    return best_lr, scores


def evaluate_optimizer(
    rule,
    task: Task,
    grid: Optional[GridSearchConfig] = None,
    screen_cfg: ScreenConfig = ScreenConfig(),
    seed: int = 0,
    early_stopping: bool = True,
) -> CandidateRecord:
    grid = grid or task.grid()
    policy = screen_cfg.early_stop if early_stopping else None
    threshold = screen_cfg.threshold_for(task.metric_kind)
    name = rule_name(rule)

    best_lr, _ = grid_search(rule, task, grid, policy, seed)
    if best_lr is None:
        return CandidateRecord(name, EARLY_STOPPED, score=threshold.canonical, eval_seed=seed)

    run = train(rule, task, best_lr, task.full_steps, seed, policy, task.metric_kind, threshold.raw_threshold)
    if task.metric_kind == ACCURACY:
        raw = task.metric(run.params) if np.isfinite(run.params).all() else math.nan
        score = raw
    else:
        raw = run.cumulative_loss
        score = -run.mean_loss
    if run.stopped or not math.isfinite(score):
        return CandidateRecord(name, EARLY_STOPPED, score=threshold.canonical, best_lr=best_lr, raw_metric=raw, eval_seed=seed)
    return CandidateRecord(name, EVALUATED, score=score, best_lr=best_lr, raw_metric=raw, eval_seed=seed)
