"""Desk-scale experiments shared by scripts/ and the acceptance tests."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import BudgetExhausted
from .screen import ScreenConfig
from .search import SearchConfig, SearchResult, eval_seed, mct_search, random_search
from .tasks import PRESETS, evaluate_optimizer, quadratic_task

ABLATION_SEEDS = tuple(range(8))
BASELINE_PRESETS = ("sgd", "momentum", "adam", "rmsprop")


@dataclass
class Top1:
    score: float
    expr: str
    exhausted: bool


def _run(search, *args, **kwargs) -> tuple:
    """Run a search; a run that hits the attempt cap keeps its partial result."""
    try:
        return search(*args, **kwargs), False
    except BudgetExhausted as exc:
        return exc.result, True


def _top1(result: SearchResult, exhausted: bool) -> Top1:
    best = result.top_k[0] if result.top_k else None
    return Top1(best.score if best else -np.inf, best.expr if best else "", exhausted)


def ablation_seed(seed: int, task=None, search_cfg: SearchConfig = SearchConfig()) -> dict:
    """Top-1 scores of MCT, random search, and MCT without score thresholding."""
    task = task if task is not None else quadratic_task(dim=20, condition_number=100.0, noise=0.1, seed=0)
    cfg = replace(search_cfg, master_seed=seed)
    out = {}
    out["mct"] = _top1(*_run(mct_search, task, search_cfg=cfg))
    out["random"] = _top1(*_run(random_search, task, search_cfg=cfg))
    out["no_threshold"] = _top1(*_run(mct_search, task, search_cfg=replace(cfg, use_threshold=False)))
    return out


def ablation(seeds=ABLATION_SEEDS, task=None, progress=None) -> dict:
    rows = {}
    for seed in seeds:
        rows[seed] = ablation_seed(seed, task)
        if progress:
            progress(seed, {k: asdict(v) for k, v in rows[seed].items()})
    means = {arm: float(np.mean([r[arm].score for r in rows.values()])) for arm in ("mct", "random", "no_threshold")}
    return {"rows": rows, "means": means}


def preset_baselines(task, screen_cfg: ScreenConfig = ScreenConfig(), seed: int = 0, names=BASELINE_PRESETS) -> dict:
    """Each preset at its best grid learning rate, scored on the full run."""
    return {name: evaluate_optimizer(PRESETS[name], task, task.grid(), screen_cfg, seed) for name in names}


def searched_vs_presets(task, search_cfg: SearchConfig = SearchConfig(), screen_cfg: ScreenConfig = ScreenConfig()):
    """Search, then compare the top-1 rule's full-run cumulative loss with the presets'.

    Presets use the same evaluation seed as the search, so all rules see the
    same initialization and minibatch order.
    """
    result, exhausted = _run(mct_search, task, screen_cfg=screen_cfg, search_cfg=search_cfg)
    baselines = preset_baselines(task, screen_cfg, eval_seed(search_cfg.master_seed))
    return result, exhausted, baselines
