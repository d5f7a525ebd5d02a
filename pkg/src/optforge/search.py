"""Monte-Carlo tree sampling over the super-tree, plus the random-search baseline.

At each level the current node's children are scored by sampling: pick a
random admissible child, complete it at random, screen it (descent test,
equivalent-form lookup), evaluate it and register its score under the child
if it clears the threshold. Once M budget-counted evaluations have been
collected, the search moves to the child with the best mean score.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .equiv import DedupTable, Duplicate, ProbeConfig, hash_code
from .errors import BudgetExhausted, ConfigError
from .expr import HOLE, Tree, is_complete, serialize
from .records import DUPLICATE, EARLY_STOPPED, EVALUATED, REJECTED_DESCENT, CandidateRecord
from .screen import ScoreThreshold, ScreenConfig, descent_test, passes_threshold
from .space import SpaceConfig, children, min_completion_length, unroll

Evaluator = Callable[[Tree, int], CandidateRecord]


@dataclass(frozen=True)
class SearchConfig:
    levels: int = 4
    samples_per_level: int = 32
    proposal_size: int = 5
    count_early_stopped_in_budget: bool = False
    master_seed: int = 0
    parallelism: int = 1
    restart_per_level: bool = False
    use_threshold: bool = True
    attempt_factor: int = 100
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if self.levels < 1 or self.samples_per_level < 1:
            raise ConfigError("levels and samples_per_level must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")

    @property
    def budget(self) -> int:
        return self.levels * self.samples_per_level


@dataclass
class SearchResult:
    top_k: list
    log: list
    path: list = field(default_factory=list)
    level_scores: list = field(default_factory=list)

    @property
    def totals(self) -> dict:
        counts = {EVALUATED: 0, EARLY_STOPPED: 0, REJECTED_DESCENT: 0, DUPLICATE: 0}
        for rec in self.log:
            counts[rec.status] += 1
        return {
            "evaluated": counts[EVALUATED],
            "early_stopped": counts[EARLY_STOPPED],
            "rejected_descent": counts[REJECTED_DESCENT],
            "duplicates": counts[DUPLICATE],
        }


def sample_seed(master_seed: int, level: int, index: int) -> int:
    """Seed for one sample slot; independent of scheduling order."""
    return int(np.random.SeedSequence([master_seed, level, index]).generate_state(1)[0])


def eval_seed(master_seed: int) -> int:
    return int(np.random.SeedSequence([master_seed, 0x5EED]).generate_state(1)[0])


def node_score(scores: dict, child: Tree) -> float:
    """Mean registered score; complete rules score 0; no scores means ineligible (NaN)."""
    if is_complete(child):
        return 0.0
    values = scores.get(child)
    if not values:
        return math.nan
    return float(sum(values) / len(values))


def select_child(options: list, scores: dict) -> Optional[Tree]:
    """Best-scoring expandable child; ties go to the earliest (registry-order) child.

    Complete children cannot be expanded and are never selected.
    """
    best, best_score = None, -math.inf
    for child in options:
        if is_complete(child):
            continue
        s = node_score(scores, child)
        if math.isnan(s):
            continue
        if best is None or s > best_score:
            best, best_score = child, s
    return best


class _Engine:
    """Shared candidate pipeline: sample -> descent test -> dedup -> evaluate -> log."""

    def __init__(self, task, space_cfg, screen_cfg, search_cfg, evaluator, pool):
        self.space_cfg = space_cfg
        self.screen_cfg = screen_cfg
        self.cfg = search_cfg
        self.threshold: ScoreThreshold = screen_cfg.threshold_for(task.metric_kind if task is not None else "loss")
        self.evaluator = evaluator
        self.pool = pool
        self.table = DedupTable()
        self.log: list = []
        self._descent_cache: dict = {}
        self._hash_cache: dict = {}
        self.eval_seed = eval_seed(search_cfg.master_seed)

    def _descent(self, rule):
        key = serialize(rule)
        if key not in self._descent_cache:
            self._descent_cache[key] = descent_test(rule, self.screen_cfg.descent)
        return self._descent_cache[key]

    def _hash(self, rule):
        key = serialize(rule)
        if key not in self._hash_cache:
            self._hash_cache[key] = hash_code(rule, self.cfg.probe)
        return self._hash_cache[key]

    def counts_toward_budget(self, rec: CandidateRecord) -> bool:
        if rec.status == EVALUATED:
            return True
        return rec.status == EARLY_STOPPED and self.cfg.count_early_stopped_in_budget

    def registers(self, rec: CandidateRecord) -> bool:
        if rec.status not in (EVALUATED, EARLY_STOPPED):
            return False
        if not self.cfg.use_threshold:
            return True
        return passes_threshold(rec.score, self.threshold)

    def run_level(self, level: int, pick_stem: Callable, quota: int, on_result: Callable) -> None:
        """Collect `quota` budget-counted evaluations for one level.

        Attempts are numbered; each draws its randomness from its own seed.
        Evaluations run in batches of `parallelism`, but results are committed
        strictly in attempt order and anything past the quota is discarded,
        so the log does not depend on the batch size.
        """
        counted = 0
        index = 0
        max_attempts = self.cfg.attempt_factor * quota
        while counted < quota:
            buffer, pending = [], []
            while len(pending) < self.cfg.parallelism:
                if index >= max_attempts:
                    break
                rng = np.random.default_rng(sample_seed(self.cfg.master_seed, level, index))
                stem = pick_stem(rng)
                rule = unroll(stem, self.space_cfg, rng)
                base = dict(expr=serialize(rule), level=level, sample_index=index, stem=serialize(stem))
                index += 1
                if self.screen_cfg.use_descent_test:
                    passed, cosine = self._descent(rule)
                    base["cosine"] = cosine
                    if not passed:
                        buffer.append(("log", CandidateRecord(status=REJECTED_DESCENT, **base), None))
                        continue
                code = self._hash(rule)
                verdict = self.table.check_and_insert(rule, code)
                if isinstance(verdict, Duplicate):
                    buffer.append(("log", CandidateRecord(status=DUPLICATE, hash=code.hex, **base), None))
                    continue
                item = ["eval", None, (rule, stem, code, verdict.entry, base)]
                buffer.append(item)
                pending.append(item)
            if not buffer:
                raise BudgetExhausted(
                    f"level {level}: only {counted} of {quota} evaluations after {max_attempts} attempts"
                )

            results = list(self.pool.map(lambda it: self.evaluator(it[2][0], self.eval_seed), pending))
            for item, res in zip(pending, results):
                item[1] = res

            for pos, (kind, rec, extra) in enumerate(buffer):
                if kind == "eval":
                    rule, stem, code, entry, base = extra
                    rec = CandidateRecord(
                        status=rec.status,
                        hash=code.hex,
                        score=rec.score,
                        best_lr=rec.best_lr,
                        raw_metric=rec.raw_metric,
                        eval_seed=rec.eval_seed,
                        **base,
                    )
                    entry.record = rec
                    self.log.append(rec)
                    on_result(stem, rec, self.registers(rec))
                    if self.counts_toward_budget(rec):
                        counted += 1
                        if counted == quota:
                            for later_kind, _, later in buffer[pos + 1 :]:
                                if later_kind == "eval":
                                    self.table.release(later[2])
                            return
                else:
                    self.log.append(rec)

    def top_k(self) -> list:
        return select_top_k(self.log, self.cfg.proposal_size, self.threshold, self.cfg.use_threshold)


def select_top_k(log, k: int, threshold: ScoreThreshold, use_threshold: bool = True) -> list:
    """Best `k` evaluated records; threshold-passing ones first when any exist."""
    pool = [r for r in log if r.status == EVALUATED and r.score is not None]
    if use_threshold:
        passing = [r for r in pool if passes_threshold(r.score, threshold)]
        pool = passing or pool
    pool.sort(key=lambda r: (-r.score, r.level, r.sample_index))
    return pool[:k]


def _default_evaluator(task, screen_cfg):
    from .tasks.evaluate import evaluate_optimizer

    grid = task.grid()

    def evaluate(rule, seed):
        return evaluate_optimizer(rule, task, grid, screen_cfg, seed)

    return evaluate


def mct_search(
    task,
    space_cfg: SpaceConfig = SpaceConfig(),
    screen_cfg: ScreenConfig = ScreenConfig(),
    search_cfg: SearchConfig = SearchConfig(),
    evaluator: Optional[Evaluator] = None,
) -> SearchResult:
    evaluator = evaluator or _default_evaluator(task, screen_cfg)
    with ThreadPoolExecutor(max_workers=search_cfg.parallelism) as pool:
        engine = _Engine(task, space_cfg, screen_cfg, search_cfg, evaluator, pool)
        current = HOLE
        path, level_scores = [], []
        for level in range(1, search_cfg.levels + 1):
            if search_cfg.restart_per_level:
                current = HOLE
            options = [
                c for c in children(current, space_cfg) if min_completion_length(c) <= space_cfg.max_depth
            ]
            if not options:
                break
            scores: dict = {}

            def pick(rng, options=options):
                return options[int(rng.integers(len(options)))]

            def register(stem, rec, ok, scores=scores):
                if ok:
                    scores.setdefault(stem, []).append(rec.score)

            try:
                engine.run_level(level, pick, search_cfg.samples_per_level, register)
            except BudgetExhausted as exc:
                exc.result = SearchResult(engine.top_k(), engine.log, path, level_scores)
                raise
            level_scores.append({serialize(c): node_score(scores, c) for c in options})
            chosen = select_child(options, scores)
            if chosen is None:
                break
            current = chosen
            path.append(serialize(chosen))
        return SearchResult(engine.top_k(), engine.log, path, level_scores)


def random_search(
    task,
    space_cfg: SpaceConfig = SpaceConfig(),
    screen_cfg: ScreenConfig = ScreenConfig(),
    search_cfg: SearchConfig = SearchConfig(),
    evaluator: Optional[Evaluator] = None,
    budget: Optional[int] = None,
) -> SearchResult:
    """Every candidate is unrolled from the root; screening, dedup and budget rules are unchanged."""
    evaluator = evaluator or _default_evaluator(task, screen_cfg)
    budget = search_cfg.budget if budget is None else budget
    with ThreadPoolExecutor(max_workers=search_cfg.parallelism) as pool:
        engine = _Engine(task, space_cfg, screen_cfg, search_cfg, evaluator, pool)
        try:
            engine.run_level(0, lambda rng: HOLE, budget, lambda *a: None)
        except BudgetExhausted as exc:
            exc.result = SearchResult(engine.top_k(), engine.log)
            raise
        return SearchResult(engine.top_k(), engine.log)
