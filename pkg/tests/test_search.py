import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optforge.errors import BudgetExhausted, ConfigError
from optforge.expr import HOLE, contains_op, is_complete, parse, serialize
from optforge.records import DUPLICATE, EARLY_STOPPED, EVALUATED, REJECTED_DESCENT, CandidateRecord
from optforge.screen import ScreenConfig
from optforge.search import (
    SearchConfig,
    mct_search,
    node_score,
    random_search,
    sample_seed,
    select_child,
    select_top_k,
)
from optforge.space import SpaceConfig, children

RHO = -ScreenConfig().loss_threshold
NO_DESCENT = ScreenConfig(use_descent_test=False)


def unit_noise(rule, salt=""):
    """Deterministic value in [-1, 1) from the rule's text."""
    digest = hashlib.blake2b((salt + serialize(rule)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**63 - 1.0


def length_evaluator(rule, seed):
    """Cheap stand-in: shorter rules score higher; rules using exp stop early."""
    if contains_op(rule, "exp"):
        return CandidateRecord(expr=serialize(rule), status=EARLY_STOPPED, score=RHO, eval_seed=seed)
    score = -len(serialize(rule)) / 10.0
    return CandidateRecord(expr=serialize(rule), status=EVALUATED, score=score, raw_metric=-score, eval_seed=seed)


def neg_evaluator(rule, seed):
    if contains_op(rule, "neg"):
        score = 1.0
    else:
        score = RHO + 0.5 + 0.4 * unit_noise(rule)
    return CandidateRecord(expr=serialize(rule), status=EVALUATED, score=score, eval_seed=seed)


def log_bytes(result):
    return "\n".join(r.to_json() for r in result.log).encode()


@pytest.fixture(scope="module")
def default_runs():
    runs = {}
    for flag in (False, True):
        cfg = SearchConfig(count_early_stopped_in_budget=flag)
        runs[flag] = mct_search(None, search_cfg=cfg, evaluator=length_evaluator)
    return runs


def test_budget_counts_evaluated_only(default_runs):
    result = default_runs[False]
    statuses = [r.status for r in result.log]
    assert statuses.count(EVALUATED) == 128
    assert statuses.count(REJECTED_DESCENT) > 0 and statuses.count(EARLY_STOPPED) > 0


def test_budget_counts_early_stopped_when_configured(default_runs):
    result = default_runs[True]
    statuses = [r.status for r in result.log]
    assert statuses.count(EVALUATED) + statuses.count(EARLY_STOPPED) == 128


def test_per_level_quota(default_runs):
    for flag, result in default_runs.items():
        counted = (EVALUATED, EARLY_STOPPED) if flag else (EVALUATED,)
        for level in range(1, 5):
            assert sum(r.level == level and r.status in counted for r in result.log) == 32


def test_log_order_and_slots(default_runs):
    for result in default_runs.values():
        keys = [(r.level, r.sample_index) for r in result.log]
        assert keys == sorted(keys) and len(set(keys)) == len(keys)


def test_duplicates_point_at_logged_hashes(default_runs):
    result = default_runs[False]
    first = {}
    for r in result.log:
        if r.status == DUPLICATE:
            assert r.hash in first
        elif r.hash is not None:
            first.setdefault(r.hash, r)


def test_rejected_and_duplicates_carry_no_score(default_runs):
    for r in default_runs[False].log:
        if r.status in (REJECTED_DESCENT, DUPLICATE):
            assert r.score is None


def test_path_descends_from_root(default_runs):
    path = default_runs[False].path
    assert 1 <= len(path) <= 4
    stems = [HOLE] + [parse(p) for p in path]
    for parent, child in zip(stems, stems[1:]):
        assert child in children(parent, SpaceConfig())


def test_selected_child_has_max_mean(default_runs):
    result = default_runs[False]
    for chosen, scores in zip(result.path, result.level_scores):
        eligible = {k: v for k, v in scores.items() if not math.isnan(v) and not is_complete(parse(k))}
        assert scores[chosen] == max(eligible.values())


def test_no_registered_score_at_or_below_threshold(default_runs):
    for scores in default_runs[False].level_scores:
        for text, s in scores.items():
            if not math.isnan(s) and not is_complete(parse(text)):
                assert s > RHO


@pytest.mark.parametrize("parallelism", [4, 8])
def test_log_independent_of_parallelism(default_runs, parallelism):
    cfg = SearchConfig(parallelism=parallelism)
    again = mct_search(None, search_cfg=cfg, evaluator=length_evaluator)
    assert log_bytes(again) == log_bytes(default_runs[False])
    assert again.path == default_runs[False].path


def test_neg_rules_drive_selection():
    cfg = SearchConfig(levels=1, samples_per_level=64)
    result = mct_search(None, screen_cfg=NO_DESCENT, search_cfg=cfg, evaluator=neg_evaluator)
    assert result.path == ["neg(<>)"]
    assert contains_op(parse(result.top_k[0].expr), "neg")


def test_depth_one_space_stops_after_first_level():
    space = SpaceConfig(max_depth=1)
    cfg = SearchConfig(levels=4, samples_per_level=3)
    result = mct_search(None, space_cfg=space, screen_cfg=NO_DESCENT, search_cfg=cfg, evaluator=length_evaluator)
    assert result.path == []
    assert len(result.level_scores) == 1
    assert all(v == 0.0 for v in result.level_scores[0].values())
    assert {r.level for r in result.log} == {1}
    assert len(result.top_k) == 3


def test_node_score_examples():
    a, b = parse("neg(<>)"), parse("sign(<>)")
    assert node_score({a: [-5.0, -7.0]}, a) == -6.0
    g = parse("g")
    assert node_score({g: [-1.0]}, g) == 0.0
    assert math.isnan(node_score({}, a))
    # Ties go to the first child in registry order.
    assert select_child([a, b], {a: [-1.0], b: [-1.0]}) == a
    assert select_child([b, a], {a: [-1.0], b: [-1.0]}) == b
    # Complete rules score 0 but are never expanded.
    assert select_child([g, a], {a: [-3.0]}) == a
    assert select_child([g], {}) is None


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.lists(st.floats(-100, 100), min_size=1, max_size=4), min_size=2, max_size=6),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_selection_invariant_under_affine_rescaling(groups, scale, shift):
    options = [parse(t) for t in ("neg(<>)", "sign(<>)", "exp(<>)", "log(<>)", "sqrt(<>)", "clip(<>)")][: len(groups)]
    scores = dict(zip(options, groups))
    rescaled = {k: [scale * v + shift for v in vs] for k, vs in scores.items()}
    means = {k: np.mean(v) for k, v in scores.items()}
    best = max(means.values())
    # Ignore near-ties, where rounding in the rescaled means may flip the order.
    if sum(m > best - 1e-6 * (1 + abs(best)) for m in means.values()) > 1:
        return
    assert select_child(options, scores) == select_child(options, rescaled)


def test_random_search_stems_are_root():
    cfg = SearchConfig(samples_per_level=8)
    result = random_search(None, search_cfg=cfg, evaluator=length_evaluator, budget=20)
    assert sum(r.status == EVALUATED for r in result.log) == 20
    assert all(r.stem == "<>" for r in result.log)
    again = random_search(None, search_cfg=cfg, evaluator=length_evaluator, budget=20)
    assert log_bytes(again) == log_bytes(result)


def test_random_search_default_budget_is_levels_times_samples():
    cfg = SearchConfig(levels=2, samples_per_level=5)
    result = random_search(None, search_cfg=cfg, evaluator=length_evaluator)
    assert sum(r.status == EVALUATED for r in result.log) == 10


def test_budget_exhausted_carries_partial_result():
    def always_stop(rule, seed):
        return CandidateRecord(expr=serialize(rule), status=EARLY_STOPPED, score=RHO)

    cfg = SearchConfig(levels=1, samples_per_level=2, attempt_factor=3)
    with pytest.raises(BudgetExhausted) as info:
        mct_search(None, screen_cfg=NO_DESCENT, search_cfg=cfg, evaluator=always_stop)
    partial = info.value.result
    assert len(partial.log) == 6 and partial.top_k == []


def test_top_k_prefers_threshold_passing_records():
    th = ScreenConfig().threshold_for("loss")
    log = [
        CandidateRecord(expr="a", status=EVALUATED, score=-20.0, level=1, sample_index=0),
        CandidateRecord(expr="b", status=EVALUATED, score=-3.0, level=1, sample_index=1),
        CandidateRecord(expr="c", status=EVALUATED, score=-3.0, level=1, sample_index=0),
        CandidateRecord(expr="d", status=EARLY_STOPPED, score=RHO, level=1, sample_index=2),
    ]
    assert [r.expr for r in select_top_k(log, 5, th)] == ["c", "b"]
    assert [r.expr for r in select_top_k(log, 5, th, use_threshold=False)] == ["c", "b", "a"]
    assert [r.expr for r in select_top_k(log[:1], 5, th)] == ["a"]


def test_sample_seed_depends_on_slot_only():
    assert sample_seed(0, 1, 2) == sample_seed(0, 1, 2)
    assert len({sample_seed(0, lvl, i) for lvl in range(4) for i in range(100)}) == 400


def test_search_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(levels=0)
    with pytest.raises(ConfigError):
        SearchConfig(parallelism=0)
    assert SearchConfig().budget == 128
