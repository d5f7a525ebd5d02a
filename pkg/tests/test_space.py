import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optforge.errors import ConfigError, ExplosionGuard, NoHoles, UnrollBudgetExceeded
from optforge.expr import DEFAULT_REGISTRY, HOLE, evaluate_step, is_complete, length, parse, reset_state, serialize
from optforge.space import (
    CONSTANT_REDUCING,
    DEFAULT_CONSTRAINTS,
    NO_CONSTRAINTS,
    NULLIFYING,
    ConstraintSet,
    SpaceConfig,
    children,
    enumerate_rules,
    fill_leftmost,
    inserted_operator,
    unroll,
)

R = DEFAULT_REGISTRY
SMALL = R.subset(["sign", "add", "g", "one"])


def brute_force(arity: dict, forbidden: set, max_len: int) -> set:
    """All trees with <= max_len nodes, generated by size and filtered afterwards."""
    by_size = {}
    for n in range(1, max_len + 1):
        trees = []
        for name, k in arity.items():
            if k == 0 and n == 1:
                trees.append((name,))
            elif k == 1 and n >= 2:
                trees += [(name, c) for c in by_size[n - 1]]
            elif k == 2 and n >= 3:
                for left in range(1, n - 1):
                    trees += [(name, a, b) for a in by_size[left] for b in by_size[n - 1 - left]]
        by_size[n] = trees

    def clean(t):
        return all((t[0], c[0]) not in forbidden and clean(c) for c in t[1:])

    def render(t):
        return t[0] if len(t) == 1 else f"{t[0]}({', '.join(render(c) for c in t[1:])})"

    return {render(t) for n in by_size for t in by_size[n] if clean(t)}


def small_oracle(max_len):
    arity = {"sign": 1, "add": 2, "g": 0, "one": 0}
    forbidden = {p for p in DEFAULT_CONSTRAINTS.forbidden_pairs if set(p) <= set(arity)}
    return brute_force(arity, forbidden, max_len)


def test_root_has_27_children():
    assert len(children(HOLE, SpaceConfig())) == 27


def test_sign_children_respect_constraints():
    kids = children(parse("sign(<>)"), SpaceConfig())
    inserted = {inserted_operator(parse("sign(<>)"), k) for k in kids}
    banned = {"sign", "sign_g", "sign_m1", "clip", "one", "two", "ld", "cd", "rd"}
    assert not inserted & banned
    assert inserted | banned == set(R.names)


def test_fill_with_sqrt():
    child = fill_leftmost(parse("div(m1, <>)"), parse("sqrt(<>)"))
    assert serialize(child) == "div(m1, sqrt(<>))"
    assert child in children(parse("div(m1, <>)"), SpaceConfig())
    with pytest.raises(NoHoles):
        fill_leftmost(parse("g"), parse("g"))


def test_children_grow_by_one():
    stem = parse("add(<>, <>)")
    for c in children(stem, SpaceConfig()):
        assert length(c) == length(stem) + 1


def test_unroll_complete_stem_unchanged():
    rule = parse("div(m1, sqrt(m2))")
    assert unroll(rule, SpaceConfig(), np.random.default_rng(0)) is rule


def test_unroll_depth_one_returns_input():
    cfg = SpaceConfig(max_depth=1)
    rng = np.random.default_rng(0)
    for _ in range(50):
        rule = unroll(HOLE, cfg, rng)
        assert rule.op.arity == 0


def test_unroll_samples_are_valid():
    cfg = SpaceConfig()
    rng = np.random.default_rng(1)
    stem = parse("div(m1, <>)")
    for _ in range(10_000):
        rule = unroll(stem, cfg, rng)
        assert is_complete(rule)
        assert length(rule) <= 10
        assert DEFAULT_CONSTRAINTS.is_clean(rule)
        assert rule.op.name == "div" and serialize(rule.children[0]) == "m1"


def test_unroll_restart_cap():
    cfg = SpaceConfig(max_depth=2)
    with pytest.raises(UnrollBudgetExceeded):
        unroll(parse("add(<>, <>)"), cfg, np.random.default_rng(0), max_restarts=5)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_enumeration_matches_brute_force(n):
    cfg = SpaceConfig(registry=SMALL)
    got = {serialize(r) for r in enumerate_rules(cfg, n)}
    assert got == small_oracle(n)


def test_enumeration_examples():
    cfg = SpaceConfig(registry=SMALL)
    assert {serialize(r) for r in enumerate_rules(cfg, 1)} == {"g", "one"}
    assert {serialize(r) for r in enumerate_rules(cfg, 2)} == {"g", "one", "sign(g)"}


def test_enumeration_without_constraints_matches_brute_force():
    reg = R.subset(["neg", "sqrt", "mul", "g", "two"])
    cfg = SpaceConfig(registry=reg, constraints=NO_CONSTRAINTS)
    got = {serialize(r) for r in enumerate_rules(cfg, 4)}
    assert got == brute_force({"neg": 1, "sqrt": 1, "mul": 2, "g": 0, "two": 0}, set(), 4)


def test_enumeration_explosion_guard():
    with pytest.raises(ExplosionGuard):
        enumerate_rules(SpaceConfig(), 6, cap=1000)


def test_constraint_entries_round_trip():
    again = ConstraintSet.from_entries(DEFAULT_CONSTRAINTS.to_entries())
    assert again.forbidden_pairs == DEFAULT_CONSTRAINTS.forbidden_pairs
    with pytest.raises(ConfigError):
        ConstraintSet.from_entries(["sign => [g]"])
    with pytest.raises(ConfigError):
        ConstraintSet.from_entries(["sign -> [nope]"])


def test_space_config_validates_depth():
    with pytest.raises(ConfigError):
        SpaceConfig(max_depth=0)


# Each pruned composition and the simpler rule it collapses to.
REDUCTIONS = {
    ("log", "exp"): ("log(exp(g))", "g"),
    ("neg", "neg"): ("neg(neg(g))", "g"),
    ("sign", "one"): ("sign(one)", "one"),
    ("sign", "two"): ("sign(two)", "one"),
    ("sign", "ld"): ("sign(ld)", "one"),
    ("sign", "cd"): ("sign(cd)", "one"),
    ("sign", "rd"): ("sign(rd)", "one"),
    ("sqrt", "sign"): ("sqrt(sign(g))", "one"),
    ("sqrt", "one"): ("sqrt(one)", "one"),
    ("clip", "one"): ("clip(one)", 0.003),
    ("clip", "two"): ("clip(two)", 0.003),
}


def _trajectory(text, grads):
    if isinstance(text, float):
        return [np.full(grads.shape[1], text) for _ in grads]
    rule = parse(text)
    state = reset_state(grads.shape[1], len(grads), 0)
    return [evaluate_step(rule, g, state).update for g in grads]


def test_constraint_soundness():
    tagged = {p for p, tag in DEFAULT_CONSTRAINTS.notes.items() if tag in (NULLIFYING, CONSTANT_REDUCING)}
    assert tagged == set(REDUCTIONS)
    rng = np.random.default_rng(0)
    # 100 random vectors, one per step, so the decay inputs sweep t = 0..99.
    grads = rng.standard_normal((100, 32)) * 10 ** rng.uniform(-3, 1, size=(100, 1))
    for composed, reduced in REDUCTIONS.values():
        for a, b in zip(_trajectory(composed, grads), _trajectory(reduced, grads)):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12, err_msg=composed)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 10))
def test_unroll_never_violates_constraints(seed, depth):
    cfg = SpaceConfig(max_depth=depth)
    rule = unroll(HOLE, cfg, np.random.default_rng(seed))
    assert is_complete(rule) and length(rule) <= depth
    assert DEFAULT_CONSTRAINTS.is_clean(rule)


def test_children_in_registry_order():
    kids = children(HOLE, SpaceConfig())
    assert [k.op.name for k in kids] == R.names
