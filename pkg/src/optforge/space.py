"""The super-tree search space.

Each super-tree node holds a (possibly partial) rule. A child is produced by
filling the leftmost hole with one operator from the registry; unary and
binary operators bring fresh holes for their operands.  Parent->child
operator pairs listed in a :class:`ConstraintSet` are never generated.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, ExplosionGuard, NoHoles, UnrollBudgetExceeded
from .expr import (
    DEFAULT_REGISTRY,
    HOLE,
    Node,
    OperatorRegistry,
    Tree,
    count_holes,
    is_complete,
    iter_nodes,
    length,
    serialize,
)

NULLIFYING = "nullifying"
REDUNDANT = "redundant"
CONSTANT_REDUCING = "constant-reducing"
# Approximately constant: clip of a decay schedule equals the clip bound
# except where the schedule dips below it.
NEAR_CONSTANT = "near-constant"
CUSTOM = "custom"


@dataclass(frozen=True)
class ConstraintSet:
    forbidden_pairs: frozenset
    notes: dict = field(default_factory=dict, compare=False, hash=False)

    def forbids(self, parent: Optional[str], child: str) -> bool:
        return parent is not None and (parent, child) in self.forbidden_pairs

    def violations(self, expr: Tree) -> list:
        """All forbidden (parent, child) pairs present in `expr`."""
        found = []
        for node in iter_nodes(expr):
            for c in node.children:
                if c is not HOLE and self.forbids(node.op.name, c.op.name):
                    found.append((node.op.name, c.op.name))
        return found

    def is_clean(self, expr: Tree) -> bool:
        return not self.violations(expr)

    def to_entries(self) -> list:
        by_parent = {}
        for parent, child in sorted(self.forbidden_pairs):
            by_parent.setdefault(parent, []).append(child)
        return [f"{p} -> [{', '.join(cs)}]" for p, cs in by_parent.items()]

    @classmethod
    def from_entries(cls, entries: Iterable[str], registry: OperatorRegistry = DEFAULT_REGISTRY):
        """Build from ``"parent -> [child, child]"`` strings."""
        pairs, notes = set(), {}
        pattern = re.compile(r"^\s*(\w+)\s*->\s*\[([\w\s,]*)\]\s*$")
        for entry in entries:
            m = pattern.match(entry)
            if m is None:
                raise ConfigError(f"bad constraint entry {entry!r}; expected 'parent -> [child, ...]'")
            parent = m.group(1)
            children = [c.strip() for c in m.group(2).split(",") if c.strip()]
            for name in [parent, *children]:
                if name not in registry:
                    raise ConfigError(f"constraint entry {entry!r} names unknown operator {name!r}")
            for child in children:
                pairs.add((parent, child))
                notes[(parent, child)] = DEFAULT_CONSTRAINTS.notes.get((parent, child), CUSTOM)
        return cls(frozenset(pairs), notes)


def _default_constraints() -> ConstraintSet:
    notes = {
        ("log", "exp"): NULLIFYING,
        ("neg", "neg"): NULLIFYING,
        ("sign", "sign"): REDUNDANT,
        ("sign", "sign_m1"): REDUNDANT,
        ("sign", "sign_g"): REDUNDANT,
        ("sign", "clip"): REDUNDANT,
        ("sign", "one"): CONSTANT_REDUCING,
        ("sign", "two"): CONSTANT_REDUCING,
        ("sign", "ld"): CONSTANT_REDUCING,
        ("sign", "cd"): CONSTANT_REDUCING,
        ("sign", "rd"): CONSTANT_REDUCING,
        ("sqrt", "sign"): CONSTANT_REDUCING,
        ("sqrt", "one"): CONSTANT_REDUCING,
        ("clip", "clip"): REDUNDANT,
        ("clip", "one"): CONSTANT_REDUCING,
        ("clip", "two"): CONSTANT_REDUCING,
        ("clip", "ld"): NEAR_CONSTANT,
        ("clip", "cd"): NEAR_CONSTANT,
        ("clip", "rd"): NEAR_CONSTANT,
    }
    return ConstraintSet(frozenset(notes), notes)


DEFAULT_CONSTRAINTS = _default_constraints()
NO_CONSTRAINTS = ConstraintSet(frozenset(), {})


@dataclass(frozen=True)
class SpaceConfig:
    max_depth: int = 10
    registry: OperatorRegistry = DEFAULT_REGISTRY
    constraints: ConstraintSet = DEFAULT_CONSTRAINTS

    def __post_init__(self):
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be >= 1, got {self.max_depth}")


def hole_parent(expr: Tree) -> Optional[str]:
    """Operator name owning the leftmost hole; None when the hole is the root."""
    if expr is HOLE:
        return None
    found = _find_hole_parent(expr)
    if found is False:
        raise NoHoles(f"rule {serialize(expr)} is complete")
    return found


def _find_hole_parent(node: Node):
    for c in node.children:
        if c is HOLE:
            return node.op.name
        found = _find_hole_parent(c)
        if found is not False:
            return found
    return False


def fill_leftmost(expr: Tree, filler: Node) -> Tree:
    out, done = _fill(expr, filler)
    if not done:
        raise NoHoles(f"rule {serialize(expr)} is complete")
    return out


def _fill(expr, filler):
    if expr is HOLE:
        return filler, True
    kids = list(expr.children)
    for i, c in enumerate(kids):
        new, done = _fill(c, filler)
        if done:
            kids[i] = new
            return Node(expr.op, tuple(kids)), True
    return expr, False


def children(rule: Tree, cfg: SpaceConfig) -> list:
    """Child rules in registry order, one per admissible operator at the leftmost hole."""
    parent = hole_parent(rule)
    out = []
    for op in cfg.registry.ops:
        if cfg.constraints.forbids(parent, op.name):
            continue
        out.append(fill_leftmost(rule, Node(op, (HOLE,) * op.arity)))
    return out


def inserted_operator(parent: Tree, child: Tree) -> str:
    """Name of the operator `child` added to `parent`'s leftmost hole."""
    if parent is HOLE:
        return child.op.name
    for p, c in zip(parent.children, child.children):
        if p != c:
            return inserted_operator(p, c)
    raise ValueError(f"{serialize(child)} is not a child of {serialize(parent)}")


def min_completion_length(rule: Tree) -> int:
    """Shortest complete rule reachable from `rule` (each hole needs at least one leaf)."""
    return length(rule) + count_holes(rule)


def unroll(stem: Tree, cfg: SpaceConfig, rng: np.random.Generator, max_restarts: int = 10_000) -> Tree:
    """Randomly complete `stem`, restarting from it whenever the depth bound is hit."""
    if is_complete(stem):
        return stem
    restarts = 0
    current = stem
    while True:
        options = children(current, cfg)
        if options:
            current = options[int(rng.integers(len(options)))]
            if is_complete(current):
                return current
            if length(current) < cfg.max_depth:
                continue
        restarts += 1
        if restarts > max_restarts:
            raise UnrollBudgetExceeded(
                f"could not complete {serialize(stem)} within depth {cfg.max_depth} "
                f"after {max_restarts} restarts"
            )
        current = stem


def enumerate_rules(cfg: SpaceConfig, max_len: int, cap: int = 1_000_000) -> set:
    """Every constraint-clean complete rule of length <= max_len."""
    found = set()
    stack = [HOLE]
    visited = 0
    while stack:
        rule = stack.pop()
        visited += 1
        if visited > cap or len(found) > cap:
            raise ExplosionGuard(f"enumeration exceeded {cap} nodes at max_len={max_len}")
        if is_complete(rule):
            found.add(rule)
            continue
        for child in children(rule, cfg):
            if min_completion_length(child) <= max_len:
                stack.append(child)
    return found
