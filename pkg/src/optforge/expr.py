"""Operators, expression trees and the stateful update-rule interpreter.

An update rule is a tree of operators. Leaves are *input* operators (raw
gradient powers, momentum buffers, sub-optimizer updates, constants and decay
schedules); internal nodes are unary or binary elementwise functions.  A
partial rule contains holes, rendered as ``<>``.

The interpreter computes the update direction ``phi(g)``; callers apply
``theta <- theta - lr * phi(g)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    IncompleteExpression,
    InvalidHorizon,
    ParseError,
    UnknownOperator,
)

UNARY, BINARY, INPUT = "unary", "binary", "input"
_ARITY = {UNARY: 1, BINARY: 2, INPUT: 0}

BETA1 = 0.9
BETA2 = 0.999
BETA3 = 0.999

# Sub-optimizer inputs run at 3x their PyTorch default learning rate.
ADAM_LR = 3 * 1e-3
ADAM_EPS = 1e-8
RMSPROP_LR = 3 * 1e-2
RMSPROP_ALPHA = 0.99
RMSPROP_EPS = 1e-8

COSINE_N = 0.5
RESTART_N = 20


@dataclass(frozen=True)
class OperatorSpec:
    name: str
    kind: str
    arity: int
    parameter: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _ARITY:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if _ARITY[self.kind] != self.arity:
            raise ValueError(f"{self.name}: arity {self.arity} does not match kind {self.kind}")

    def __repr__(self):
        return self.name


def _unary(name, parameter=None):
    return OperatorSpec(name, UNARY, 1, parameter)


def _binary(name):
    return OperatorSpec(name, BINARY, 2)


def _input(name, parameter=None):
    return OperatorSpec(name, INPUT, 0, parameter)


@dataclass(frozen=True)
class OperatorRegistry:
    """Ordered, immutable operator pool. Order defines child order in the super-tree."""

    unary: tuple
    binary: tuple
    inputs: tuple
    _by_name: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        by_name = {}
        for group, kind in ((self.unary, UNARY), (self.binary, BINARY), (self.inputs, INPUT)):
            for op in group:
                if op.kind != kind:
                    raise ValueError(f"{op.name} is {op.kind}, listed as {kind}")
                if op.name in by_name:
                    raise ValueError(f"duplicate operator name {op.name!r}")
                by_name[op.name] = op
        object.__setattr__(self, "_by_name", by_name)

    @property
    def ops(self) -> tuple:
        return self.unary + self.binary + self.inputs

    @property
    def names(self) -> list:
        return [op.name for op in self.ops]

    def __len__(self):
        return len(self._by_name)

    def __contains__(self, name):
        return name in self._by_name

    def get(self, name: str) -> OperatorSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownOperator(f"unknown operator {name!r}") from None

    def index(self, name: str) -> int:
        return self.names.index(name)

    def without(self, *names: str) -> "OperatorRegistry":
        for name in names:
            self.get(name)
        drop = set(names)
        keep = lambda group: tuple(op for op in group if op.name not in drop)
        return OperatorRegistry(keep(self.unary), keep(self.binary), keep(self.inputs))

    def subset(self, names: Sequence[str]) -> "OperatorRegistry":
        """Keep only `names`, preserving registry order."""
        for name in names:
            self.get(name)
        return self.without(*[n for n in self.names if n not in set(names)])


DEFAULT_REGISTRY = OperatorRegistry(
    unary=(
        _unary("neg"),
        _unary("exp"),
        _unary("log"),
        _unary("sqrt"),
        _unary("clip", 0.003),
        _unary("drop", 0.1),
        _unary("sign"),
    ),
    binary=(_binary("add"), _binary("sub"), _binary("mul"), _binary("div"), _binary("pow")),
    inputs=(
        _input("g"),
        _input("g2"),
        _input("g3"),
        _input("m1", BETA1),
        _input("m2", BETA2),
        _input("m3", BETA3),
        _input("sign_g"),
        _input("sign_m1"),
        _input("adam", ADAM_LR),
        _input("rmsprop", RMSPROP_LR),
        _input("one"),
        _input("two"),
        _input("ld"),
        _input("cd", COSINE_N),
        _input("rd", RESTART_N),
    ),
)

# ConvNet-style reduced pool.
CONVNET_REGISTRY = DEFAULT_REGISTRY.without("g3", "m3", "adam", "rmsprop")


# ---------------------------------------------------------------------------
# Trees


class Hole:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "<>"

    def __reduce__(self):
        return (Hole, ())


HOLE = Hole()


@dataclass(frozen=True)
class Node:
    op: OperatorSpec
    children: tuple = ()

    def __post_init__(self):
        if len(self.children) != self.op.arity:
            raise ValueError(f"{self.op.name} takes {self.op.arity} children, got {len(self.children)}")

    def __str__(self):
        return serialize(self)


Tree = Union[Node, Hole]


def length(expr: Tree) -> int:
    """Number of non-hole nodes."""
    if expr is HOLE:
        return 0
    return 1 + sum(length(c) for c in expr.children)


def count_holes(expr: Tree) -> int:
    if expr is HOLE:
        return 1
    return sum(count_holes(c) for c in expr.children)


def is_complete(expr: Tree) -> bool:
    return count_holes(expr) == 0


def iter_nodes(expr: Tree) -> Iterator[Node]:
    """Pre-order walk over non-hole nodes."""
    if expr is HOLE:
        return
    yield expr
    for c in expr.children:
        yield from iter_nodes(c)


def contains_op(expr: Tree, name: str) -> bool:
    return any(n.op.name == name for n in iter_nodes(expr))


def serialize(expr: Tree) -> str:
    if expr is HOLE:
        return "<>"
    if not expr.children:
        return expr.op.name
    return f"{expr.op.name}({', '.join(serialize(c) for c in expr.children)})"


def parse(text: str, registry: OperatorRegistry = DEFAULT_REGISTRY) -> Tree:
    """Parse the prefix grammar ``expr := name | name '(' expr (',' expr)* ')' | '<>'``."""
    data = text.encode("utf-8")
    pos = 0

    def skip():
        nonlocal pos
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1

    def expect(ch: bytes):
        nonlocal pos
        skip()
        if data[pos : pos + 1] != ch:
            found = data[pos : pos + 1].decode("utf-8", "replace") or "end of input"
            raise ParseError(f"expected {ch.decode()!r}, found {found!r}", pos)
        pos += 1

    def node() -> Tree:
        nonlocal pos
        skip()
        if data[pos : pos + 2] == b"<>":
            pos += 2
            return HOLE
        start = pos
        while pos < len(data) and (data[pos : pos + 1].isalnum() or data[pos : pos + 1] == b"_"):
            pos += 1
        if pos == start:
            found = data[pos : pos + 1].decode("utf-8", "replace") or "end of input"
            raise ParseError(f"expected operator name, found {found!r}", pos)
        name = data[start:pos].decode()
        if name not in registry:
            raise UnknownOperator(f"unknown operator {name!r} at byte {start}")
        op = registry.get(name)
        skip()
        if op.arity == 0:
            if data[pos : pos + 1] == b"(":
                raise ParseError(f"input operator {name!r} takes no arguments", pos)
            return Node(op)
        expect(b"(")
        children = [node()]
        for _ in range(op.arity - 1):
            expect(b",")
            children.append(node())
        skip()
        if data[pos : pos + 1] == b",":
            raise ParseError(f"{name!r} takes {op.arity} argument(s)", pos)
        expect(b")")
        return Node(op, tuple(children))

    tree = node()
    skip()
    if pos != len(data):
        raise ParseError("trailing characters", pos)
    return tree


# ---------------------------------------------------------------------------
# Sub-optimizers


@dataclass
class AdamState:
    """Bias-corrected Adam direction, without learning rate."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    betas: tuple = (BETA1, BETA2)
    eps: float = ADAM_EPS

    def update(self, g: np.ndarray) -> np.ndarray:
        b1, b2 = self.betas
        self.step += 1
        self.m = b1 * self.m + (1 - b1) * g
        self.v = b2 * self.v + (1 - b2) * g * g
        m_hat = self.m / (1 - b1**self.step)
        v_hat = self.v / (1 - b2**self.step)
        return m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class RMSpropState:
    v: np.ndarray
    step: int = 0
    alpha: float = RMSPROP_ALPHA
    eps: float = RMSPROP_EPS

    def update(self, g: np.ndarray) -> np.ndarray:
        self.step += 1
        self.v = self.alpha * self.v + (1 - self.alpha) * g * g
        return g / (np.sqrt(self.v) + self.eps)


# ---------------------------------------------------------------------------
# Interpreter


@dataclass
class OptimizerState:
    t: int
    T: int
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    adam_state: AdamState
    rmsprop_state: RMSpropState
    dropout_rng: np.random.Generator
    dim: Union[int, tuple]

    @property
    def shape(self) -> tuple:
        return self.dim if isinstance(self.dim, tuple) else (self.dim,)


@dataclass
class EvalOutput:
    update: np.ndarray
    contains_nonfinite: bool


def reset_state(dim, T: int, seed: int = 0) -> OptimizerState:
    """Fresh zeroed state. `dim` may be a shape tuple to run independent rows in lockstep."""
    shape = tuple(dim) if isinstance(dim, (tuple, list)) else (dim,)
    if not shape or any(int(d) < 1 for d in shape):
        raise DimensionMismatch(f"dimension must be >= 1, got {dim!r}")
    if T < 1:
        raise InvalidHorizon(f"horizon T must be >= 1, got {T}")
    zeros = lambda: np.zeros(shape)
    return OptimizerState(
        t=0,
        T=int(T),
        m1=zeros(),
        m2=zeros(),
        m3=zeros(),
        adam_state=AdamState(zeros(), zeros()),
        rmsprop_state=RMSpropState(zeros()),
        dropout_rng=np.random.default_rng(seed),
        dim=shape if len(shape) > 1 else shape[0],
    )


def safe_sign(x):
    """sign() that maps NaN to 0."""
    s = np.sign(x)
    return np.where(np.isnan(s), 0.0, s)


def linear_decay(t, T):
    return 1 - t / T


def cosine_decay(t, T, n=COSINE_N):
    return 0.5 * (1 + math.cos(2 * math.pi * n * t / T))


def restart_decay(t, T, n=RESTART_N):
    return 0.5 * (1 + math.cos(math.pi * ((t * n) % T) / T))


class _Inputs:
    """Lazily computed leaf values for one step."""

    def __init__(self, g, state, t):
        self.g = g
        self.state = state
        self.t = t
        self.adam = None
        self.rmsprop = None

    def value(self, name):
        s = self.state
        g = self.g
        if name == "g":
            return g
        if name == "g2":
            return g * g
        if name == "g3":
            return g * g * g
        if name == "m1":
            return s.m1
        if name == "m2":
            return s.m2
        if name == "m3":
            return s.m3
        if name == "sign_g":
            return safe_sign(g)
        if name == "sign_m1":
            return safe_sign(s.m1)
        if name == "adam":
            return ADAM_LR * self.adam
        if name == "rmsprop":
            return RMSPROP_LR * self.rmsprop
        if name == "one":
            return 1.0
        if name == "two":
            return 2.0
        if name == "ld":
            return linear_decay(self.t, s.T)
        if name == "cd":
            return cosine_decay(self.t, s.T)
        if name == "rd":
            return restart_decay(self.t, s.T)
        raise UnknownOperator(f"no input named {name!r}")


def _apply(node, inputs: _Inputs):
    if node is HOLE:
        raise IncompleteExpression("cannot evaluate a rule with holes")
    op = node.op
    if op.arity == 0:
        return inputs.value(op.name)
    if op.arity == 1:
        x = _apply(node.children[0], inputs)
        name = op.name
        if name == "neg":
            return -x
        if name == "exp":
            return np.exp(x)
        if name == "log":
            return np.log(np.abs(x))
        if name == "sqrt":
            return np.sqrt(np.abs(x))
        if name == "clip":
            return np.clip(x, -op.parameter, op.parameter)
        if name == "drop":
            keep = inputs.state.dropout_rng.random(inputs.state.shape) >= op.parameter
            return x * keep
        if name == "sign":
            return safe_sign(x)
        raise UnknownOperator(f"no unary operator named {name!r}")
    a = _apply(node.children[0], inputs)
    b = _apply(node.children[1], inputs)
    name = op.name
    if name == "add":
        return a + b
    if name == "sub":
        return a - b
    if name == "mul":
        return a * b
    if name == "div":
        return np.divide(a, b)
    if name == "pow":
        return np.power(np.asarray(a, dtype=float), b)
    raise UnknownOperator(f"no binary operator named {name!r}")


def evaluate_step(expr: Tree, grad, state: OptimizerState) -> EvalOutput:
    """Advance `state` by one step and return phi(grad)."""
    if not is_complete(expr):
        raise IncompleteExpression(f"rule {serialize(expr)} has holes")
    g = np.asarray(grad, dtype=float)
    if g.shape != state.shape:
        raise DimensionMismatch(f"gradient shape {g.shape} != state shape {state.shape}")
    if state.t >= state.T:
        raise InvalidHorizon(f"step {state.t} is past horizon T={state.T}")

    t = state.t
    with np.errstate(all="ignore"):
        state.m1 = BETA1 * state.m1 + (1 - BETA1) * g
        state.m2 = BETA2 * state.m2 + (1 - BETA2) * (g * g)
        state.m3 = BETA3 * state.m3 + (1 - BETA3) * (g * g * g)
        inputs = _Inputs(g, state, t)
        inputs.adam = state.adam_state.update(g)
        inputs.rmsprop = state.rmsprop_state.update(g)
        out = _apply(expr, inputs)
        update = np.array(np.broadcast_to(out, g.shape), dtype=float)
    state.t += 1
    return EvalOutput(update, not bool(np.isfinite(update).all()))


class ExprStepper:
    """Binds a complete rule to its own state; ``step(g)`` returns phi(g)."""

    def __init__(self, expr: Tree, dim, T: int, seed: int = 0):
        if not is_complete(expr):
            raise IncompleteExpression(f"rule {serialize(expr)} has holes")
        self.expr = expr
        self.state = reset_state(dim, T, seed)

    def step(self, grad) -> np.ndarray:
        return evaluate_step(self.expr, grad, self.state).update


def make_stepper(rule, dim, T: int, seed: int = 0):
    """Stepper for an expression tree or any object exposing ``stepper(dim, T, seed)``."""
    if isinstance(rule, (Node, Hole)):
        return ExprStepper(rule, dim, T, seed)
    return rule.stepper(dim, T, seed)


def rule_name(rule) -> str:
    if isinstance(rule, (Node, Hole)):
        return serialize(rule)
    return rule.name
