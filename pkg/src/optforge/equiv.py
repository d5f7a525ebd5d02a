"""Equivalent-form detection by probing.

Two rules that compute the same function produce the same outputs on any
gradient sequence. Each rule is run on a fixed, seeded probe sequence; its
quantized outputs are digested into a hash code, and the dedup table answers
"has an equivalent rule been seen?" with a single dictionary lookup.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import DEFAULT_REGISTRY, ExprStepper, Tree, is_complete, parse, serialize
from .errors import IncompleteExpression


@dataclass(frozen=True)
class ProbeConfig:
    seed: int = 0
    dim: int = 256
    steps: int = 41
    quantization: float = 1e-6
    # Horizon seen by decay inputs. Coprime with the restart-decay count so
    # `rd` visits every phase, and long enough that `cd` and `ld` reach the
    # 1e-3 range where clip stops saturating.
    horizon: int = 41
    # Probe components are N(0,1) scaled by 10**U(low, high) so that
    # saturating operators such as clip see both small and large inputs.
    log10_scale: tuple = (-3.0, 1.0)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("probe steps must be >= 1")
        if self.quantization <= 0:
            raise ValueError("quantization must be > 0")
        if self.horizon < self.steps:
            raise ValueError("probe horizon must cover the probe steps")


def probe_gradients(cfg: ProbeConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal((cfg.steps, cfg.dim))
    lo, hi = cfg.log10_scale
    return z * 10.0 ** rng.uniform(lo, hi, size=(cfg.steps, cfg.dim))


def probe_outputs(expr: Tree, cfg: ProbeConfig, grads: Optional[np.ndarray] = None) -> np.ndarray:
    """Outputs of `expr` on the probe sequence, shape (steps, dim)."""
    if not is_complete(expr):
        raise IncompleteExpression(f"rule {serialize(expr)} has holes")
    if grads is None:
        grads = probe_gradients(cfg)
    stepper = ExprStepper(expr, cfg.dim, cfg.horizon, seed=cfg.seed)
    return np.stack([stepper.step(g) for g in grads])


_FINITE, _NAN, _POS_INF, _NEG_INF = 0, 1, 2, 3


def quantize(values: np.ndarray, quantization: float):
    """Return (tags, levels): sentinel tags for NaN/+Inf/-Inf and rounded multiples of `quantization`."""
    values = np.asarray(values, dtype=float).ravel()
    with np.errstate(all="ignore"):
        levels = np.rint(values / quantization)
    tags = np.full(values.shape, _FINITE, dtype=np.uint8)
    tags[np.isnan(values)] = _NAN
    tags[levels == np.inf] = _POS_INF
    tags[levels == -np.inf] = _NEG_INF
    levels[tags != _FINITE] = 0.0
    levels += 0.0  # -0.0 -> 0.0
    return tags, levels


@dataclass(frozen=True)
class HashCode:
    digest: bytes

    @property
    def hex(self) -> str:
        return self.digest.hex()

    def __str__(self):
        return self.hex


def hash_outputs(outputs: np.ndarray, quantization: float) -> HashCode:
    tags, levels = quantize(outputs, quantization)
    h = hashlib.blake2b(digest_size=16)
    h.update(tags.tobytes())
    h.update(levels.astype("<f8").tobytes())
    return HashCode(h.digest())


def hash_code(expr: Tree, cfg: ProbeConfig = ProbeConfig()) -> HashCode:
    return hash_outputs(probe_outputs(expr, cfg), cfg.quantization)


def numerically_equivalent(a: Tree, b: Tree, cfg: ProbeConfig, rtol=1e-6, atol=1e-6) -> bool:
    """Direct numeric comparison of two rules on the probe sequence of `cfg`."""
    grads = probe_gradients(cfg)
    out_a = probe_outputs(a, cfg, grads)
    out_b = probe_outputs(b, cfg, grads)
    same_nan = np.isnan(out_a) == np.isnan(out_b)
    with np.errstate(all="ignore"):
        close = np.isclose(out_a, out_b, rtol=rtol, atol=atol, equal_nan=True)
    return bool(same_nan.all() and close.all())


@dataclass
class DedupEntry:
    expr: Tree
    code: HashCode
    record: Optional[object] = None


class Fresh:
    """Verdict: no equivalent rule was in the table; a slot has been reserved."""

    def __init__(self, entry: DedupEntry):
        self.entry = entry

    def __repr__(self):
        return "Fresh()"


@dataclass
class Duplicate:
    existing: DedupEntry


@dataclass
class DedupTable:
    entries: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, code: HashCode):
        return code.digest in self.entries

    def lookup(self, code: HashCode) -> Optional[DedupEntry]:
        found = self.entries.get(code.digest)
        return found[0] if found else None

    def check_and_insert(self, expr: Tree, code: HashCode):
        """Return Duplicate(existing) without mutating, or reserve a slot and return Fresh."""
        existing = self.lookup(code)
        if existing is not None:
            return Duplicate(existing)
        entry = DedupEntry(expr, code)
        self.entries[code.digest] = [entry]
        return Fresh(entry)

    def release(self, code: HashCode) -> None:
        """Drop a reserved slot (used when a speculative evaluation is discarded)."""
        self.entries.pop(code.digest, None)

    def to_jsonl_line(self, entry: DedupEntry) -> str:
        rec = entry.record
        row = {
            "digest": entry.code.hex,
            "expr": serialize(entry.expr),
            "score": getattr(rec, "score", None),
            "lr": getattr(rec, "best_lr", None),
            "level": getattr(rec, "level", None),
            "seed": getattr(rec, "eval_seed", None),
        }
        return json.dumps(row, sort_keys=True)

    def append_jsonl(self, path, entry: DedupEntry) -> None:
        with open(path, "a") as f:
            f.write(self.to_jsonl_line(entry) + "\n")

    @classmethod
    def load_jsonl(cls, path, registry=DEFAULT_REGISTRY) -> "DedupTable":
        table = cls()
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                row = json.loads(line)
                code = HashCode(bytes.fromhex(row["digest"]))
                if code in table:
                    continue
                entry = DedupEntry(parse(row["expr"], registry), code, record=row)
                table.entries[code.digest] = [entry]
        return table


def check_and_insert(table: DedupTable, expr: Tree, code: HashCode):
    return table.check_and_insert(expr, code)
