from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

EVALUATED = "evaluated"
EARLY_STOPPED = "early_stopped"
REJECTED_DESCENT = "rejected_descent"
DUPLICATE = "duplicate"
STATUSES = (EVALUATED, EARLY_STOPPED, REJECTED_DESCENT, DUPLICATE)


@dataclass
class CandidateRecord:
    """One sampled rule and what happened to it.

    `score` is canonical (higher is better). `raw_metric` is the task's own
    number: cumulative training loss for loss tasks, accuracy otherwise.
    """

    expr: str
    status: str
    hash: Optional[str] = None
    score: Optional[float] = None
    best_lr: Optional[float] = None
    raw_metric: Optional[float] = None
    level: int = 0
    sample_index: int = 0
    eval_seed: int = 0
    stem: Optional[str] = None
    cosine: Optional[float] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, float) and not math.isfinite(v):
                out[k] = None
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, row: dict) -> "CandidateRecord":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in row.items() if k in names})
