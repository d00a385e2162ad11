"""Structured pass/fail records shared by every verification routine."""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class CheckReport:
    """Outcome of one invariant check.

    ``fraction`` is the share of samples satisfying the check and
    ``worst_margin`` the most adverse slack-adjusted margin seen (negative
    means a violation). ``details`` may carry per-check statistics.
    """

    name: str
    passed: bool
    fraction: float = 1.0
    worst_margin: float = 0.0
    samples: int = 0
    seed: int | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "samples": int(self.samples),
            "fraction": float(self.fraction),
            "worst_margin": float(self.worst_margin),
            "pass": bool(self.passed),
            "seed": self.seed,
        }
        if self.details:
            out["details"] = _jsonable(self.details)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# bound-style checks share the same record shape
BoundReport = CheckReport


def _jsonable(value):
    """Recursively coerce numpy scalars/arrays into plain JSON types."""
    import numpy as np

    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value
