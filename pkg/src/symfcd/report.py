"""Serializable verdict records shared by every analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into plain JSON values."""
    if isinstance(obj, AnalysisReport):
        return obj.to_dict()
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


@dataclass
class AnalysisReport:
    """Verdict of one analysis.

    ``metrics`` holds the measured residuals/deviations, ``tolerances`` the
    thresholds they were judged against; a failing report therefore always
    carries both the offending value and the bound it violated.
    ``artifacts`` maps labels to trajectories (anything with ``to_csv``);
    they are not serialized.
    """

    kind: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)

    def __bool__(self) -> bool:
        return bool(self.passed)

    def to_dict(self) -> dict:
        return jsonable(
            {
                "kind": self.kind,
                "passed": bool(self.passed),
                "metrics": self.metrics,
                "tolerances": self.tolerances,
                "details": self.details,
                "notes": list(self.notes),
            }
        )

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisReport":
        return cls(d["kind"], d["passed"], d.get("metrics", {}), d.get("tolerances", {}),
                   d.get("details", {}), d.get("notes", []))
