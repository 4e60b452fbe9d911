"""Survival curve, pseudo-outcome and hazard-ratio models."""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class SurvivalCurve:
    """Weighted product-limit step function over the distinct observed times."""

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events: np.ndarray

    def __post_init__(self):
        if len(self.times) != len(self.survival):
            raise ValueError("times and survival must align")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(np.diff(self.survival) > 1e-12):
            raise ValueError("survival must be non-increasing")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "time": self.times.tolist(),
            "survival": self.survival.tolist(),
            "at_risk": self.at_risk.tolist(),
            "events": self.events.tolist(),
        }


@dataclass(frozen=True)
class PseudoOutcome:
    """Jackknife pseudo-RMST values, one per patient."""

    values: np.ndarray
    tau: float
    scope: str  # "full" | "per-arm"

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class HREstimate:
    """Treatment log hazard ratio from a weighted Cox fit."""

    log_hr: float
    se: float
    iterations: int
    converged: bool
    coefficients: Tuple[float, ...] = ()
    column_names: Tuple[str, ...] = ()
    dropped_columns: Tuple[str, ...] = ()
    ridge_applied: bool = False
    gradient_norm: float = 0.0
    log_likelihood: Optional[float] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def hr(self) -> float:
        return math.exp(self.log_hr)

    @property
    def ci95(self) -> Tuple[float, float]:
        return (self.log_hr - 1.96 * self.se, self.log_hr + 1.96 * self.se)

    def to_dict(self) -> Dict[str, Any]:
        lo, hi = self.ci95
        return {
            "log_hr": self.log_hr,
            "se": self.se,
            "hr": self.hr,
            "ci95": [lo, hi],
            "iterations": self.iterations,
            "converged": self.converged,
            "ridge_applied": self.ridge_applied,
            "gradient_norm": self.gradient_norm,
            "dropped_columns": list(self.dropped_columns),
        }
