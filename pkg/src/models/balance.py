"""Balancing target and weighted cohort models."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .cohort import Cohort


@dataclass(frozen=True)
class BalanceTarget:
    """
    Feature matrix Z to balance, with its composition recorded.

    Columns appear in the order X..., s, U, s^2, U^2 (absent parts skipped).
    """

    Z: np.ndarray
    columns: Tuple[str, ...]
    include_x: bool = True
    include_score: bool = False
    include_latent: bool = False
    include_score_sq: bool = False
    include_latent_sq: bool = False

    def __post_init__(self):
        if self.Z.ndim != 2 or self.Z.shape[1] != len(self.columns):
            raise ValueError("Z column count must match the column list")

    def without_squares(self) -> "BalanceTarget":
        """First-moment target: drop the quadratic columns."""
        keep = [j for j, c in enumerate(self.columns) if not c.endswith("^2")]
        return BalanceTarget(
            Z=self.Z[:, keep],
            columns=tuple(self.columns[j] for j in keep),
            include_x=self.include_x,
            include_score=self.include_score,
            include_latent=self.include_latent,
        )


@dataclass(frozen=True)
class SMDRow:
    """Balance of one feature before and after weighting."""

    feature: str
    smd_before: float
    smd_after: float
    zero_variance: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature": self.feature,
            "smd_before": self.smd_before,
            "smd_after": self.smd_after,
        }


@dataclass(frozen=True)
class WeightedCohort:
    """
    A cohort (possibly a matched subset) with analysis weights.

    ``source_index`` maps each row back to its position in the cohort the
    balancing method received; ``partner_ids`` holds matched partners.
    """

    cohort: Cohort
    weights: np.ndarray
    method: str
    source_index: np.ndarray
    partner_ids: Optional[List[Optional[str]]] = None
    smd_table: Tuple[SMDRow, ...] = ()
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.cohort):
            raise ValueError("one weight per patient required")
        if np.any(self.weights < 0) or np.any(~np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        arm = self.cohort.treatment
        for a in (0, 1):
            if not np.any(self.weights[arm == a] > 0):
                raise ValueError(f"arm {a} has no positive weight")

    def __len__(self) -> int:
        return len(self.cohort)

    def effective_sample_size(self, arm: Optional[int] = None) -> float:
        """Kish effective sample size, optionally within one arm."""
        w = self.weights if arm is None else self.weights[self.cohort.treatment == arm]
        total = w.sum()
        return float(total * total / np.sum(w * w)) if total > 0 else 0.0

    def summary(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "n": len(self),
            "ess_treated": self.effective_sample_size(1),
            "ess_control": self.effective_sample_size(0),
            "max_abs_smd_after": max((abs(r.smd_after) for r in self.smd_table), default=0.0),
            **{k: v for k, v in self.metadata.items() if isinstance(v, (int, float, bool, str))},
        }
