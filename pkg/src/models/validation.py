"""Validation result data models."""

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Tuple


@dataclass
class RunFailure:
    """A grid configuration that raised instead of producing an estimate."""

    dataset: str
    config_id: str
    variant: str
    error_type: str
    message: str
    details: Optional[Dict[str, Any]] = None
    group: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation."""
        return {
            "dataset": self.dataset,
            "config_id": self.config_id,
            "variant": self.variant,
            "group": self.group,
            "error_type": self.error_type,
            "message": self.message,
            "details": self.details,
        }


@dataclass
class RunRow:
    """
    One successful (dataset, configuration, variant) result.

    Survival-gap rows carry landmark survivals in ``diagnostics`` and no HR.
    """

    dataset: str
    method: str
    config_id: str
    variant: str
    log_hr: Optional[float]
    se: Optional[float]
    axes: Dict[str, Any] = field(default_factory=dict)
    benchmark_error: Optional[float] = None
    group: Optional[str] = None  # center label or center pair
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def pairing_key(self) -> Tuple[str, str, str, Optional[str]]:
        return (self.dataset, self.method, self.config_id, self.group)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "config_id": self.config_id,
            "variant": self.variant,
            "group": self.group,
            "log_hr": self.log_hr,
            "se": self.se,
            "benchmark_error": self.benchmark_error,
            **{f"axis_{k}": v for k, v in self.axes.items()},
            **self.diagnostics,
        }


@dataclass
class PairedDelta:
    """Per-configuration paired improvements of one (dataset, method) cell."""

    dataset: str
    method: str
    config_ids: List[str] = field(default_factory=list)
    deltas: List[float] = field(default_factory=list)

    def __post_init__(self):
        if any(not math.isfinite(d) for d in self.deltas):
            raise ValueError("paired deltas must be finite")

    @property
    def cell_id(self) -> str:
        return f"{self.dataset}|{self.method}"

    @property
    def mean(self) -> float:
        return math.fsum(self.deltas) / len(self.deltas) if self.deltas else float("nan")

    def add(self, config_id: str, delta: float) -> None:
        if not math.isfinite(delta):
            raise ValueError("paired deltas must be finite")
        self.config_ids.append(config_id)
        self.deltas.append(delta)


@dataclass(frozen=True)
class CellSummary:
    """Mean, SE and median of one cell's values."""

    dataset: str
    method: str
    metric: str
    n: int
    mean: float
    se: float
    median: float
    n_failures: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "metric": self.metric,
            "n": self.n,
            "mean": self.mean,
            "se": self.se,
            "median": self.median,
            "n_failures": self.n_failures,
        }


@dataclass(frozen=True)
class TestResult:
    """One hypothesis test outcome."""

    name: str
    p_value: float
    n: int
    statistic: Optional[float] = None
    scope: str = "overall"
    details: Dict[str, Any] = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> Dict[str, Any]:
        return {
            "test": self.name,
            "scope": self.scope,
            "statistic": self.statistic,
            "n": self.n,
            "p_value": self.p_value,
            **self.details,
        }


@dataclass(frozen=True)
class TOSTResult:
    """Equivalence verdict: 95% CI of the shift inside (-margin, margin)."""

    mean_shift: float
    se: float
    margin: float
    ci_low: float
    ci_high: float
    equivalent: bool
    p_lower: float
    p_upper: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean_shift": self.mean_shift,
            "se": self.se,
            "margin": self.margin,
            "ci95": [self.ci_low, self.ci_high],
            "equivalent": self.equivalent,
            "p_lower": self.p_lower,
            "p_upper": self.p_upper,
        }


@dataclass(frozen=True)
class GapRecord:
    """
    Landmark survival gaps for one center pair, oriented so that center A
    has the lower crude survival.
    """

    center_a: str
    center_b: str
    d_raw: float
    d_base: float
    d_aug: float
    ordering_preserved: bool

    @property
    def widened_by_x(self) -> bool:
        return self.d_base > self.d_raw

    @property
    def fixed_by_u(self) -> bool:
        return self.d_aug < self.d_base

    @property
    def retained(self) -> bool:
        return self.ordering_preserved and self.widened_by_x

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center_a": self.center_a,
            "center_b": self.center_b,
            "d_raw": self.d_raw,
            "d_base": self.d_base,
            "d_aug": self.d_aug,
            "ordering_preserved": self.ordering_preserved,
            "widened_by_x": self.widened_by_x,
            "fixed_by_u": self.fixed_by_u,
            "retained": self.retained,
        }


@dataclass(frozen=True)
class GapSummary:
    """Retained/fixed counts and the exact binomial test over them."""

    records: Tuple[GapRecord, ...]
    retained: int
    fixed: int
    p_value: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "retained": self.retained,
            "fixed": self.fixed,
            "fixed_fraction": self.fixed / self.retained if self.retained else None,
            "p_value": self.p_value,
            "pairs": [r.to_dict() for r in self.records],
        }


@dataclass
class ValidationReport:
    """Aggregated outcome of a grid run."""

    experiment: str
    config_hash: str = ""
    seed: int = 0
    rows: List[RunRow] = field(default_factory=list)
    failures: List[RunFailure] = field(default_factory=list)
    deltas: List[PairedDelta] = field(default_factory=list)
    cells: List[CellSummary] = field(default_factory=list)
    tests: List[TestResult] = field(default_factory=list)
    tost: List[Dict[str, Any]] = field(default_factory=list)
    gaps: Dict[str, GapSummary] = field(default_factory=dict)
    smd_tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    sections: Dict[str, Any] = field(default_factory=dict)
    start_time: Optional[datetime] = None
    end_time: Optional[datetime] = None
    duration: float = 0.0  # seconds

    def __post_init__(self):
        """Initialize timestamps if not set."""
        if self.start_time is None:
            self.start_time = datetime.now(timezone.utc)

    def add_row(self, row: RunRow) -> None:
        self.rows.append(row)

    def add_failure(self, dataset: str, config_id: str, variant: str, error: Exception,
                    group: Optional[str] = None) -> None:
        """Record a failed configuration without aborting the grid."""
        self.failures.append(
            RunFailure(
                dataset=dataset,
                config_id=config_id,
                variant=variant,
                error_type=type(error).__name__,
                message=str(error),
                details=getattr(error, "details", None) or None,
                group=group,
            )
        )

    def finalize(self) -> None:
        """Stamp end time and duration."""
        self.end_time = datetime.now(timezone.utc)
        if self.start_time:
            self.duration = (self.end_time - self.start_time).total_seconds()

    @property
    def is_empty(self) -> bool:
        return not self.rows and not self.failures

    @property
    def failed_count(self) -> int:
        return len(self.failures)

    def test(self, name: str, scope: str = "overall") -> Optional[TestResult]:
        """Look up a test result by name and scope."""
        for t in self.tests:
            if t.name == name and t.scope == scope:
                return t
        return None

    def to_dict(self) -> Dict[str, Any]:
        """
        Full serializable report.

        Carries no wall-clock fields so identical runs serialize identically.
        """
        return {
            "experiment": self.experiment,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "row_count": len(self.rows),
            "failed_count": self.failed_count,
            "rows": [r.to_dict() for r in self.rows],
            "failures": [f.to_dict() for f in self.failures],
            "paired_deltas": [
                {"dataset": d.dataset, "method": d.method, "config_ids": d.config_ids, "deltas": d.deltas}
                for d in self.deltas
            ],
            "cells": [c.to_dict() for c in self.cells],
            "tests": [t.to_dict() for t in self.tests],
            "tost": self.tost,
            "survival_gaps": {k: v.to_dict() for k, v in self.gaps.items()},
            "smd_tables": self.smd_tables,
            "sections": self.sections,
        }

    def get_summary(self) -> str:
        """Get a human-readable summary."""
        summary_lines = [
            f"Experiment: {self.experiment}",
            f"Runs: {len(self.rows)}",
            f"Failed: {self.failed_count}",
        ]
        for cell in self.cells:
            summary_lines.append(
                f"  {cell.dataset} / {cell.method} [{cell.metric}]: "
                f"mean {cell.mean:+.4f} (SE {cell.se:.4f}, n={cell.n})"
            )
        for t in self.tests:
            summary_lines.append(f"  {t.name} ({t.scope}): p = {t.p_value:.4g} (n={t.n})")
        for item in self.tost:
            verdict = "equivalent" if item["equivalent"] else "not equivalent"
            summary_lines.append(
                f"  TOST {item.get('dataset', '')} / {item.get('method', '')}: "
                f"shift {item['mean_shift']:+.4f}, {verdict}"
            )

        if self.failures:
            summary_lines.append(f"\nFailures ({len(self.failures)}):")
            for failure in self.failures[:5]:
                summary_lines.append(f"  - {failure.config_id} [{failure.variant}]: {failure.message}")
            if len(self.failures) > 5:
                summary_lines.append(f"  ... and {len(self.failures) - 5} more failures")

        return "\n".join(summary_lines)


@dataclass(frozen=True)
class PairSurvival:
    """Landmark survival of two centers under crude, X and (X, Ũ) weighting."""

    center_x: str
    center_y: str
    raw_x: float
    raw_y: float
    base_x: float
    base_y: float
    aug_x: float
    aug_y: float
