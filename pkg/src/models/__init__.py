"""Data models."""

from .balance import BalanceTarget, SMDRow, WeightedCohort
from .cohort import Cohort, PatientRecord, Standardization
from .latent import LatentAssignment, LatentConfig, NeighborSet, ScoreAssignment
from .run_config import ColumnSchema, GridInstance, RunConfig
from .survival import HREstimate, PseudoOutcome, SurvivalCurve
from .synthetic import SynthCohort, SynthConfig
from .validation import (
    CellSummary,
    GapRecord,
    GapSummary,
    PairedDelta,
    PairSurvival,
    RunFailure,
    RunRow,
    TestResult,
    TOSTResult,
    ValidationReport,
)

__all__ = [
    "BalanceTarget",
    "CellSummary",
    "Cohort",
    "ColumnSchema",
    "GapRecord",
    "GapSummary",
    "GridInstance",
    "HREstimate",
    "LatentAssignment",
    "LatentConfig",
    "NeighborSet",
    "PairedDelta",
    "PairSurvival",
    "PatientRecord",
    "PseudoOutcome",
    "RunConfig",
    "RunFailure",
    "RunRow",
    "SMDRow",
    "ScoreAssignment",
    "Standardization",
    "SurvivalCurve",
    "SynthCohort",
    "SynthConfig",
    "TestResult",
    "TOSTResult",
    "ValidationReport",
    "WeightedCohort",
]
