"""Patient and cohort data models."""

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..utils.exceptions import DuplicateIdError, EmptyCohortError, SingleArmCohortError


@dataclass(frozen=True)
class PatientRecord:
    """One patient row: follow-up, event, arm and observed covariates."""

    id: str
    time: float
    event: int
    treatment: int
    covariates: Tuple[float, ...]
    external_score: Optional[float] = None
    center: Optional[str] = None

    def __post_init__(self):
        """Validate domains."""
        if not self.id:
            raise ValueError("Patient id cannot be empty")

        if not math.isfinite(self.time) or self.time < 0:
            raise ValueError(f"Follow-up time must be finite and nonnegative (id={self.id})")

        if self.event not in (0, 1):
            raise ValueError(f"Event flag must be 0 or 1 (id={self.id})")

        if self.treatment not in (0, 1):
            raise ValueError(f"Treatment flag must be 0 or 1 (id={self.id})")

        if any(not math.isfinite(x) for x in self.covariates):
            raise ValueError(f"Covariates must be finite (id={self.id})")

    def to_dict(self, feature_names: Sequence[str]) -> Dict[str, Any]:
        """Convert to a flat row keyed by column name."""
        row: Dict[str, Any] = {
            "id": self.id,
            "time": self.time,
            "event": self.event,
            "treatment": self.treatment,
        }
        row.update(dict(zip(feature_names, self.covariates)))
        row["external_score"] = self.external_score
        row["center"] = self.center
        return row


@dataclass(frozen=True)
class Standardization:
    """Per-feature location and scale used to standardize a cohort."""

    feature_names: Tuple[str, ...]
    means: Tuple[float, ...]
    scales: Tuple[float, ...]
    constant_features: Tuple[str, ...] = ()
    by_center: bool = False
    # center label -> (means, scales) when standardized per center
    group_params: Dict[str, Tuple[Tuple[float, ...], Tuple[float, ...]]] = field(default_factory=dict)

    @property
    def has_constant_features(self) -> bool:
        return bool(self.constant_features)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "feature_names": list(self.feature_names),
            "means": list(self.means),
            "scales": list(self.scales),
            "constant_features": list(self.constant_features),
            "by_center": self.by_center,
            "group_params": {k: {"means": list(m), "scales": list(s)} for k, (m, s) in self.group_params.items()},
        }


@dataclass(frozen=True)
class Cohort:
    """
    Immutable patient-level survival dataset.

    Array views (times, events, covariate matrix, ...) are computed once and
    cached; callers must treat them as read-only.
    """

    records: Tuple[PatientRecord, ...]
    feature_names: Tuple[str, ...]
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        if not self.records:
            raise EmptyCohortError("Cohort has no records")

        width = len(self.feature_names)
        seen = set()
        for record in self.records:
            if len(record.covariates) != width:
                raise ValueError(
                    f"Record {record.id} has {len(record.covariates)} covariates, expected {width}"
                )
            if record.id in seen:
                raise DuplicateIdError(f"Duplicate patient id: {record.id}", details={"id": record.id})
            seen.add(record.id)

    def __len__(self) -> int:
        return len(self.records)

    # ------------------------------------------------------------------
    # Array views
    # ------------------------------------------------------------------

    @cached_property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records], dtype=float)

    @cached_property
    def events(self) -> np.ndarray:
        return np.array([r.event for r in self.records], dtype=int)

    @cached_property
    def treatment(self) -> np.ndarray:
        return np.array([r.treatment for r in self.records], dtype=int)

    @cached_property
    def covariates(self) -> np.ndarray:
        matrix = np.array([r.covariates for r in self.records], dtype=float)
        return matrix.reshape(len(self.records), len(self.feature_names))

    @cached_property
    def external_scores(self) -> np.ndarray:
        return np.array(
            [np.nan if r.external_score is None else r.external_score for r in self.records], dtype=float
        )

    @cached_property
    def centers(self) -> List[Optional[str]]:
        return [r.center for r in self.records]

    @property
    def is_standardized(self) -> bool:
        return self.standardization is not None

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())

    @property
    def n_control(self) -> int:
        return len(self) - self.n_treated

    def center_labels(self) -> List[str]:
        """Distinct center labels in first-seen order."""
        labels: List[str] = []
        for c in self.centers:
            if c is not None and c not in labels:
                labels.append(c)
        return labels

    # ------------------------------------------------------------------
    # Derivations
    # ------------------------------------------------------------------

    def require_two_arms(self) -> None:
        """Raise unless both arms are represented."""
        if self.n_treated == 0 or self.n_control == 0:
            raise SingleArmCohortError(
                "Treatment-effect operations need treated and untreated patients",
                details={"treated": self.n_treated, "untreated": self.n_control},
            )

    def subset(self, indices: Sequence[int]) -> "Cohort":
        """Cohort restricted to the given record positions (order kept)."""
        return Cohort(
            records=tuple(self.records[int(i)] for i in indices),
            feature_names=self.feature_names,
            standardization=self.standardization,
        )

    def with_covariates(self, matrix: np.ndarray, standardization: Optional[Standardization]) -> "Cohort":
        """Copy of the cohort with its covariate matrix replaced."""
        records = tuple(
            replace(r, covariates=tuple(float(x) for x in row)) for r, row in zip(self.records, matrix)
        )
        return Cohort(records=records, feature_names=self.feature_names, standardization=standardization)

    def with_treatment(self, treatment: Sequence[int]) -> "Cohort":
        """Copy of the cohort with the treatment column replaced (group indicator reuse)."""
        records = tuple(replace(r, treatment=int(t)) for r, t in zip(self.records, treatment))
        return Cohort(records=records, feature_names=self.feature_names, standardization=self.standardization)

    @classmethod
    def from_arrays(
        cls,
        ids: Sequence[str],
        times: Sequence[float],
        events: Sequence[int],
        treatment: Sequence[int],
        covariates: np.ndarray,
        feature_names: Sequence[str],
        external_scores: Optional[Sequence[Optional[float]]] = None,
        centers: Optional[Sequence[Optional[str]]] = None,
    ) -> "Cohort":
        """Build a cohort from column arrays."""
        covariates = np.asarray(covariates, dtype=float).reshape(len(ids), len(feature_names))
        records = []
        for i, pid in enumerate(ids):
            score = None
            if external_scores is not None and external_scores[i] is not None:
                value = float(external_scores[i])
                score = None if math.isnan(value) else value
            records.append(
                PatientRecord(
                    id=str(pid),
                    time=float(times[i]),
                    event=int(events[i]),
                    treatment=int(treatment[i]),
                    covariates=tuple(float(x) for x in covariates[i]),
                    external_score=score,
                    center=None if centers is None or centers[i] is None else str(centers[i]),
                )
            )
        return cls(records=tuple(records), feature_names=tuple(feature_names))
