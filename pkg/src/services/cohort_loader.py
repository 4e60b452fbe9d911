"""Cohort ingestion, export and covariate standardization."""

import math
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.preprocessing import StandardScaler

from ..models.cohort import Cohort, PatientRecord, Standardization
from ..models.run_config import ColumnSchema
from ..utils.exceptions import (
    EmptyCohortError,
    MissingColumnError,
    ParseFailureError,
)
from ..utils.logger import get_data_logger

logger = get_data_logger()


def _parse_float(raw: str, row: int, column: str, allow_empty: bool = False) -> Optional[float]:
    text = raw.strip()
    if not text:
        if allow_empty:
            return None
        raise ParseFailureError(row, column, raw, "missing value")
    try:
        value = float(text)
    except ValueError:
        raise ParseFailureError(row, column, raw, "not a number")
    if not math.isfinite(value):
        raise ParseFailureError(row, column, raw, "not finite")
    return value


def _parse_flag(raw: str, row: int, column: str) -> int:
    value = _parse_float(raw, row, column)
    if value not in (0.0, 1.0):
        raise ParseFailureError(row, column, raw, "expected 0 or 1")
    return int(value)


def load_cohort(path: Union[str, Path], schema: Optional[ColumnSchema] = None) -> Cohort:
    """
    Load and validate a cohort CSV.

    Args:
        path: CSV file with a header row
        schema: Column-name mapping; defaults to the canonical names

    Returns:
        Validated two-arm Cohort

    Raises:
        MissingColumnError: A mapped column is absent
        ParseFailureError: A cell fails its domain check (row is the 0-based data row)
        EmptyCohortError: No data rows
        SingleArmCohortError: Only one treatment arm present
    """
    schema = schema or ColumnSchema()
    path = Path(path)

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise EmptyCohortError(f"Empty input file: {path}")
    columns = list(frame.columns)

    required = [schema.id, schema.time, schema.event, schema.treatment]
    missing = [c for c in required if c not in columns]
    if schema.covariates is not None:
        missing += [c for c in schema.covariates if c not in columns]
    if missing:
        raise MissingColumnError(
            f"Missing column(s): {', '.join(missing)}",
            details={"missing": missing, "available": columns},
        )

    score_col = schema.external_score if schema.external_score in columns else None
    center_col = schema.center if schema.center in columns else None
    if schema.covariates is not None:
        feature_names = list(schema.covariates)
    else:
        reserved = set(required) | {schema.external_score, schema.center}
        feature_names = [c for c in columns if c not in reserved]

    if frame.empty:
        raise EmptyCohortError(f"No data rows in {path}")

    records: List[PatientRecord] = []
    for row, values in enumerate(frame.to_dict(orient="records")):
        pid = values[schema.id].strip()
        if not pid:
            raise ParseFailureError(row, schema.id, values[schema.id], "missing id")
        time = _parse_float(values[schema.time], row, schema.time)
        if time < 0:
            raise ParseFailureError(row, schema.time, values[schema.time], "negative time")
        event = _parse_flag(values[schema.event], row, schema.event)
        treatment = _parse_flag(values[schema.treatment], row, schema.treatment)
        covariates = tuple(_parse_float(values[c], row, c) for c in feature_names)
        score = _parse_float(values[score_col], row, score_col, allow_empty=True) if score_col else None
        center = (values[center_col].strip() or None) if center_col else None

        records.append(
            PatientRecord(
                id=pid,
                time=time,
                event=event,
                treatment=treatment,
                covariates=covariates,
                external_score=score,
                center=center,
            )
        )

    cohort = Cohort(records=tuple(records), feature_names=tuple(feature_names))
    cohort.require_two_arms()

    logger.info(
        f"Loaded {len(cohort)} patients from {path.name} "
        f"({cohort.n_treated} treated, {len(feature_names)} covariates)"
    )
    return cohort


def export_cohort(cohort: Cohort, path: Union[str, Path]) -> Path:
    """Write a cohort back to CSV in the ingestion dialect."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r.to_dict(cohort.feature_names) for r in cohort.records]
    frame = pd.DataFrame(rows, columns=["id", "time", "event", "treatment", *cohort.feature_names,
                                        "external_score", "center"])
    if frame["external_score"].isna().all():
        frame = frame.drop(columns=["external_score"])
    if frame["center"].isna().all():
        frame = frame.drop(columns=["center"])
    frame.to_csv(path, index=False, encoding="utf-8")
    return path


def _fit_scaler(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Population-SD scaling; returns (transformed, means, scales)."""
    scaler = StandardScaler()
    transformed = scaler.fit_transform(matrix)
    return transformed, scaler.mean_, scaler.scale_


def standardize(cohort: Cohort, by_center: bool = False) -> Cohort:
    """
    Standardize every covariate to zero mean and unit (population) SD.

    Constant features become all-zero and are listed in
    ``standardization.constant_features``. With ``by_center`` the
    parameters are fitted separately within each center label.
    """
    names = cohort.feature_names
    matrix = cohort.covariates
    if matrix.shape[1] == 0:
        return cohort.with_covariates(matrix, Standardization(names, (), ()))

    group_params: Dict[str, Tuple[Tuple[float, ...], Tuple[float, ...]]] = {}
    if by_center and cohort.center_labels():
        out = np.empty_like(matrix)
        centers = np.array([c if c is not None else "" for c in cohort.centers])
        constant = np.zeros(matrix.shape[1], dtype=bool)
        for label in np.unique(centers):
            mask = centers == label
            out[mask], means, scales = _fit_scaler(matrix[mask])
            constant |= matrix[mask].std(axis=0) == 0
            group_params[str(label)] = (tuple(means.tolist()), tuple(scales.tolist()))
        _, means, scales = _fit_scaler(matrix)
    else:
        out, means, scales = _fit_scaler(matrix)
        constant = matrix.std(axis=0) == 0

    constant_features = tuple(n for n, flag in zip(names, constant) if flag)
    if constant_features:
        logger.warning(f"Constant feature(s) mapped to zero: {', '.join(constant_features)}")

    params = Standardization(
        feature_names=names,
        means=tuple(means.tolist()),
        scales=tuple(scales.tolist()),
        constant_features=constant_features,
        by_center=bool(group_params),
        group_params=group_params,
    )
    return cohort.with_covariates(out, params)


def standardize_columns(matrix: np.ndarray) -> np.ndarray:
    """Column-wise standardization for derived feature matrices."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return matrix
    return StandardScaler().fit_transform(matrix)
