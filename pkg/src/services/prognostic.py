"""
Baseline prognostic score: external passthrough or internal cross-fitting
on untreated patients.
"""

from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedKFold
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from ..models.cohort import Cohort
from ..models.latent import ScoreAssignment
from ..utils.config import get_config
from ..utils.exceptions import (
    InsufficientLabelsError,
    MissingScoreError,
    SingleClassFoldError,
)
from ..utils.logger import get_data_logger
from .cohort_loader import standardize_columns
from .logistic import fit_logistic, predict_probability

logger = get_data_logger()

FOLD_ATTEMPTS = 3
UNLABELED = -1
FULL_MODEL = -1


def external_score(cohort: Cohort) -> ScoreAssignment:
    """
    Pass the cohort's external score column through.

    Raises:
        MissingScoreError: some patients have no score (rows listed)
    """
    scores = cohort.external_scores
    missing = np.flatnonzero(np.isnan(scores))
    if len(missing):
        raise MissingScoreError(missing.tolist())

    out_of_range = bool(np.any((scores < 0) | (scores > 1)))
    if out_of_range:
        logger.warning("External score values fall outside [0, 1]; using them on their own scale")

    return ScoreAssignment(scores=scores.copy(), source="external", scale_warning=out_of_range)


def horizon_labels(cohort: Cohort, horizon: float) -> np.ndarray:
    """1 = event by horizon, 0 = followed past horizon, -1 = undetermined."""
    labels = np.full(len(cohort), UNLABELED, dtype=int)
    labels[cohort.times > horizon] = 0
    labels[(cohort.events == 1) & (cohort.times <= horizon)] = 1
    return labels


def _score_features(cohort: Cohort) -> np.ndarray:
    features = standardize_columns(cohort.covariates)
    if features.shape[1] == 0:
        return np.zeros((len(cohort), 1))
    return features


def _crossfit_once(features, labels, train_idx, folds, seed):
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    y = labels[train_idx]
    predictions = np.empty(len(train_idx))
    fold_of = np.empty(len(train_idx), dtype=int)

    for fold, (fit_pos, held_pos) in enumerate(splitter.split(np.zeros(len(y)), y)):
        if len(np.unique(y[fit_pos])) < 2:
            raise SingleClassFoldError(
                f"Fold {fold} training set has a single label class",
                details={"fold": fold, "seed": seed},
            )
        model = fit_logistic(features[train_idx[fit_pos]], y[fit_pos])
        predictions[held_pos] = predict_probability(model, features[train_idx[held_pos]])
        fold_of[held_pos] = fold

    return predictions, fold_of


def crossfit_score(
    cohort: Cohort,
    horizon: Optional[float] = None,
    folds: Optional[int] = None,
    seed: int = 0,
) -> ScoreAssignment:
    """
    Cross-fitted probability of an event by ``horizon``.

    Labeled untreated patients get out-of-fold predictions; treated and
    unlabeled patients are scored by a model fitted on every labeled
    untreated patient.

    Raises:
        InsufficientLabelsError: a label class is absent or smaller than folds
        SingleClassFoldError: every fold reshuffle left a single-class fold
    """
    analysis = get_config().analysis
    horizon = analysis.score_horizon if horizon is None else horizon
    folds = analysis.score_folds if folds is None else folds
    if folds < 2:
        raise ValueError("folds must be >= 2")

    labels = horizon_labels(cohort, horizon)
    train_idx = np.flatnonzero((cohort.treatment == 0) & (labels != UNLABELED))
    n_pos = int(np.sum(labels[train_idx] == 1))
    n_neg = int(np.sum(labels[train_idx] == 0))
    if min(n_pos, n_neg) < folds:
        raise InsufficientLabelsError(
            f"Cross-fitting needs at least {folds} untreated patients in each label class "
            f"(events by horizon: {n_pos}, followed past horizon: {n_neg})",
            details={"positives": n_pos, "negatives": n_neg, "folds": folds},
        )

    features = _score_features(cohort)
    scores = np.empty(len(cohort))
    fold_of = np.full(len(cohort), FULL_MODEL, dtype=int)

    attempts = 0
    for attempt in Retrying(
        stop=stop_after_attempt(FOLD_ATTEMPTS),
        retry=retry_if_exception_type(SingleClassFoldError),
        reraise=True,
    ):
        with attempt:
            attempts = attempt.retry_state.attempt_number
            oof, oof_fold = _crossfit_once(features, labels, train_idx, folds, seed + attempts - 1)

    scores[train_idx] = oof
    fold_of[train_idx] = oof_fold

    rest = np.setdiff1d(np.arange(len(cohort)), train_idx)
    if len(rest):
        full_model = fit_logistic(features[train_idx], labels[train_idx])
        scores[rest] = predict_probability(full_model, features[rest])

    logger.info(
        f"Cross-fitted scores: {len(train_idx)} labeled untreated, {len(rest)} scored by full model, "
        f"{folds} folds, {attempts} attempt(s)"
    )
    return ScoreAssignment(
        scores=scores,
        source="crossfit",
        horizon=float(horizon),
        folds=folds,
        fold_of=fold_of,
        labels=labels,
        attempts=attempts,
    )


def score_cohort(
    cohort: Cohort,
    source: str,
    horizon: Optional[float] = None,
    folds: Optional[int] = None,
    seed: int = 0,
) -> ScoreAssignment:
    """Dispatch on the score source name."""
    if source == "external":
        return external_score(cohort)
    if source == "crossfit":
        return crossfit_score(cohort, horizon=horizon, folds=folds, seed=seed)
    raise ValueError(f"Unknown score source: {source}")


def export_scores(cohort: Cohort, assignment: ScoreAssignment, path: Union[str, Path]) -> Path:
    """Write (id, score, fold) rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"id": cohort.ids, "score": assignment.scores})
    if assignment.fold_of is not None:
        frame["fold"] = assignment.fold_of
    frame.to_csv(path, index=False)
    return path
