"""Synthetic confounded survival cohorts with known ground truth."""

import json
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from scipy.special import expit
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt

from ..models.cohort import Cohort
from ..models.synthetic import SynthCohort, SynthConfig
from ..utils.exceptions import DegenerateArmError
from ..utils.logger import get_data_logger
from .cohort_loader import export_cohort

logger = get_data_logger()

ARM_ATTEMPTS = 5


def _draw(config: SynthConfig, rng: np.random.Generator) -> Tuple[Cohort, np.ndarray]:
    n, d = config.n, config.d
    beta = np.asarray(config.beta, dtype=float)
    alpha = np.asarray(config.alpha, dtype=float)

    X = rng.standard_normal((n, d))
    alpha0 = np.full(n, config.alpha0)
    centers = None
    if config.centers is not None:
        center_idx = rng.integers(0, config.centers, size=n)
        X = X + np.asarray(config.center_covariate_shifts)[center_idx][:, None]
        alpha0 = alpha0 + np.asarray(config.center_alpha0_shifts)[center_idx]
        centers = [f"C{c + 1}" for c in center_idx]

    V = rng.standard_normal(n)
    if config.rct_mode:
        treatment = rng.binomial(1, 0.5, size=n)
    else:
        treatment = rng.binomial(1, expit(alpha0 + X @ alpha + config.gamma_sel * V))

    n_treated = int(treatment.sum())
    if n_treated in (0, n):
        raise DegenerateArmError(
            "Synthetic draw produced a single treatment arm",
            details={"treated": n_treated, "n": n},
        )

    # Proportional hazards with cumulative hazard rate * exp(lin) * t^shape
    lin = X @ beta + config.gamma_out * V + config.theta * treatment
    event_time = (rng.exponential(1.0, size=n) / (config.baseline_rate * np.exp(lin))) ** (1.0 / config.weibull_shape)
    censor_time = rng.uniform(0.0, config.censor_max, size=n)
    times = np.minimum(event_time, censor_time)
    events = (event_time <= censor_time).astype(int)

    scores = None
    if config.emit_external_score:
        cumulative = config.baseline_rate * np.exp(X @ beta) * config.score_horizon ** config.weibull_shape
        scores = 1.0 - np.exp(-cumulative)

    cohort = Cohort.from_arrays(
        ids=[f"S{config.seed}-{i:05d}" for i in range(n)],
        times=times,
        events=events,
        treatment=treatment,
        covariates=X,
        feature_names=[f"x{j + 1}" for j in range(d)],
        external_scores=scores,
        centers=centers,
    )
    return cohort, V


def generate(config: SynthConfig) -> SynthCohort:
    """
    Draw a cohort from the configured process.

    Arm-degenerate draws are redrawn from the same random stream, up to
    five attempts in total.

    Raises:
        DegenerateArmError: every attempt left one arm empty
    """
    rng = np.random.default_rng(config.seed)
    attempts = 0
    for attempt in Retrying(
        stop=stop_after_attempt(ARM_ATTEMPTS),
        retry=retry_if_exception_type(DegenerateArmError),
        reraise=True,
    ):
        with attempt:
            attempts = attempt.retry_state.attempt_number
            cohort, hidden_v = _draw(config, rng)

    logger.info(
        f"Synthetic cohort: n={len(cohort)}, treated={cohort.n_treated}, "
        f"events={int(cohort.events.sum())}, seed={config.seed}"
    )
    return SynthCohort(cohort=cohort, hidden_v=hidden_v, theta=config.theta, config=config, attempts=attempts)


def export_synth(synth: SynthCohort, path: Union[str, Path]) -> Tuple[Path, Path]:
    """Write the cohort CSV and a ``<stem>.truth.json`` sidecar."""
    path = Path(path)
    csv_path = export_cohort(synth.cohort, path)
    truth_path = path.with_name(f"{path.stem}.truth.json")
    with open(truth_path, "w", encoding="utf-8") as f:
        json.dump(synth.truth(), f, indent=2, sort_keys=True)
    return csv_path, truth_path
