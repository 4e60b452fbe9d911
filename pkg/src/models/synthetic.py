"""Synthetic cohort configuration and result models."""

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, model_validator

from .cohort import Cohort


class SynthConfig(BaseModel):
    """
    Data-generating process for a confounded survival cohort.

    Event hazard is ``baseline_rate * exp(beta.X + gamma_out*V + theta*t)``
    with a Weibull time scale when ``weibull_shape != 1``; treatment odds are
    ``exp(alpha0 + alpha.X + gamma_sel*V)``. V is the hidden factor.
    """

    n: int = 1000
    d: int = 3
    beta: Optional[List[float]] = None
    gamma_out: float = 1.0
    gamma_sel: float = 1.0
    theta: float = math.log(0.67)
    alpha: Optional[List[float]] = None
    alpha0: float = 0.0
    baseline_rate: float = 0.02
    weibull_shape: float = 1.0
    censor_max: float = 120.0
    rct_mode: bool = False
    centers: Optional[int] = None
    center_alpha0_shifts: Optional[List[float]] = None
    center_covariate_shifts: Optional[List[float]] = None
    emit_external_score: bool = True
    score_horizon: float = 60.0
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "SynthConfig":
        if self.n < 4:
            raise ValueError("n must be >= 4")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.baseline_rate <= 0 or self.censor_max <= 0 or self.weibull_shape <= 0:
            raise ValueError("baseline_rate, censor_max and weibull_shape must be positive")

        if self.beta is None:
            self.beta = [0.5 * (-1) ** j for j in range(self.d)]
        if self.alpha is None:
            self.alpha = [0.4] * self.d
        if len(self.beta) != self.d or len(self.alpha) != self.d:
            raise ValueError("beta and alpha must have length d")

        if self.rct_mode:
            self.gamma_sel = 0.0
            self.alpha = [0.0] * self.d
            self.alpha0 = 0.0

        if self.centers is not None:
            if self.centers < 2:
                raise ValueError("centers must be >= 2 when given")
            span = np.linspace(-1.0, 1.0, self.centers).tolist()
            if self.center_alpha0_shifts is None:
                self.center_alpha0_shifts = span
            if self.center_covariate_shifts is None:
                self.center_covariate_shifts = [0.5 * s for s in span]
            if (len(self.center_alpha0_shifts) != self.centers
                    or len(self.center_covariate_shifts) != self.centers):
                raise ValueError("per-center shifts must have one entry per center")
            if self.rct_mode:
                self.center_alpha0_shifts = [0.0] * self.centers
        return self

    def truth(self) -> Dict[str, Any]:
        """Sidecar ground-truth summary."""
        return {
            "theta": self.theta,
            "gamma_out": self.gamma_out,
            "gamma_sel": self.gamma_sel,
            "beta": list(self.beta or []),
            "alpha": list(self.alpha or []),
            "alpha0": self.alpha0,
            "rct_mode": self.rct_mode,
            "centers": self.centers,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SynthCohort:
    """
    A generated cohort plus its ground truth.

    ``hidden_v`` is kept outside the Cohort; only diagnostics read it.
    """

    cohort: Cohort
    hidden_v: np.ndarray
    theta: float
    config: SynthConfig
    attempts: int = 1

    def __post_init__(self):
        if len(self.hidden_v) != len(self.cohort):
            raise ValueError("hidden_v length must equal cohort size")
        if "V" in self.cohort.feature_names or "hidden_v" in self.cohort.feature_names:
            raise ValueError("hidden factor must not appear among cohort covariates")

    def truth(self) -> Dict[str, Any]:
        data = self.config.truth()
        data["attempts"] = self.attempts
        return data
