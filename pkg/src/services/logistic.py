"""L2-regularized logistic regression shared by score cross-fitting and IPTW."""

import warnings
from typing import Optional

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression

from ..utils.config import get_config
from ..utils.exceptions import NotConvergedError
from ..utils.logger import get_numerics_logger

logger = get_numerics_logger()


def fit_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    l2: Optional[float] = None,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
) -> LogisticRegression:
    """
    Fit P(label = 1 | features) with a Newton solver.

    The penalty is ``l2 / 2 * ||coef||^2`` on the mean log-loss; the
    intercept is not penalized.

    Raises:
        NotConvergedError: the solver stopped at max_iter
    """
    settings = get_config().solvers.logistic
    l2 = settings.l2 if l2 is None else l2
    max_iter = settings.max_iter if max_iter is None else max_iter
    tol = settings.tol if tol is None else tol

    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    labels = np.asarray(labels, dtype=int)
    if len(np.unique(labels)) < 2:
        raise ValueError("logistic fit needs both label classes")

    model = LogisticRegression(
        C=1.0 / (l2 * len(labels)),
        solver="newton-cholesky",
        tol=tol,
        max_iter=max_iter,
    )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        model.fit(features, labels)

    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        raise NotConvergedError(
            f"Logistic regression did not converge in {max_iter} iterations",
            details={"n": int(len(labels)), "features": int(features.shape[1])},
        )

    logger.debug(f"Logistic fit on {len(labels)} rows, {features.shape[1]} features, {model.n_iter_[0]} iterations")
    return model


def predict_probability(model: LogisticRegression, features: np.ndarray) -> np.ndarray:
    """Positive-class probabilities."""
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    return model.predict_proba(features)[:, 1]
