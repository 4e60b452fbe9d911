"""
Kaplan-Meier, restricted mean survival time, jackknife pseudo-observations
and the weighted Cox proportional-hazards solver.

Everything here is a pure function of its inputs. Arrays are copied or
sorted locally; callers' arrays are never modified.
"""

from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from ..models.survival import HREstimate, PseudoOutcome, SurvivalCurve
from ..utils.exceptions import (
    AllZeroWeightsError,
    GroupTooSmallError,
    NoEventsError,
    NotConvergedError,
    SingularDesignError,
)
from ..utils.logger import get_numerics_logger

logger = get_numerics_logger()


def _as_inputs(times, events, weights=None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    times = np.asarray(times, dtype=float).ravel()
    events = np.asarray(events, dtype=int).ravel()
    if weights is None:
        weights = np.ones_like(times)
    else:
        weights = np.asarray(weights, dtype=float).ravel()

    if not (len(times) == len(events) == len(weights)):
        raise ValueError("times, events and weights must have equal length")
    if np.any(~np.isfinite(times)) or np.any(times < 0):
        raise ValueError("times must be finite and nonnegative")
    if np.any(~np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and nonnegative")
    if not np.all(np.isin(events, (0, 1))):
        raise ValueError("events must be 0 or 1")
    if weights.sum() <= 0:
        raise AllZeroWeightsError("All observation weights are zero")
    return times, events, weights


# ----------------------------------------------------------------------
# Kaplan-Meier and RMST
# ----------------------------------------------------------------------

def km_fit(times, events, weights=None) -> SurvivalCurve:
    """
    Weighted product-limit estimate.

    Tied times aggregate their weighted events; the curve is defined at every
    distinct observed time and carries its last value beyond the final one.
    """
    times, events, weights = _as_inputs(times, events, weights)

    order = np.argsort(times, kind="mergesort")
    t, e, w = times[order], events[order], weights[order]
    uniq, first = np.unique(t, return_index=True)

    died = np.add.reduceat(w * e, first)
    at_risk = np.cumsum(w[::-1])[::-1][first]
    with np.errstate(divide="ignore", invalid="ignore"):
        hazard = np.where(at_risk > 0, died / at_risk, 0.0)
    survival = np.clip(np.cumprod(1.0 - hazard), 0.0, 1.0)

    return SurvivalCurve(times=uniq, survival=survival, at_risk=at_risk, events=died)


def survival_at(curve: SurvivalCurve, t: float) -> float:
    """Step value at the largest curve time <= t (1.0 before the first time)."""
    idx = int(np.searchsorted(curve.times, t, side="right")) - 1
    return 1.0 if idx < 0 else float(curve.survival[idx])


def _step_area(step_times: np.ndarray, step_values: np.ndarray, tau: float) -> float:
    mask = step_times < tau
    grid = step_times[mask]
    starts = np.concatenate(([0.0], grid))
    ends = np.concatenate((grid, [tau]))
    values = np.concatenate(([1.0], step_values[mask]))
    return float(np.sum(values * (ends - starts)))


def rmst(curve: SurvivalCurve, tau: float) -> float:
    """Area under the survival step function on [0, tau]."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return _step_area(curve.times, curve.survival, tau)


def export_curve(curve: SurvivalCurve, path: Union[str, Path]) -> Path:
    """Write a (time, survival) two-column CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"time": curve.times, "survival": curve.survival}).to_csv(path, index=False)
    return path


# ----------------------------------------------------------------------
# Pseudo-observations
# ----------------------------------------------------------------------

def _jackknife_rmst(times: np.ndarray, events: np.ndarray, tau: float) -> np.ndarray:
    """Leave-one-out RMST pseudo-values for one group (unit weights)."""
    n = len(times)
    order = np.argsort(times, kind="mergesort")
    t, e = times[order], events[order].astype(float)
    uniq, first = np.unique(t, return_index=True)
    group_of = np.searchsorted(uniq, t)

    died_full = np.add.reduceat(e, first)
    risk_full = (n - first).astype(float)

    def area(died: np.ndarray, risk: np.ndarray) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            hazard = np.where(risk > 0, died / risk, 0.0)
        return _step_area(uniq, np.cumprod(1.0 - hazard), tau)

    full = area(died_full, risk_full)

    loo = np.empty(n)
    for pos in range(n):
        g = group_of[pos]
        died = died_full.copy()
        died[g] -= e[pos]
        risk = risk_full.copy()
        risk[: g + 1] -= 1.0
        loo[pos] = area(died, risk)

    values = np.empty(n)
    values[order] = n * full - (n - 1) * loo
    return values


def pseudo_rmst(
    times,
    events,
    tau: float,
    scope: str = "full",
    treatment: Optional[Sequence[int]] = None,
) -> PseudoOutcome:
    """
    Jackknife pseudo-RMST: Y_i = n*mu - (n-1)*mu_(-i).

    scope="full" uses the pooled sample; scope="per-arm" computes mu within
    each treatment arm separately (treatment required).
    """
    times, events, _ = _as_inputs(times, events)
    if not tau > 0:
        raise ValueError("tau must be positive")

    n = len(times)
    if scope == "full":
        groups = [np.arange(n)]
    elif scope == "per-arm":
        if treatment is None:
            raise ValueError("per-arm scope requires treatment")
        arm = np.asarray(treatment, dtype=int)
        groups = [np.flatnonzero(arm == a) for a in (0, 1)]
    else:
        raise ValueError(f"Unknown pseudo-observation scope: {scope}")

    values = np.empty(n)
    for idx in groups:
        if len(idx) < 2:
            raise GroupTooSmallError(
                f"Pseudo-observations need at least 2 patients per group (got {len(idx)})",
                details={"scope": scope, "size": int(len(idx))},
            )
        values[idx] = _jackknife_rmst(times[idx], events[idx], tau)

    return PseudoOutcome(values=values, tau=float(tau), scope=scope)


# ----------------------------------------------------------------------
# Weighted Cox proportional hazards (Efron ties)
# ----------------------------------------------------------------------

class _EfronProblem:
    """Sorted, centered design for repeated Efron likelihood evaluations."""

    def __init__(self, X: np.ndarray, times: np.ndarray, events: np.ndarray, weights: np.ndarray):
        order = np.argsort(times, kind="mergesort")
        self.X = X[order]
        self.w = weights[order]
        t = times[order]
        dead = (events[order] == 1) & (self.w > 0)

        event_times = np.unique(t[dead])
        self.risk_start = np.searchsorted(t, event_times, side="left")
        group = np.searchsorted(event_times, t[dead])
        n_groups = len(event_times)

        d = X.shape[1]
        self.dead_index = np.flatnonzero(dead)
        self.dead_group = group
        self.m = np.bincount(group, minlength=n_groups).astype(float)
        self.wd = np.bincount(group, weights=self.w[dead], minlength=n_groups)
        self.xsum = np.zeros((n_groups, d))
        np.add.at(self.xsum, group, self.w[dead, None] * self.X[dead])

        # Expanded Efron rows: tie position l = 0..m-1 within each group
        counts = self.m.astype(int)
        self.row_group = np.repeat(np.arange(n_groups), counts)
        offsets = np.repeat(np.cumsum(counts) - counts, counts)
        self.frac = (np.arange(counts.sum()) - offsets) / self.m[self.row_group]
        self.coef = (self.wd / self.m)[self.row_group]
        self.n_groups = n_groups

    def evaluate(self, beta: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """Return (log-likelihood, gradient, hessian) at beta."""
        X, w = self.X, self.w
        eta = X @ beta
        shift = float(eta.max()) if len(eta) else 0.0
        phi = w * np.exp(eta - shift)

        phi_x = phi[:, None] * X
        phi_xx = phi_x[:, :, None] * X[:, None, :]
        r0 = np.cumsum(phi[::-1])[::-1][self.risk_start]
        r1 = np.cumsum(phi_x[::-1], axis=0)[::-1][self.risk_start]
        r2 = np.cumsum(phi_xx[::-1], axis=0)[::-1][self.risk_start]

        g, di = self.dead_group, self.dead_index
        G, d = self.n_groups, X.shape[1]
        t0 = np.bincount(g, weights=phi[di], minlength=G)
        t1 = np.zeros((G, d))
        np.add.at(t1, g, phi_x[di])
        t2 = np.zeros((G, d, d))
        np.add.at(t2, g, phi_xx[di])

        rg, frac, coef = self.row_group, self.frac, self.coef
        denom = r0[rg] - frac * t0[rg]
        numer = r1[rg] - frac[:, None] * t1[rg]
        s = numer / denom[:, None]

        c1 = np.bincount(rg, weights=coef / denom, minlength=G)
        c2 = np.bincount(rg, weights=coef * frac / denom, minlength=G)

        loglik = float(np.sum(self.xsum @ beta) - np.sum(coef * (np.log(denom) + shift)))
        gradient = self.xsum.sum(axis=0) - (coef[:, None] * s).sum(axis=0)
        hessian = (
            np.einsum("r,ri,rj->ij", coef, s, s)
            - np.einsum("g,gij->ij", c1, r2)
            + np.einsum("g,gij->ij", c2, t2)
        )
        return loglik, gradient, hessian


def partial_log_likelihood(beta, covariate_matrix, times, events, weights=None) -> float:
    """Weighted Efron partial log-likelihood of an arbitrary design at beta."""
    times, events, weights = _as_inputs(times, events, weights)
    X = np.asarray(covariate_matrix, dtype=float).reshape(len(times), -1)
    return _EfronProblem(X, times, events, weights).evaluate(np.asarray(beta, dtype=float))[0]


def _solve_information(hessian: np.ndarray, rhs: np.ndarray, ridge: float) -> Tuple[np.ndarray, bool]:
    """Solve (-H) x = rhs; retries once with a ridge on failure."""
    info = -hessian
    try:
        return linalg.cho_solve(linalg.cho_factor(info), rhs), False
    except linalg.LinAlgError:
        pass
    try:
        ridged = info + ridge * np.eye(info.shape[0])
        return linalg.cho_solve(linalg.cho_factor(ridged), rhs), True
    except linalg.LinAlgError:
        raise SingularDesignError("Observed information is singular even after ridge")


def cox_fit(
    covariate_matrix,
    treatment,
    times,
    events,
    weights=None,
    column_names: Optional[Sequence[str]] = None,
    max_iter: int = 100,
    grad_tol: float = 1e-8,
    ridge: float = 1e-9,
    max_halvings: int = 30,
) -> HREstimate:
    """
    Fit a weighted Cox model with Efron ties and return the treatment effect.

    The design is [treatment, covariates...]. Covariate columns that are
    constant over positive-weight rows are dropped and reported.

    Raises:
        NoEventsError: no positive-weight event
        SingularDesignError: collinear design or constant treatment
        NotConvergedError: Newton with step-halving exhausted max_iter
    """
    times, events, weights = _as_inputs(times, events, weights)
    n = len(times)
    covariates = np.asarray(covariate_matrix, dtype=float).reshape(n, -1) if covariate_matrix is not None \
        else np.zeros((n, 0))
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(covariates.shape[1])]
    if len(names) != covariates.shape[1]:
        raise ValueError("column_names must match covariate columns")

    if float(np.sum(weights * events)) <= 0:
        raise NoEventsError("Cox fit requires at least one weighted event")

    design = np.column_stack([np.asarray(treatment, dtype=float).ravel(), covariates])
    all_names = ["treatment", *names]
    active = weights > 0
    if np.ptp(design[active, 0]) == 0:
        raise SingularDesignError("Treatment indicator is constant among weighted patients")

    keep = [0] + [j for j in range(1, design.shape[1]) if np.ptp(design[active, j]) > 0]
    dropped = tuple(all_names[j] for j in range(design.shape[1]) if j not in keep)
    design = design[:, keep]
    kept_names = tuple(all_names[j] for j in keep)

    # Centering leaves the partial likelihood's maximizer unchanged
    design = design - np.average(design, axis=0, weights=weights)
    scaled = design[active] * np.sqrt(weights[active])[:, None]
    if np.linalg.matrix_rank(scaled) < design.shape[1]:
        raise SingularDesignError(
            "Cox design matrix is rank deficient",
            details={"columns": list(kept_names)},
        )

    problem = _EfronProblem(design, times, events, weights)
    beta = np.zeros(design.shape[1])
    loglik, gradient, hessian = problem.evaluate(beta)
    ridge_used = False
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        if np.max(np.abs(gradient)) < grad_tol:
            converged = True
            break

        step, ridged = _solve_information(hessian, gradient, ridge)
        ridge_used |= ridged

        scale = 1.0
        for _ in range(max_halvings):
            candidate = beta + scale * step
            cand_ll, cand_grad, cand_hess = problem.evaluate(candidate)
            if np.isfinite(cand_ll) and cand_ll >= loglik - 1e-12 * max(1.0, abs(loglik)):
                break
            scale *= 0.5
        else:
            raise NotConvergedError(
                "Cox step-halving failed to increase the partial likelihood",
                details={"iteration": iterations},
            )

        change = abs(cand_ll - loglik)
        beta, loglik, gradient, hessian = candidate, cand_ll, cand_grad, cand_hess

        # Floating-point floor: no further progress is representable
        if np.max(np.abs(scale * step)) < 1e-12 and change <= 1e-14 * max(1.0, abs(loglik)):
            converged = True
            break
    else:
        converged = np.max(np.abs(gradient)) < grad_tol

    if not converged:
        raise NotConvergedError(
            f"Cox fit did not converge in {max_iter} iterations",
            details={"gradient_norm": float(np.max(np.abs(gradient)))},
        )

    covariance, ridged = _solve_information(hessian, np.eye(len(beta)), ridge)
    ridge_used |= ridged
    if ridge_used:
        logger.warning(f"Ridge {ridge:g} added to the Cox information matrix")

    se = float(np.sqrt(covariance[0, 0]))
    return HREstimate(
        log_hr=float(beta[0]),
        se=se,
        iterations=iterations,
        converged=True,
        coefficients=tuple(float(b) for b in beta),
        column_names=kept_names,
        dropped_columns=dropped,
        ridge_applied=ridge_used,
        gradient_norm=float(np.max(np.abs(gradient))),
        log_likelihood=loglik,
    )
