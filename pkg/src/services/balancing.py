"""
Balancing strategies: prognostic matching with the scalar reweight,
entropy balancing and clipped IPTW, plus SMD diagnostics.

All methods target the treated population: treated patients keep weight 1
and controls are reweighted (or matched) toward them.
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax

from ..models.balance import BalanceTarget, SMDRow, WeightedCohort
from ..models.cohort import Cohort
from ..utils.config import get_config
from ..utils.exceptions import (
    EmptySubgroupError,
    InfeasibleError,
    NoMatchesFoundError,
    NotConvergedError,
)
from ..utils.logger import get_numerics_logger
from .cohort_loader import standardize, standardize_columns
from .logistic import fit_logistic, predict_probability

logger = get_numerics_logger()


# ----------------------------------------------------------------------
# Balancing features
# ----------------------------------------------------------------------

def build_target(
    cohort: Cohort,
    scores: Optional[np.ndarray] = None,
    latent: Optional[np.ndarray] = None,
    moments: int = 2,
) -> BalanceTarget:
    """
    Z = [X, s, Ũ, s^2, Ũ^2] on standardized columns.

    Quadratic terms are squares of the standardized s and Ũ, themselves
    re-standardized; they are only added when ``moments == 2``.
    """
    if moments not in (1, 2):
        raise ValueError("moments must be 1 or 2")

    blocks: List[np.ndarray] = []
    columns: List[str] = []
    if cohort.covariates.shape[1]:
        blocks.append(standardize_columns(cohort.covariates))
        columns.extend(cohort.feature_names)

    extras: List[Tuple[str, np.ndarray]] = []
    if scores is not None:
        extras.append(("score", standardize_columns(np.asarray(scores, dtype=float).reshape(-1, 1))))
    if latent is not None:
        extras.append(("latent", standardize_columns(np.asarray(latent, dtype=float).reshape(-1, 1))))

    for name, col in extras:
        blocks.append(col)
        columns.append(name)
    if moments == 2:
        for name, col in extras:
            blocks.append(standardize_columns(col ** 2))
            columns.append(f"{name}^2")

    Z = np.hstack(blocks) if blocks else np.zeros((len(cohort), 0))
    return BalanceTarget(
        Z=Z,
        columns=tuple(columns),
        include_x=bool(cohort.covariates.shape[1]),
        include_score=scores is not None,
        include_latent=latent is not None,
        include_score_sq=scores is not None and moments == 2,
        include_latent_sq=latent is not None and moments == 2,
    )


# ----------------------------------------------------------------------
# SMD diagnostics
# ----------------------------------------------------------------------

def smd_detail(values, group, weights=None) -> Tuple[float, bool]:
    """Return (SMD, zero_pooled_sd_flag)."""
    values = np.asarray(values, dtype=float)
    group = np.asarray(group, dtype=int)
    weights = np.ones_like(values) if weights is None else np.asarray(weights, dtype=float)

    stats = []
    for g in (1, 0):
        mask = group == g
        w = weights[mask]
        if w.sum() <= 0:
            raise ValueError(f"group {g} has no positive weight")
        mean = np.average(values[mask], weights=w)
        var = np.average((values[mask] - mean) ** 2, weights=w)
        stats.append((mean, var))

    (m1, v1), (m0, v0) = stats
    pooled = np.sqrt((v1 + v0) / 2.0)
    if pooled == 0:
        return 0.0, True
    return float((m1 - m0) / pooled), False


def smd(values, group, weights=None) -> float:
    """Weighted standardized mean difference (group 1 minus group 0)."""
    return smd_detail(values, group, weights)[0]


def smd_table(
    columns: Sequence[str],
    z_before: np.ndarray,
    group_before: np.ndarray,
    z_after: np.ndarray,
    group_after: np.ndarray,
    weights_after: np.ndarray,
) -> Tuple[SMDRow, ...]:
    """Per-feature SMD of the unweighted input and the weighted output."""
    rows = []
    for j, name in enumerate(columns):
        before, _ = smd_detail(z_before[:, j], group_before)
        after, zero = smd_detail(z_after[:, j], group_after, weights_after)
        rows.append(SMDRow(feature=name, smd_before=before, smd_after=after, zero_variance=zero))
    return tuple(rows)


# ----------------------------------------------------------------------
# Prognostic matching
# ----------------------------------------------------------------------

def score_buckets(scores: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-count bucket index per patient from score quantiles."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    edges = np.quantile(scores, np.linspace(0.0, 1.0, n_bins + 1))
    return np.searchsorted(edges[1:-1], scores, side="right")


def prognostic_match(cohort: Cohort, scores, n_bins: int) -> WeightedCohort:
    """
    Greedy 1:1 matching within score-quantile buckets.

    Treated patients are processed by descending score (ties by index) and
    take the nearest unused control on standardized X (ties by index).

    Raises:
        NoMatchesFoundError: no bucket holds both arms
    """
    cohort.require_two_arms()
    scores = np.asarray(scores, dtype=float)
    features = (cohort if cohort.is_standardized else standardize(cohort)).covariates
    arm = cohort.treatment
    buckets = score_buckets(scores, n_bins)

    pairs: List[Tuple[int, int, float]] = []
    for b in range(n_bins):
        treated = np.flatnonzero((buckets == b) & (arm == 1))
        controls = np.flatnonzero((buckets == b) & (arm == 0))
        if not len(treated) or not len(controls):
            continue
        available = np.ones(len(controls), dtype=bool)
        for t in treated[np.lexsort((treated, -scores[treated]))]:
            if not available.any():
                break
            pool = controls[available]
            dist = np.sqrt(np.sum((features[pool] - features[t]) ** 2, axis=1))
            best = np.lexsort((pool, dist))[0]
            c = pool[best]
            pairs.append((int(t), int(c), float(dist[best])))
            available[np.searchsorted(controls, c)] = False

    if not pairs:
        raise NoMatchesFoundError(f"No score bucket contains both arms (n_bins={n_bins})")

    index = np.array([i for t, c, _ in pairs for i in (t, c)])
    ids = cohort.ids
    partners = [ids[c] if pos == 0 else ids[t] for t, c, _ in pairs for pos in (0, 1)]
    matched = cohort.subset(index)

    logger.debug(f"Matched {len(pairs)} pairs over {n_bins} bucket(s)")
    return WeightedCohort(
        cohort=matched,
        weights=np.ones(len(index)),
        method="matching",
        source_index=index,
        partner_ids=partners,
        metadata={
            "n_bins": n_bins,
            "pairs": len(pairs),
            "unmatched_treated": int(cohort.n_treated - len(pairs)),
            "mean_match_distance": float(np.mean([d for _, _, d in pairs])),
        },
    )


def scalar_weight(latent, treatment, events, lower: float = 0.5, upper: float = 20.0) -> Tuple[float, bool, bool]:
    """
    Solve for w so that the untreated mean of Ũ equals the treated mean with
    treated no-event patients weighted by w. Returns (w, clipped, degenerate).
    """
    u = np.asarray(latent, dtype=float)
    arm = np.asarray(treatment, dtype=int)
    events = np.asarray(events, dtype=int)

    no_event = (arm == 1) & (events == 0)
    with_event = (arm == 1) & (events == 1)
    if not no_event.any():
        raise EmptySubgroupError("No treated patient without an event; scalar weight undefined")

    target = u[arm == 0].mean()
    numerator = target * with_event.sum() - u[with_event].sum()
    denominator = u[no_event].sum() - target * no_event.sum()

    if abs(denominator) < 1e-12:
        return 1.0, False, True
    w = numerator / denominator
    clipped = not (lower <= w <= upper)
    return float(np.clip(w, lower, upper)), clipped, False


def scalar_reweight(matched: WeightedCohort, latent, lower: Optional[float] = None,
                    upper: Optional[float] = None) -> WeightedCohort:
    """
    Apply the scalar weight to treated no-event patients of a matched cohort.

    ``latent`` is indexed by the pre-matching cohort.
    """
    if matched.method != "matching":
        raise ValueError("scalar_reweight applies to matched cohorts only")
    bounds = get_config().solvers.scalar_weight
    lower = bounds.lower if lower is None else lower
    upper = bounds.upper if upper is None else upper

    cohort = matched.cohort
    u = np.asarray(latent, dtype=float)[matched.source_index]
    w, clipped, degenerate = scalar_weight(u, cohort.treatment, cohort.events, lower, upper)
    if clipped:
        logger.warning(f"Scalar weight clipped into [{lower}, {upper}]: w = {w}")
    if degenerate:
        logger.info("Scalar weight denominator vanished; w = 1")

    weights = np.ones(len(cohort))
    weights[(cohort.treatment == 1) & (cohort.events == 0)] = w
    metadata = dict(matched.metadata)
    metadata.update({"scalar_weight": w, "scalar_weight_clipped": clipped, "scalar_weight_degenerate": degenerate})
    return WeightedCohort(
        cohort=cohort,
        weights=weights,
        method="matching",
        source_index=matched.source_index,
        partner_ids=matched.partner_ids,
        metadata=metadata,
    )


# ----------------------------------------------------------------------
# Entropy balancing
# ----------------------------------------------------------------------

def entropy_weights(
    z: np.ndarray,
    treatment,
    max_iter: Optional[int] = None,
    tol: Optional[float] = None,
    columns: Optional[Sequence[str]] = None,
) -> Tuple[np.ndarray, Dict[str, object]]:
    """
    Control weights minimizing sum w log w with the treated moments matched.

    Solved through the dual: w_i proportional to exp(c_i . lam) with
    c_i = z_i - mean_treated(z); lam minimizes logsumexp(C lam) by Newton
    with backtracking, starting from zero (uniform weights).
    """
    settings = get_config().solvers.entropy
    max_iter = settings.max_iter if max_iter is None else max_iter
    tol = settings.tol if tol is None else tol

    z = np.asarray(z, dtype=float)
    arm = np.asarray(treatment, dtype=int)
    names = list(columns) if columns is not None else [f"z{j}" for j in range(z.shape[1])]
    n_treated = int(arm.sum())
    C = z[arm == 0] - z[arm == 1].mean(axis=0)

    lam = np.zeros(C.shape[1])
    value = logsumexp(C @ lam)
    iterations = 0

    def worst(gradient):
        j = int(np.argmax(np.abs(gradient)))
        return {"worst_constraint": names[j], "residual": float(gradient[j]), "iterations": iterations}

    while True:
        p = softmax(C @ lam)
        gradient = C.T @ p
        if not len(gradient) or np.max(np.abs(gradient)) < tol:
            break
        # Dual value below zero cannot occur when the moments are attainable
        if value < -1e-12:
            raise InfeasibleError("Entropy balancing constraints are infeasible", details=worst(gradient))
        if iterations >= max_iter:
            raise NotConvergedError(
                f"Entropy balancing did not converge in {max_iter} iterations", details=worst(gradient)
            )
        iterations += 1

        hessian = (C * p[:, None]).T @ C - np.outer(gradient, gradient)
        step = -np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        slope = float(gradient @ step)
        if slope >= 0:
            step, slope = -gradient, -float(gradient @ gradient)

        t = 1.0
        for _ in range(60):
            candidate = logsumexp(C @ (lam + t * step))
            if candidate <= value + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            raise NotConvergedError("Entropy balancing line search stalled", details=worst(gradient))
        lam = lam + t * step
        value = candidate

    weights = np.ones(len(arm))
    weights[arm == 0] = n_treated * softmax(C @ lam)
    residual = float(np.max(np.abs(gradient))) if len(gradient) else 0.0
    return weights, {"iterations": iterations, "max_residual": residual}


def entropy_balance(cohort: Cohort, target: BalanceTarget, moments: int = 2,
                    max_iter: Optional[int] = None, tol: Optional[float] = None) -> WeightedCohort:
    """Entropy balancing of controls toward the treated on the target columns."""
    cohort.require_two_arms()
    if moments not in (1, 2):
        raise ValueError("moments must be 1 or 2")
    used = target if moments == 2 else target.without_squares()
    weights, info = entropy_weights(used.Z, cohort.treatment, max_iter, tol, used.columns)
    logger.debug(f"Entropy balancing converged in {info['iterations']} iterations")
    return WeightedCohort(
        cohort=cohort,
        weights=weights,
        method="entropy",
        source_index=np.arange(len(cohort)),
        metadata={"moments": moments, **info},
    )


# ----------------------------------------------------------------------
# IPTW
# ----------------------------------------------------------------------

def att_weights(propensity, treatment, clip: float) -> np.ndarray:
    """Treated weight 1; control weight p/(1-p) after clipping p into [clip, 1-clip]."""
    if not (0.0 < clip < 0.5):
        raise ValueError("clip must lie in (0, 0.5)")
    p = np.clip(np.asarray(propensity, dtype=float), clip, 1.0 - clip)
    arm = np.asarray(treatment, dtype=int)
    return np.where(arm == 1, 1.0, p / (1.0 - p))


def iptw_weights(cohort: Cohort, target: BalanceTarget, clip: float = 0.05) -> WeightedCohort:
    """Logistic propensity on (X, s, Ũ) and clipped ATT weights."""
    cohort.require_two_arms()
    features = target.without_squares().Z
    if features.shape[1] == 0:
        features = np.zeros((len(cohort), 1))
    model = fit_logistic(features, cohort.treatment)
    propensity = predict_probability(model, features)
    clipped = int(np.sum((propensity < clip) | (propensity > 1 - clip)))
    if clipped:
        logger.info(f"{clipped} propensity value(s) clipped at {clip}")
    return WeightedCohort(
        cohort=cohort,
        weights=att_weights(propensity, cohort.treatment, clip),
        method="iptw",
        source_index=np.arange(len(cohort)),
        metadata={"clip": clip, "clipped_count": clipped},
    )


def with_smd(weighted: WeightedCohort, target: BalanceTarget, original: Cohort) -> WeightedCohort:
    """Attach the before/after SMD table on the target's first-moment columns."""
    used = target.without_squares()
    table = smd_table(
        used.columns,
        used.Z,
        original.treatment,
        used.Z[weighted.source_index],
        weighted.cohort.treatment,
        weighted.weights,
    )
    return WeightedCohort(
        cohort=weighted.cohort,
        weights=weighted.weights,
        method=weighted.method,
        source_index=weighted.source_index,
        partner_ids=weighted.partner_ids,
        smd_table=table,
        metadata=weighted.metadata,
    )


def export_weights(weighted: WeightedCohort, path: Union[str, Path]) -> Path:
    """Write (id, weight[, matched_partner_id])."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"id": weighted.cohort.ids, "weight": weighted.weights})
    if weighted.partner_ids is not None:
        frame["matched_partner_id"] = weighted.partner_ids
    frame.to_csv(path, index=False)
    return path


def export_smd(table: Sequence[SMDRow], path: Union[str, Path]) -> Path:
    """Write (feature, smd_before, smd_after)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([row.to_dict() for row in table], columns=["feature", "smd_before", "smd_after"]).to_csv(
        path, index=False
    )
    return path
