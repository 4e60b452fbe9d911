"""
Latent prognostic factor construction.

For each patient, same-arm neighbors on the opposite survival trajectory
are found (longer survivors for event patients, earlier events for censored
patients); the raw factor is the patient's pseudo-RMST minus the neighbor
mean, then normalized within each (arm, sign) group to [-1, 1].
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..models.cohort import Cohort
from ..models.latent import (
    CENSORED_DIRECTION,
    EVENT_DIRECTION,
    LatentAssignment,
    LatentConfig,
    NeighborSet,
)
from ..models.survival import PseudoOutcome
from ..utils.logger import get_numerics_logger
from .cohort_loader import standardize, standardize_columns
from .survival_core import pseudo_rmst

logger = get_numerics_logger()


class NeighborFinder:
    """
    Exact directional neighbor search over one cohort.

    Distances are Euclidean on the cohort's standardized covariates, with
    the standardized prognostic score appended as one extra coordinate when
    ``include_score`` is set.
    """

    def __init__(self, cohort: Cohort, scores: Optional[np.ndarray] = None, include_score: bool = False):
        if not cohort.is_standardized:
            cohort = standardize(cohort)
        features = cohort.covariates
        if include_score:
            if scores is None:
                raise ValueError("include_score requires prognostic scores")
            score_col = standardize_columns(np.asarray(scores, dtype=float).reshape(-1, 1))
            features = np.hstack([features, score_col])

        self.features = features
        self.times = cohort.times
        self.events = cohort.events
        self.arm = cohort.treatment

    def candidates(self, i: int) -> np.ndarray:
        """Direction-eligible same-arm patients for anchor i (ascending index)."""
        same_arm = self.arm == self.arm[i]
        if self.events[i] == 1:
            mask = same_arm & (self.times > self.times[i])
        else:
            mask = same_arm & (self.events == 1) & (self.times < self.times[i])
        return np.flatnonzero(mask)

    def _direction(self, i: int) -> str:
        return EVENT_DIRECTION if self.events[i] == 1 else CENSORED_DIRECTION

    def nearest(self, i: int, k: int) -> NeighborSet:
        """Up to k closest candidates; distance ties go to the lower index."""
        cand = self.candidates(i)
        dist = np.sqrt(np.sum((self.features[cand] - self.features[i]) ** 2, axis=1))
        chosen = cand[np.lexsort((cand, dist))[:k]]
        return NeighborSet(i, tuple(int(j) for j in chosen), len(cand), self._direction(i))

    def sample(self, i: int, k: int, rng: np.random.Generator) -> NeighborSet:
        """Up to k candidates drawn uniformly without replacement."""
        cand = self.candidates(i)
        take = min(k, len(cand))
        chosen = np.sort(rng.choice(cand, size=take, replace=False)) if take else cand
        return NeighborSet(i, tuple(int(j) for j in chosen), len(cand), self._direction(i))


def directional_neighbors(
    cohort: Cohort,
    pseudo: PseudoOutcome,
    scores: Optional[np.ndarray],
    i: int,
    k: int,
    include_score: bool = False,
) -> NeighborSet:
    """Directional neighbor set of patient i (builds a one-off finder)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(pseudo) != len(cohort):
        raise ValueError("pseudo outcome length must equal cohort size")
    return NeighborFinder(cohort, scores, include_score).nearest(i, k)


def check_neighbor_sets(cohort: Cohort, neighbor_sets: Sequence[NeighborSet]) -> None:
    """Verify arm equality and the strict directional time rule for every anchor."""
    times, events, arm = cohort.times, cohort.events, cohort.treatment
    for ns in neighbor_sets:
        if ns.is_empty:
            continue
        nbrs = np.asarray(ns.neighbors)
        i = ns.anchor
        if np.any(arm[nbrs] != arm[i]):
            raise ValueError(f"Neighbor of patient {i} crosses treatment arms")
        if events[i] == 1:
            ok = np.all(times[nbrs] > times[i])
        else:
            ok = np.all((events[nbrs] == 1) & (times[nbrs] < times[i]))
        if not ok:
            raise ValueError(f"Neighbor of patient {i} violates the directional time rule")


def raw_latent(pseudo: Union[PseudoOutcome, np.ndarray], neighbor_sets: Sequence[NeighborSet]) -> np.ndarray:
    """U_i = Y_i - mean(Y_j over neighbors); 0 for empty sets."""
    values = pseudo.values if isinstance(pseudo, PseudoOutcome) else np.asarray(pseudo, dtype=float)
    u = np.zeros(len(values))
    for ns in neighbor_sets:
        if not ns.is_empty:
            u[ns.anchor] = values[ns.anchor] - values[list(ns.neighbors)].mean()
    return u


def normalize_latent(raw_u, treatment, winsor_quantile: float = 0.95) -> np.ndarray:
    """
    Signed winsorized scaling within each (arm, sign) group.

    q is the linear-interpolation quantile of |U| over the group's nonzero
    values; Ũ = sign(U) * min(|U|, q) / q.
    """
    if not (0.5 < winsor_quantile <= 1.0):
        raise ValueError("winsor_quantile must lie in (0.5, 1]")
    raw_u = np.asarray(raw_u, dtype=float)
    arm = np.asarray(treatment, dtype=int)
    signs = np.sign(raw_u)
    out = np.zeros_like(raw_u)

    for a in np.unique(arm):
        for s in (-1.0, 1.0):
            mask = (arm == a) & (signs == s)
            if not mask.any():
                continue
            magnitudes = np.abs(raw_u[mask])
            q = float(np.quantile(magnitudes, winsor_quantile))
            out[mask] = s * np.minimum(magnitudes, q) / q
    return out


def _neighbor_sets(finder: NeighborFinder, n: int, config: LatentConfig, seed: int) -> List[NeighborSet]:
    if config.random_neighbors:
        rng = np.random.default_rng(seed)
        return [finder.sample(i, config.k, rng) for i in range(n)]
    return [finder.nearest(i, config.k) for i in range(n)]


def compute_latent(
    cohort: Cohort,
    scores: Optional[np.ndarray],
    config: LatentConfig,
    seed: int = 0,
) -> LatentAssignment:
    """pseudo-RMST -> directional neighbors -> raw U -> normalized Ũ."""
    cohort.require_two_arms()
    if not cohort.is_standardized:
        cohort = standardize(cohort)

    pseudo = pseudo_rmst(cohort.times, cohort.events, config.tau, config.pseudo_scope, cohort.treatment)
    finder = NeighborFinder(cohort, scores, config.include_score)
    sets = _neighbor_sets(finder, len(cohort), config, seed)
    check_neighbor_sets(cohort, sets)

    raw = raw_latent(pseudo, sets)
    normalized = normalize_latent(raw, cohort.treatment, config.winsor_quantile)
    fallback = np.array([ns.is_empty for ns in sets], dtype=bool)

    if fallback.any():
        logger.info(f"{int(fallback.sum())} patient(s) without directional neighbors; latent set to 0")

    return LatentAssignment(
        raw_u=raw,
        normalized_u=normalized,
        fallback_flags=fallback,
        config=config,
        neighbor_sets=tuple(sets),
        pseudo_values=pseudo.values,
        variant="random-neighbors" if config.random_neighbors else "standard",
        metadata={"seed": seed} if config.random_neighbors else {},
    )


def _permute_within(values: np.ndarray, groups: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = values.copy()
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        out[idx] = values[rng.permutation(idx)]
    return out


def permute_latent(assignment: LatentAssignment, mode: str, seed: int, treatment) -> LatentAssignment:
    """
    Destroy latent structure for the permutation diagnostics.

    y-within-arm permutes pseudo-RMST values within arm and recomputes U
    over the unchanged neighbor sets; u-within-arm and u-global permute
    the finished Ũ.
    """
    rng = np.random.default_rng(seed)
    arm = np.asarray(treatment, dtype=int)

    if mode == "y-within-arm":
        if assignment.pseudo_values is None:
            raise ValueError("y-within-arm permutation needs the assignment's pseudo values")
        permuted_y = _permute_within(assignment.pseudo_values, arm, rng)
        raw = raw_latent(permuted_y, assignment.neighbor_sets)
        normalized = normalize_latent(raw, arm, assignment.config.winsor_quantile)
        return assignment.with_values(normalized, mode, raw_u=raw, permutation_seed=seed)
    if mode == "u-within-arm":
        return assignment.with_values(
            _permute_within(assignment.normalized_u, arm, rng), mode, permutation_seed=seed
        )
    if mode == "u-global":
        return assignment.with_values(
            assignment.normalized_u[rng.permutation(len(assignment))], mode, permutation_seed=seed
        )
    raise ValueError(f"Unknown permutation mode: {mode}")


def ablation_latent(
    cohort: Cohort,
    variant: str,
    config: LatentConfig,
    seed: int = 0,
    scores: Optional[np.ndarray] = None,
) -> LatentAssignment:
    """Replace the neighbor-differenced factor by a simpler construction."""
    n = len(cohort)
    sign = np.where(cohort.events == 1, -1.0, 1.0)
    no_fallback = np.zeros(n, dtype=bool)

    if variant == "signed-outcome":
        return LatentAssignment(
            raw_u=sign.copy(), normalized_u=sign.copy(), fallback_flags=no_fallback,
            config=config, variant=variant,
        )
    if variant == "signed-rmst":
        pseudo = pseudo_rmst(cohort.times, cohort.events, config.tau, config.pseudo_scope, cohort.treatment)
        raw = sign * np.abs(pseudo.values)
        return LatentAssignment(
            raw_u=raw,
            normalized_u=normalize_latent(raw, cohort.treatment, config.winsor_quantile),
            fallback_flags=no_fallback,
            config=config,
            pseudo_values=pseudo.values,
            variant=variant,
        )
    if variant == "random-neighbors":
        random_config = LatentConfig(
            k=config.k,
            include_score=config.include_score,
            winsor_quantile=config.winsor_quantile,
            tau=config.tau,
            pseudo_scope=config.pseudo_scope,
            random_neighbors=True,
        )
        return compute_latent(cohort, scores, random_config, seed=seed)
    raise ValueError(f"Unknown ablation variant: {variant}")


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if np.std(a) == 0 or np.std(b) == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def hidden_factor_diagnostics(cohort: Cohort, assignment: LatentAssignment, hidden_v) -> Dict[str, object]:
    """Correlation of Ũ with a known hidden factor against the best observed covariate."""
    hidden_v = np.asarray(hidden_v, dtype=float)
    if len(hidden_v) != len(assignment):
        raise ValueError("hidden factor length must equal cohort size")

    covariate_corr = {
        name: _correlation(cohort.covariates[:, j], hidden_v) for j, name in enumerate(cohort.feature_names)
    }
    best_name = max(covariate_corr, key=lambda k: abs(covariate_corr[k]), default=None)
    corr_u = _correlation(assignment.normalized_u, hidden_v)
    best = abs(covariate_corr[best_name]) if best_name is not None else 0.0
    return {
        "corr_u_v": corr_u,
        "best_covariate": best_name,
        "best_covariate_abs_corr": best,
        "u_beats_covariates": corr_u > 0 and corr_u > best,
    }


def export_latent(cohort: Cohort, assignment: LatentAssignment, path: Union[str, Path]) -> Path:
    """Write (id, raw_u, normalized_u, fallback_flag, neighbor_ids)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        {
            "id": cohort.ids,
            "raw_u": assignment.raw_u,
            "normalized_u": assignment.normalized_u,
            "fallback_flag": assignment.fallback_flags.astype(int),
            "neighbor_ids": assignment.neighbor_ids(cohort.ids),
        }
    ).to_csv(path, index=False)
    return path
