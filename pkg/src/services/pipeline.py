"""Single-configuration pipeline: score, latent factor, balancing, weighted Cox."""

import threading
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ..models.balance import WeightedCohort
from ..models.cohort import Cohort
from ..models.latent import LatentAssignment, LatentConfig, ScoreAssignment
from ..models.run_config import GridInstance, RunConfig
from ..models.survival import HREstimate
from ..utils.config import get_config
from ..utils.logger import get_error_logger, get_pipeline_logger
from . import balancing
from .cohort_loader import standardize
from .latent_factor import ablation_latent, compute_latent, permute_latent
from .prognostic import score_cohort
from .survival_core import cox_fit


@dataclass
class DatasetContext:
    """
    One standardized cohort plus its per-dataset caches.

    Scores are cached per source and latent assignments per
    (k, include_score, source) so grid cells share them.
    """

    name: str
    cohort: Cohort
    hidden_v: Optional[np.ndarray] = None
    scores: Dict[str, ScoreAssignment] = field(default_factory=dict)
    latents: Dict[Tuple, LatentAssignment] = field(default_factory=dict)
    baseline: Dict[Tuple, "RunResult"] = field(default_factory=dict)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    def fresh(self) -> "DatasetContext":
        """Same cohort and scores; latent and baseline caches emptied."""
        return DatasetContext(name=self.name, cohort=self.cohort, hidden_v=self.hidden_v, scores=dict(self.scores))


@dataclass(frozen=True)
class RunResult:
    """Output of one pipeline execution."""

    estimate: HREstimate
    weighted: WeightedCohort
    latent: Optional[LatentAssignment] = None

    def diagnostics(self) -> Dict[str, Any]:
        summary = self.weighted.summary()
        return {f"balance_{k}": v for k, v in summary.items() if k != "method"}


class PipelineService:
    """
    Runs the three-step estimator for one configuration and variant.

    The X-only variant never sees Ũ; the X+Ũ variant adds Ũ to the
    balancing inputs only. Ũ is never a Cox design column.
    """

    def __init__(self, run_config: RunConfig):
        self.config = get_config()
        self.run_config = run_config
        self.logger = get_pipeline_logger()
        self.error_logger = get_error_logger()

    # ------------------------------------------------------------------
    # Dataset preparation and caches
    # ------------------------------------------------------------------

    def prepare(self, name: str, cohort: Cohort, hidden_v: Optional[np.ndarray] = None) -> DatasetContext:
        """Standardize a cohort and wrap it in a fresh context."""
        cohort.require_two_arms()
        standardized = standardize(cohort, by_center=self.run_config.standardize_per_center)
        return DatasetContext(name=name, cohort=standardized, hidden_v=hidden_v)

    def scores(self, ctx: DatasetContext, source: str) -> ScoreAssignment:
        with ctx.lock:
            if source not in ctx.scores:
                rc = self.run_config
                ctx.scores[source] = score_cohort(
                    ctx.cohort, source, horizon=rc.score_horizon, folds=rc.score_folds, seed=rc.seed
                )
            return ctx.scores[source]

    def latent_config(self, instance: GridInstance) -> LatentConfig:
        rc = self.run_config
        return LatentConfig(
            k=instance.k,
            include_score=instance.include_score,
            winsor_quantile=rc.winsor_quantile,
            tau=rc.tau,
            pseudo_scope=rc.pseudo_scope,
        )

    def latent(self, ctx: DatasetContext, instance: GridInstance) -> LatentAssignment:
        """Latent factor for the instance, with any configured permutation or ablation applied."""
        key = (instance.k, instance.include_score, instance.score_source if instance.include_score else None)
        with ctx.lock:
            if key in ctx.latents:
                return ctx.latents[key]

            rc = self.run_config
            config = self.latent_config(instance)
            scores = self.scores(ctx, instance.score_source).scores if instance.include_score else None

            if rc.ablation is not None:
                assignment = ablation_latent(ctx.cohort, rc.ablation, config, seed=rc.seed, scores=scores)
            else:
                assignment = compute_latent(ctx.cohort, scores, config, seed=rc.seed)
                if rc.permutation is not None:
                    assignment = permute_latent(assignment, rc.permutation, rc.seed, ctx.cohort.treatment)

            self.logger.debug(
                f"[{ctx.name}] latent k={instance.k} score_in_distance={instance.include_score}: "
                f"{assignment.fallback_count} fallback(s), variant={assignment.variant}"
            )
            ctx.latents[key] = assignment
            return assignment

    # ------------------------------------------------------------------
    # Steps
    # ------------------------------------------------------------------

    def balance(
        self,
        cohort: Cohort,
        scores: np.ndarray,
        latent: Optional[np.ndarray],
        instance: GridInstance,
    ) -> WeightedCohort:
        """Apply the instance's balancing method; ``latent`` is None for X-only."""
        method = instance.method
        if method == "matching":
            weighted = balancing.prognostic_match(cohort, scores, int(instance.param_value))
            if latent is not None:
                weighted = balancing.scalar_reweight(weighted, latent)
        elif method == "entropy":
            target = balancing.build_target(cohort, scores, latent, moments=int(instance.param_value))
            weighted = balancing.entropy_balance(cohort, target, moments=int(instance.param_value))
        elif method == "iptw":
            target = balancing.build_target(cohort, scores, latent, moments=1)
            weighted = balancing.iptw_weights(cohort, target, clip=float(instance.param_value))
        else:
            raise ValueError(f"Unknown balancing method: {method}")

        smd_target = balancing.build_target(cohort, scores, latent, moments=1)
        return balancing.with_smd(weighted, smd_target, cohort)

    def fit_hr(self, weighted: WeightedCohort, scores: np.ndarray) -> HREstimate:
        """Weighted Cox on treatment + X (+ s when configured)."""
        cohort = weighted.cohort
        covariates = cohort.covariates
        names = list(cohort.feature_names)
        if self.run_config.include_score_in_cox:
            covariates = np.column_stack([covariates, np.asarray(scores)[weighted.source_index]])
            names.append("score")

        solver = self.config.solvers.cox
        return cox_fit(
            covariates,
            cohort.treatment,
            cohort.times,
            cohort.events,
            weights=weighted.weights,
            column_names=names,
            max_iter=solver.max_iter,
            grad_tol=solver.grad_tol,
            ridge=solver.ridge,
            max_halvings=solver.max_halvings,
        )

    def run_single(self, ctx: DatasetContext, instance: GridInstance, variant: str) -> RunResult:
        """
        Execute one configuration.

        X-only results are shared across instances with the same baseline
        key when pipeline.cache_baseline_runs is enabled.
        """
        if variant not in ("x-only", "x-plus-u"):
            raise ValueError(f"Unknown variant: {variant}")

        cache = self.config.pipeline.cache_baseline_runs and variant == "x-only"
        if cache:
            with ctx.lock:
                if instance.baseline_key in ctx.baseline:
                    return ctx.baseline[instance.baseline_key]

        scores = self.scores(ctx, instance.score_source).scores
        latent = self.latent(ctx, instance) if variant == "x-plus-u" else None
        weighted = self.balance(ctx.cohort, scores, latent.normalized_u if latent else None, instance)
        estimate = self.fit_hr(weighted, scores)
        result = RunResult(estimate=estimate, weighted=weighted, latent=latent)

        if cache:
            with ctx.lock:
                ctx.baseline.setdefault(instance.baseline_key, result)
        return result
