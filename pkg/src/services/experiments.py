"""
Grid runner.

Runs every configuration of the grid under both variants (X-only and X+Ũ)
and turns the paired results into the analysis of the configured
experiment: benchmark distance, RCT equivalence, cross-center HR
dispersion, cross-center survival gaps, or a synthetic seed sweep. The
permutation/ablation suite reruns the same analysis once per mode.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from functools import partial
from itertools import combinations
from typing import Any, Callable, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.cohort import Cohort
from ..models.latent import ScoreAssignment
from ..models.run_config import ABLATION_VARIANTS, PERMUTATION_MODES, VARIANTS, GridInstance, RunConfig
from ..models.synthetic import SynthCohort
from ..models.validation import GapRecord, PairedDelta, PairSurvival, RunRow, TestResult, ValidationReport
from ..utils.config import get_config
from ..utils.exceptions import (
    BaseAppException,
    ConfigurationError,
    GroupTooSmallError,
    NoEligiblePairsError,
    ZeroInformativeError,
)
from ..utils.logger import get_error_logger, get_pipeline_logger
from . import inference_stats as st
from .balancing import smd
from .latent_factor import hidden_factor_diagnostics
from .pipeline import DatasetContext, PipelineService
from .survival_core import km_fit, survival_at
from .synthetic import generate

# Failures of a single configuration; anything else aborts the run
RECOVERABLE = (BaseAppException, ValueError, np.linalg.LinAlgError)

DatasetInput = Union[Cohort, SynthCohort]
Paired = Dict[str, Dict[str, RunRow]]
CenterMap = Dict[str, Tuple[np.ndarray, DatasetContext]]

SMD_BALANCE_THRESHOLD = 0.1


def _complete(instances: Sequence[GridInstance], paired: Paired) -> Iterator[Tuple[GridInstance, RunRow, RunRow]]:
    """Configurations where both variants produced a row."""
    for inst in instances:
        rows = paired.get(inst.config_id, {})
        if len(rows) == 2:
            yield inst, rows["x-only"], rows["x-plus-u"]


def _slice_scores(assignment: ScoreAssignment, idx: np.ndarray) -> ScoreAssignment:
    return replace(
        assignment,
        scores=assignment.scores[idx],
        fold_of=None if assignment.fold_of is None else assignment.fold_of[idx],
        labels=None if assignment.labels is None else assignment.labels[idx],
    )


def _fmean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


class ExperimentRunner:
    """
    Executes one RunConfig over a set of datasets.

    Per-configuration failures are recorded on the report and never abort
    the grid. Results are assembled in grid order whatever the worker
    count, so repeated runs serialize identically.
    """

    def __init__(self, run_config: RunConfig):
        self.config = get_config()
        self.run_config = run_config
        self.pipeline = PipelineService(run_config)
        self.logger = get_pipeline_logger()
        self.error_logger = get_error_logger()
        self.max_workers = max(1, self.config.pipeline.max_workers)

    def new_report(self, experiment: Optional[str] = None) -> ValidationReport:
        return ValidationReport(
            experiment=experiment or self.run_config.experiment,
            config_hash=self.run_config.config_hash(),
            seed=self.run_config.seed,
        )

    # ------------------------------------------------------------------
    # Entry points
    # ------------------------------------------------------------------

    def run(self, datasets: Optional[Mapping[str, DatasetInput]] = None) -> ValidationReport:
        """Run the configured experiment and return the assembled report."""
        rc = self.run_config
        self.logger.info("=" * 60)
        self.logger.info(f"Starting {rc.experiment} grid ({len(rc.grid_instances())} configurations)")
        self.logger.info("=" * 60)

        report = self.new_report()
        contexts, benchmarks, analysis = self.materialize(datasets or {}, report)
        self.analyse(analysis, contexts, report, benchmarks)
        if rc.experiment == "synthetic":
            self._synthetic_sections(contexts, report)
        self.plot_data(report)
        report.finalize()

        self.logger.info(f"Grid finished: {len(report.rows)} row(s), {report.failed_count} failure(s)")
        return report

    def materialize(
        self, datasets: Mapping[str, DatasetInput], report: ValidationReport
    ) -> Tuple[List[DatasetContext], Dict[str, float], str]:
        """
        Resolve the datasets to analyse.

        Returns prepared contexts, the benchmark log-HR per dataset and the
        analysis to run on them. Synthetic sweeps generate one cohort per
        seed and benchmark against the generator's theta.
        """
        rc = self.run_config
        if rc.experiment == "synthetic":
            if datasets:
                self.logger.warning("Synthetic experiment ignores the supplied input datasets")
            sweep = rc.synthetic
            generated: Dict[str, SynthCohort] = {}
            for seed in sweep.seeds:
                name = f"seed-{seed}"
                try:
                    generated[name] = generate(sweep.base.model_copy(update={"seed": seed}))
                except RECOVERABLE as e:
                    self._record(report, name, "*", "*", e)
            benchmarks = {name: synth.theta for name, synth in generated.items()}
            return self.contexts(generated, report), benchmarks, sweep.analysis

        if not datasets:
            raise ConfigurationError("No input datasets given", details={"experiment": rc.experiment})

        benchmarks: Dict[str, float] = {}
        if rc.experiment == "benchmark":
            missing = [name for name in datasets if rc.benchmark_for(name) is None]
            if missing:
                raise ConfigurationError("Missing benchmark log-HR for dataset(s)", details={"datasets": missing})
            benchmarks = {name: rc.benchmark_for(name) for name in datasets}
        return self.contexts(datasets, report), benchmarks, rc.experiment

    def contexts(self, datasets: Mapping[str, DatasetInput], report: ValidationReport) -> List[DatasetContext]:
        out = []
        for name, data in datasets.items():
            cohort, hidden = (data.cohort, data.hidden_v) if isinstance(data, SynthCohort) else (data, None)
            try:
                out.append(self.pipeline.prepare(name, cohort, hidden))
            except RECOVERABLE as e:
                self._record(report, name, "*", "*", e)
        return out

    def analyse(self, analysis: str, contexts: List[DatasetContext], report: ValidationReport,
                benchmarks: Mapping[str, float]) -> None:
        if analysis == "benchmark":
            self._benchmark(contexts, report, benchmarks)
        elif analysis == "rct-equivalence":
            self._rct(contexts, report)
        elif analysis == "cross-center-hr":
            self._cross_center_hr(contexts, report)
        elif analysis == "cross-center-survival":
            self._cross_center_survival(contexts, report)
        else:
            raise ConfigurationError(f"Unknown analysis: {analysis}")

    # ------------------------------------------------------------------
    # Execution
    # ------------------------------------------------------------------

    def _record(self, report: ValidationReport, dataset: str, config_id: str, variant: str,
                error: Exception, group: Optional[str] = None) -> None:
        report.add_failure(dataset, config_id, variant, error, group=group)
        where = f"{dataset}/{group}" if group else dataset
        self.error_logger.error(
            f"[{where}] {config_id} ({variant}) failed: {error}",
            extra={"details": getattr(error, "details", None)},
        )

    def _execute(
        self,
        ctx: DatasetContext,
        instances: Sequence[GridInstance],
        report: ValidationReport,
        runner: Callable[[GridInstance, str], Any],
        group: Optional[str] = None,
    ) -> Dict[str, Dict[str, Any]]:
        """Run every (instance, variant); failures are recorded in task order."""
        tasks = [(inst, variant) for inst in instances for variant in VARIANTS]

        def attempt(task):
            inst, variant = task
            try:
                return runner(inst, variant)
            except RECOVERABLE as e:
                return e

        if self.max_workers > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                outcomes = list(pool.map(attempt, tasks))
        else:
            outcomes = [attempt(task) for task in tasks]

        results: Dict[str, Dict[str, Any]] = {}
        for (inst, variant), outcome in zip(tasks, outcomes):
            if isinstance(outcome, Exception):
                self._record(report, ctx.name, inst.config_id, variant, outcome, group)
            else:
                results.setdefault(inst.config_id, {})[variant] = outcome
        return results

    def _paired_hr(self, ctx: DatasetContext, report: ValidationReport, group: Optional[str] = None,
                   benchmark: Optional[float] = None) -> Tuple[List[GridInstance], Paired]:
        """Both variants of every configuration as report rows."""
        instances = self.run_config.grid_instances()
        results = self._execute(
            ctx, instances, report, lambda inst, variant: self.pipeline.run_single(ctx, inst, variant), group
        )

        paired: Paired = {}
        for inst in instances:
            for variant in VARIANTS:
                result = results.get(inst.config_id, {}).get(variant)
                if result is None:
                    continue
                estimate = result.estimate
                row = RunRow(
                    dataset=ctx.name,
                    method=inst.method,
                    config_id=inst.config_id,
                    variant=variant,
                    log_hr=estimate.log_hr,
                    se=estimate.se,
                    axes=inst.axis_values(),
                    benchmark_error=None if benchmark is None else abs(estimate.log_hr - benchmark),
                    group=group,
                    diagnostics=result.diagnostics(),
                )
                report.add_row(row)
                paired.setdefault(inst.config_id, {})[variant] = row
                table_key = "|".join([ctx.name, group or "", inst.config_id, variant])
                report.smd_tables[table_key] = [r.to_dict() for r in result.weighted.smd_table]
        return instances, paired

    # ------------------------------------------------------------------
    # Aggregation helpers
    # ------------------------------------------------------------------

    @staticmethod
    def _failed_configs(report: ValidationReport, dataset: str, method: str) -> int:
        return len({
            f.config_id for f in report.failures
            if f.dataset == dataset and f.config_id.split("|")[0] == method
        })

    def _summarize(self, report: ValidationReport, values: Dict[Tuple[str, str], PairedDelta], metric: str,
                   keep_deltas: bool = True, config_tests: bool = False) -> None:
        for (dataset, method), cell in values.items():
            if not cell.deltas:
                continue
            if keep_deltas:
                report.deltas.append(cell)
            report.cells.append(
                st.cell_summary(cell.deltas, dataset, method, metric,
                                n_failures=self._failed_configs(report, dataset, method))
            )
            if config_tests:
                self._paired_tests(report, cell.deltas, f"cell:{dataset}|{method}", metric, wilcoxon=False)

    def _paired_tests(self, report: ValidationReport, values: Sequence[float], scope: str, metric: str,
                      wilcoxon: bool = True) -> None:
        if not values:
            return
        try:
            p, successes, n = st.sign_test_deltas(values)
            report.tests.append(TestResult(
                "sign", p, n, statistic=float(successes), scope=scope,
                details={"metric": metric, "observations": len(values)},
            ))
            if wilcoxon:
                report.tests.append(TestResult(
                    "wilcoxon", st.wilcoxon_signed_rank(values), n, scope=scope, details={"metric": metric},
                ))
        except ZeroInformativeError as e:
            self.logger.warning(f"Paired tests skipped ({scope}): {e}")

    def _cell_tests(self, report: ValidationReport, metric: str) -> None:
        """Sign and Wilcoxon over cell means, overall and per method."""
        cells = [c for c in report.cells if c.metric == metric]
        self._paired_tests(report, [c.mean for c in cells], "overall", metric)
        for method in self.run_config.methods:
            self._paired_tests(report, [c.mean for c in cells if c.method == method], f"method:{method}", metric)

    # ------------------------------------------------------------------
    # Analyses
    # ------------------------------------------------------------------

    def _benchmark(self, contexts: List[DatasetContext], report: ValidationReport,
                   benchmarks: Mapping[str, float]) -> None:
        deltas: Dict[Tuple[str, str], PairedDelta] = {}
        for ctx in contexts:
            bench = benchmarks[ctx.name]
            instances, paired = self._paired_hr(ctx, report, benchmark=bench)
            for inst, base, aug in _complete(instances, paired):
                key = (ctx.name, inst.method)
                deltas.setdefault(key, PairedDelta(*key)).add(
                    inst.config_id, st.benchmark_delta(base.log_hr, aug.log_hr, bench)
                )
        report.sections["benchmarks"] = {name: benchmarks[name] for name in sorted(benchmarks)}
        self._summarize(report, deltas, "delta", config_tests=True)
        self._cell_tests(report, "delta")

    def _rct(self, contexts: List[DatasetContext], report: ValidationReport) -> None:
        shifts: Dict[Tuple[str, str], PairedDelta] = {}
        abs_shifts: Dict[Tuple[str, str], PairedDelta] = {}
        for ctx in contexts:
            instances, paired = self._paired_hr(ctx, report)
            for inst, base, aug in _complete(instances, paired):
                key = (ctx.name, inst.method)
                shift = aug.log_hr - base.log_hr
                shifts.setdefault(key, PairedDelta(*key)).add(inst.config_id, shift)
                abs_shifts.setdefault(key, PairedDelta(*key)).add(inst.config_id, abs(shift))
            self._latent_balance(ctx, report)

        self._summarize(report, shifts, "shift")
        self._summarize(report, abs_shifts, "abs_shift", keep_deltas=False)

        margin = self.run_config.margin
        for cell in [c for c in report.cells if c.metric == "shift"]:
            verdict = st.tost_equivalence(cell.mean, cell.se, margin)
            report.tost.append({"dataset": cell.dataset, "method": cell.method, "n": cell.n, **verdict.to_dict()})
        report.sections["equivalence"] = {
            "margin": margin,
            "cells": len(report.tost),
            "equivalent": sum(1 for item in report.tost if item["equivalent"]),
        }

    def _latent_balance(self, ctx: DatasetContext, report: ValidationReport) -> None:
        """SMD of Ũ across arms for every latent assignment of the dataset."""
        entries = report.sections.setdefault("latent_smd", [])
        for key in sorted(ctx.latents, key=lambda k: (k[0], k[1], str(k[2]))):
            value = smd(ctx.latents[key].normalized_u, ctx.cohort.treatment)
            entries.append({
                "dataset": ctx.name,
                "k": key[0],
                "include_score": key[1],
                "score_source": key[2],
                "smd": value,
                "balanced": abs(value) < SMD_BALANCE_THRESHOLD,
            })

    def _center_contexts(self, ctx: DatasetContext, report: ValidationReport) -> CenterMap:
        """
        One context per center holding that center's patients.

        Scores come from the full cohort and are sliced per center; the
        latent factor is computed within each center.
        """
        labels = ctx.cohort.center_labels()
        if len(labels) < 2:
            raise GroupTooSmallError(
                f"Dataset {ctx.name} needs at least two centers", details={"centers": labels}
            )
        scores = {source: self.pipeline.scores(ctx, source) for source in self.run_config.score_sources}
        centers = np.array([c or "" for c in ctx.cohort.centers], dtype=object)

        out: CenterMap = {}
        for label in labels:
            idx = np.flatnonzero(centers == label)
            sub = ctx.cohort.subset(idx)
            try:
                sub.require_two_arms()
            except RECOVERABLE as e:
                self._record(report, ctx.name, "*", "*", e, group=label)
                continue
            out[label] = (idx, DatasetContext(
                name=ctx.name,
                cohort=sub,
                hidden_v=None if ctx.hidden_v is None else ctx.hidden_v[idx],
                scores={source: _slice_scores(a, idx) for source, a in scores.items()},
            ))
        return out

    def _cross_center_hr(self, contexts: List[DatasetContext], report: ValidationReport) -> None:
        reductions: Dict[Tuple[str, str], PairedDelta] = {}
        base_dispersion: Dict[Tuple[str, str], PairedDelta] = {}
        aug_dispersion: Dict[Tuple[str, str], PairedDelta] = {}

        for ctx in contexts:
            try:
                centers = self._center_contexts(ctx, report)
            except RECOVERABLE as e:
                self._record(report, ctx.name, "*", "*", e)
                continue

            per_center = {label: self._paired_hr(cctx, report, group=label)[1] for label, (_, cctx) in centers.items()}
            for inst in self.run_config.grid_instances():
                base, aug = [], []
                for paired in per_center.values():
                    rows = paired.get(inst.config_id, {})
                    if len(rows) == 2:
                        base.append(rows["x-only"].log_hr)
                        aug.append(rows["x-plus-u"].log_hr)
                if len(base) < 2:
                    self.logger.debug(f"[{ctx.name}] {inst.config_id}: fewer than two centers, no dispersion")
                    continue
                d_base, d_aug = st.pairwise_dispersion(base), st.pairwise_dispersion(aug)
                key = (ctx.name, inst.method)
                reductions.setdefault(key, PairedDelta(*key)).add(inst.config_id, d_base - d_aug)
                base_dispersion.setdefault(key, PairedDelta(*key)).add(inst.config_id, d_base)
                aug_dispersion.setdefault(key, PairedDelta(*key)).add(inst.config_id, d_aug)

        self._summarize(report, reductions, "dispersion_reduction", config_tests=True)
        self._summarize(report, base_dispersion, "dispersion_x_only", keep_deltas=False)
        self._summarize(report, aug_dispersion, "dispersion_x_plus_u", keep_deltas=False)
        self._cell_tests(report, "dispersion_reduction")

    def _center_latent(self, centers: CenterMap, n: int, instance: GridInstance) -> np.ndarray:
        u = np.zeros(n)
        for idx, cctx in centers.values():
            u[idx] = self.pipeline.latent(cctx, instance).normalized_u
        return u

    def _pair_survival(self, ctx: DatasetContext, centers: CenterMap, x: str, y: str,
                       instance: GridInstance, variant: str) -> Dict[str, float]:
        """
        Landmark survival of both centers after balancing x toward y.

        Center y takes the treated role, so X+Ũ matching also applies the
        scalar weight to y's no-event patients, as in the treatment analysis.
        """
        idx_x, idx_y = centers[x][0], centers[y][0]
        idx = np.concatenate([idx_x, idx_y])
        indicator = np.concatenate([np.zeros(len(idx_x), dtype=int), np.ones(len(idx_y), dtype=int)])
        pair = ctx.cohort.subset(idx).with_treatment(indicator)

        scores = self.pipeline.scores(ctx, instance.score_source).scores[idx]
        latent = None
        if variant == "x-plus-u":
            latent = self._center_latent(centers, len(ctx.cohort), instance)[idx]
        weighted = self.pipeline.balance(pair, scores, latent, instance)

        out = {}
        for label, g in ((x, 0), (y, 1)):
            mask = weighted.cohort.treatment == g
            curve = km_fit(weighted.cohort.times[mask], weighted.cohort.events[mask], weighted.weights[mask])
            out[label] = survival_at(curve, self.run_config.landmark)
        return out

    def _cross_center_survival(self, contexts: List[DatasetContext], report: ValidationReport) -> None:
        landmark = self.run_config.landmark
        records: Dict[str, List[GapRecord]] = {}
        reductions: Dict[Tuple[str, str], PairedDelta] = {}

        for ctx in contexts:
            try:
                centers = self._center_contexts(ctx, report)
            except RECOVERABLE as e:
                self._record(report, ctx.name, "*", "*", e)
                continue

            crude = {
                label: survival_at(km_fit(ctx.cohort.times[idx], ctx.cohort.events[idx]), landmark)
                for label, (idx, _) in centers.items()
            }
            instances = self.run_config.grid_instances()
            for x, y in combinations(list(centers), 2):
                # x is the lower-crude-survival center; balancing moves it toward y
                if crude[x] > crude[y]:
                    x, y = y, x
                group = f"{x}~{y}"
                results = self._execute(ctx, instances, report, partial(self._pair_survival, ctx, centers, x, y), group)

                complete: Dict[str, List[Dict[str, Dict[str, float]]]] = {}
                for inst in instances:
                    outcome = results.get(inst.config_id, {})
                    for variant in VARIANTS:
                        if variant not in outcome:
                            continue
                        report.add_row(RunRow(
                            dataset=ctx.name,
                            method=inst.method,
                            config_id=inst.config_id,
                            variant=variant,
                            log_hr=None,
                            se=None,
                            axes=inst.axis_values(),
                            group=group,
                            diagnostics={
                                "center_x": x,
                                "center_y": y,
                                "raw_x": crude[x],
                                "raw_y": crude[y],
                                "surv_x": outcome[variant][x],
                                "surv_y": outcome[variant][y],
                            },
                        ))
                    if len(outcome) == 2:
                        complete.setdefault(inst.method, []).append(outcome)

                for method, outcomes in complete.items():
                    record = st.gap_record(PairSurvival(
                        center_x=x,
                        center_y=y,
                        raw_x=crude[x],
                        raw_y=crude[y],
                        base_x=_fmean([o["x-only"][x] for o in outcomes]),
                        base_y=_fmean([o["x-only"][y] for o in outcomes]),
                        aug_x=_fmean([o["x-plus-u"][x] for o in outcomes]),
                        aug_y=_fmean([o["x-plus-u"][y] for o in outcomes]),
                    ))
                    records.setdefault(method, []).append(record)
                    key = (ctx.name, method)
                    reductions.setdefault(key, PairedDelta(*key)).add(group, record.d_base - record.d_aug)

        self._summarize(report, reductions, "gap_reduction")

        scopes = [("overall", [r for m in self.run_config.methods for r in records.get(m, [])])]
        scopes += [(f"method:{m}", records.get(m, [])) for m in self.run_config.methods]
        for scope, recs in scopes:
            if not recs:
                continue
            try:
                summary = st.summarize_gaps(recs)
            except NoEligiblePairsError as e:
                self.logger.warning(f"Survival-gap test skipped ({scope}): {e}")
                report.sections.setdefault("gap_skipped", []).append({"scope": scope, "pairs": len(recs)})
                continue
            report.gaps[scope] = summary
            report.tests.append(TestResult(
                "binomial", summary.p_value, summary.retained, statistic=float(summary.fixed), scope=scope,
                details={"metric": "survival_gap", "pairs": len(recs)},
            ))

    def _synthetic_sections(self, contexts: List[DatasetContext], report: ValidationReport) -> None:
        sweep = self.run_config.synthetic
        report.sections["synthetic"] = {
            "analysis": sweep.analysis,
            "seeds": list(sweep.seeds),
            "theta": sweep.base.theta,
            "n": sweep.base.n,
        }
        hidden = report.sections.setdefault("hidden_factor", [])
        for ctx in contexts:
            if ctx.hidden_v is None:
                continue
            for key in sorted(ctx.latents, key=lambda k: (k[0], k[1], str(k[2]))):
                hidden.append({
                    "dataset": ctx.name,
                    "k": key[0],
                    "include_score": key[1],
                    **hidden_factor_diagnostics(ctx.cohort, ctx.latents[key], ctx.hidden_v),
                })

    # ------------------------------------------------------------------
    # Plot data
    # ------------------------------------------------------------------

    @staticmethod
    def _row_metric(row: RunRow) -> Tuple[str, Optional[float]]:
        if row.benchmark_error is not None:
            return "benchmark_error", row.benchmark_error
        return "log_hr", row.log_hr

    def plot_data(self, report: ValidationReport, by_mode: bool = False) -> None:
        """
        Mean ± SE of the row metric per (method, variant) and per grid-axis
        level, stored as report sections for the plotdata CSVs.
        """
        overall: Dict[tuple, List[float]] = {}
        by_axis: Dict[tuple, List[float]] = {}
        for row in report.rows:
            metric, value = self._row_metric(row)
            if value is None:
                continue
            mode = row.diagnostics.get("mode") if by_mode else None
            overall.setdefault((mode, row.method, row.variant, metric), []).append(value)
            for axis, level in row.axes.items():
                by_axis.setdefault((mode, axis, level, row.method, row.variant, metric), []).append(value)

        def entry(values, **keys):
            mean, se = st.mean_and_se(values)
            if not by_mode:
                keys.pop("mode")
            return {**keys, "n": len(values), "mean": mean, "se": se}

        report.sections["plot_method_variant"] = [
            entry(v, mode=mode, method=method, variant=variant, metric=metric)
            for (mode, method, variant, metric), v in overall.items()
        ]
        report.sections["plot_sensitivity"] = [
            entry(v, mode=mode, axis=axis, value=level, method=method, variant=variant, metric=metric)
            for (mode, axis, level, method, variant, metric), v in by_axis.items()
        ]


def run_grid(datasets: Optional[Mapping[str, DatasetInput]], run_config: RunConfig) -> ValidationReport:
    """Run the configured grid experiment."""
    return ExperimentRunner(run_config).run(datasets)


def run_diagnostics(datasets: Optional[Mapping[str, DatasetInput]], run_config: RunConfig) -> ValidationReport:
    """
    Permutation and ablation suite.

    The analysis runs once unpermuted and once per permutation mode and
    ablation variant on the same cohorts and scores. Each mode is
    summarised by its mean paired improvement, and degradation relative
    to the unpermuted run is tested with an exact binomial test over
    (dataset, method) cells.
    """
    plain = run_config.model_copy(update={"permutation": None, "ablation": None})
    base_runner = ExperimentRunner(plain)
    logger = base_runner.logger

    report = base_runner.new_report("diagnostics")
    contexts, benchmarks, analysis = base_runner.materialize(datasets or {}, report)

    modes: List[Tuple[str, Dict[str, Any]]] = [("unpermuted", {})]
    modes += [(m, {"permutation": m}) for m in PERMUTATION_MODES]
    modes += [(a, {"ablation": a}) for a in ABLATION_VARIANTS]

    reference: Optional[Dict[Tuple[str, str], float]] = None
    summaries = []
    for mode, update in modes:
        logger.info(f"Diagnostics mode: {mode}")
        runner = ExperimentRunner(plain.model_copy(update=update))
        sub = runner.new_report(analysis)
        runner.analyse(analysis, [ctx.fresh() for ctx in contexts], sub, benchmarks)

        for row in sub.rows:
            row.diagnostics["mode"] = mode
            report.add_row(row)
        for failure in sub.failures:
            failure.details = {**(failure.details or {}), "mode": mode}
            report.failures.append(failure)
        report.cells.extend(replace(c, metric=f"{c.metric}@{mode}") for c in sub.cells)
        report.tests.extend(replace(t, scope=f"{mode}/{t.scope}") for t in sub.tests)

        means = {(d.dataset, d.method): d.mean for d in sub.deltas}
        summary: Dict[str, Any] = {
            "mode": mode,
            "cells": len(means),
            "mean_improvement": _fmean(list(means.values())) if means else None,
            "per_method": {
                m: _fmean(vals) for m in plain.methods
                if (vals := [v for (_, method), v in means.items() if method == m])
            },
        }

        if reference is None:
            reference = means
        else:
            for scope, method in [("overall", None)] + [(f"method:{m}", m) for m in plain.methods]:
                shared = [k for k in means if k in reference and (method is None or k[1] == method)]
                if not shared:
                    continue
                degraded = sum(1 for k in shared if means[k] < reference[k])
                if scope == "overall":
                    summary.update(cells_compared=len(shared), cells_degraded=degraded)
                report.tests.append(TestResult(
                    "degradation", st.binomial_test(degraded, len(shared)), len(shared),
                    statistic=float(degraded), scope=f"mode:{mode}/{scope}", details={"metric": "paired_mean"},
                ))
        summaries.append(summary)

    report.sections["diagnostics"] = summaries
    base_runner.plot_data(report, by_mode=True)
    report.finalize()
    return report
