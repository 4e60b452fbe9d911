"""Command-line interface for estimation runs, grids and validation experiments."""

import json
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import click

from . import __version__
from .models.cohort import Cohort
from .models.run_config import (
    ABLATION_VARIANTS,
    PERMUTATION_MODES,
    VARIANTS,
    ColumnSchema,
    RunConfig,
)
from .models.synthetic import SynthConfig
from .models.validation import ValidationReport
from .services.balancing import export_smd, export_weights
from .services.cohort_loader import load_cohort
from .services.experiments import run_diagnostics, run_grid
from .services.latent_factor import export_latent
from .services.pipeline import PipelineService
from .services.prognostic import export_scores
from .services.report_writer import emit_report
from .services.synthetic import export_synth, generate
from .utils.config import get_config
from .utils.exceptions import BaseAppException, ConfigurationError


def _fail(error: BaseAppException) -> None:
    click.echo(click.style(f"✗ {type(error).__name__}: {error.message}", fg="red"), err=True)
    sys.exit(error.exit_code)


def _run_config(config_path: Optional[str], **overrides) -> RunConfig:
    if config_path:
        return RunConfig.from_file(config_path, **overrides)
    return RunConfig.build({}, **overrides)


def _schema(schema_path: Optional[str], run_config: RunConfig) -> ColumnSchema:
    return ColumnSchema.from_file(schema_path) if schema_path else run_config.schema_mapping


def _load_datasets(paths: Sequence[str], schema: ColumnSchema) -> Dict[str, Cohort]:
    """Dataset name = file stem, suffixed on collision."""
    datasets: Dict[str, Cohort] = {}
    for path in paths:
        name = base = Path(path).stem
        suffix = 2
        while name in datasets:
            name = f"{base}-{suffix}"
            suffix += 1
        datasets[name] = load_cohort(path, schema)
    return datasets


def _show_report(report: ValidationReport, out: Optional[str]) -> None:
    click.echo()
    click.echo("─" * 60)
    if report.failed_count:
        click.echo(click.style(f"⚠ Finished with {report.failed_count} failed run(s)", fg="yellow", bold=True))
    else:
        click.echo(click.style("✓ Finished", fg="green", bold=True))
    click.echo()
    click.echo(report.get_summary())
    if out:
        click.echo()
        click.echo(f"Report written to {out}")
    click.echo("─" * 60)


def _grid_command(
    experiment: Optional[str],
    inputs: Sequence[str],
    schema_path: Optional[str],
    config_path: Optional[str],
    out: str,
    diagnostics: bool = False,
    **overrides,
) -> None:
    """Shared body of the grid-style commands."""
    try:
        run_config = _run_config(config_path, experiment=experiment, inputs=list(inputs) or None, **overrides)
        paths = list(inputs) or run_config.inputs
        if run_config.experiment != "synthetic" and not paths:
            raise ConfigurationError("At least one --input is required", details={"experiment": run_config.experiment})

        datasets = _load_datasets(paths, _schema(schema_path, run_config)) if run_config.experiment != "synthetic" else {}
        label = "diagnostics suite" if diagnostics else f"{run_config.experiment} grid"
        click.echo(f"Running {label}: {len(datasets) or 'synthetic'} dataset(s), "
                   f"{len(run_config.grid_instances())} configuration(s) x {len(VARIANTS)} variants")

        report = run_diagnostics(datasets, run_config) if diagnostics else run_grid(datasets, run_config)
        emit_report(report, out)
        _show_report(report, out)
    except BaseAppException as e:
        _fail(e)


def _benchmark_value(raw: Optional[str]):
    """Number, or JSON mapping of dataset name to log-HR."""
    if raw is None:
        return None
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        raise click.BadParameter("expected a number or a JSON object", param_hint="--benchmark-loghr")
    if not isinstance(value, dict):
        raise click.BadParameter("expected a number or a JSON object", param_hint="--benchmark-loghr")
    return value


# ----------------------------------------------------------------------
# Shared options
# ----------------------------------------------------------------------

def input_options(func):
    func = click.option("--schema", "schema_path", type=click.Path(exists=True, dir_okay=False),
                        help="Column mapping file (JSON or YAML)")(func)
    func = click.option("--input", "inputs", multiple=True, type=click.Path(exists=True, dir_okay=False),
                        help="Cohort CSV (repeatable)")(func)
    return func


def run_options(func):
    func = click.option("--ablation", type=click.Choice(ABLATION_VARIANTS), default=None,
                        help="Replace Ũ by an ablation variant")(func)
    func = click.option("--permute", "permutation", type=click.Choice(PERMUTATION_MODES), default=None,
                        help="Permute the latent factor")(func)
    func = click.option("--tau", type=float, default=None, help="RMST horizon")(func)
    func = click.option("--seed", type=int, default=None, help="Random seed")(func)
    func = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                        help="Run configuration JSON")(func)
    return func


@click.group()
@click.version_option(version=__version__)
def cli():
    """
    Latent-factor augmented treatment-effect estimation.

    Estimate hazard ratios from observational survival cohorts, run
    hyperparameter grids and the validation experiments.
    """
    pass


@cli.command()
@input_options
@run_options
@click.option("--method", type=click.Choice(["matching", "entropy", "iptw"]), default="entropy",
              show_default=True, help="Balancing method")
@click.option("--variant", type=click.Choice(VARIANTS), default="x-plus-u", show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for estimate.json and the weight, SMD, score and latent CSVs")
def estimate(inputs, schema_path, config_path, seed, tau, permutation, ablation, method, variant, out):
    """
    Estimate the treatment hazard ratio for one cohort.

    Uses the first value of each grid axis in the run configuration.
    """
    try:
        if len(inputs) != 1:
            raise ConfigurationError("estimate needs exactly one --input")
        run_config = _run_config(config_path, seed=seed, tau=tau, permutation=permutation, ablation=ablation)
        cohort = load_cohort(inputs[0], _schema(schema_path, run_config))

        service = PipelineService(run_config)
        ctx = service.prepare(Path(inputs[0]).stem, cohort)
        instance = run_config.default_instance(method)
        result = service.run_single(ctx, instance, variant)
        est = result.estimate

        low, high = est.ci95
        click.echo(f"Configuration:  {instance.config_id} [{variant}]")
        click.echo(f"log HR:         {est.log_hr:+.4f} (SE {est.se:.4f})")
        click.echo(f"HR:             {est.hr:.4f}  95% CI [{low:.4f}, {high:.4f}]")
        for key, value in result.diagnostics().items():
            click.echo(f"  {key}: {value}")
        if not est.converged:
            click.echo(click.style("⚠ Cox solver did not fully converge", fg="yellow"))

        if out:
            out_dir = Path(out)
            out_dir.mkdir(parents=True, exist_ok=True)
            payload = {
                "config_id": instance.config_id,
                "variant": variant,
                "estimate": est.to_dict(),
                "diagnostics": result.diagnostics(),
            }
            (out_dir / "estimate.json").write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
            export_weights(result.weighted, out_dir / "weights.csv")
            export_smd(result.weighted.smd_table, out_dir / "smd.csv")
            export_scores(ctx.cohort, service.scores(ctx, instance.score_source), out_dir / "scores.csv")
            if result.latent is not None:
                export_latent(ctx.cohort, result.latent, out_dir / "latent.csv")
            click.echo(f"Outputs written to {out_dir}")
    except BaseAppException as e:
        _fail(e)
    except OSError as e:
        click.echo(click.style(f"✗ Cannot write outputs: {e}", fg="red"), err=True)
        sys.exit(3)


@cli.command()
@input_options
@run_options
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Report directory")
@click.option("--experiment",
              type=click.Choice(["benchmark", "rct-equivalence", "cross-center-hr", "cross-center-survival", "synthetic"]),
              default=None, help="Experiment type (overrides the config file)")
@click.option("--benchmark-loghr", default=None, help="Benchmark log-HR: a number or a JSON object per dataset")
@click.option("--margin", type=float, default=None, help="Equivalence margin on the log-HR scale")
def grid(inputs, schema_path, config_path, seed, tau, permutation, ablation, out, experiment,
         benchmark_loghr, margin):
    """Run the full hyperparameter grid for the configured experiment."""
    _grid_command(experiment, inputs, schema_path, config_path, out, seed=seed, tau=tau,
                  permutation=permutation, ablation=ablation, margin=margin,
                  benchmark_loghr=_benchmark_value(benchmark_loghr))


@cli.command("validate-rct")
@input_options
@run_options
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Report directory")
@click.option("--margin", type=float, default=None, help="Equivalence margin on the log-HR scale")
def validate_rct(inputs, schema_path, config_path, seed, tau, permutation, ablation, out, margin):
    """
    RCT equivalence: shift between variants and TOST per cell.

    Randomized cohorts should see no systematic shift from adding Ũ.
    """
    _grid_command("rct-equivalence", inputs, schema_path, config_path, out, seed=seed, tau=tau,
                  permutation=permutation, ablation=ablation, margin=margin)


@cli.command("cross-center")
@input_options
@run_options
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Report directory")
@click.option("--analysis", type=click.Choice(["hr", "survival"]), default="hr", show_default=True,
              help="Per-center HR dispersion or center-pair survival gaps")
@click.option("--landmark", type=float, default=None, help="Landmark time for survival gaps")
def cross_center(inputs, schema_path, config_path, seed, tau, permutation, ablation, out, analysis, landmark):
    """Cross-center consistency of multicenter cohorts."""
    experiment = "cross-center-hr" if analysis == "hr" else "cross-center-survival"
    _grid_command(experiment, inputs, schema_path, config_path, out, seed=seed, tau=tau,
                  permutation=permutation, ablation=ablation, landmark=landmark)


@cli.command()
@input_options
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Run configuration JSON")
@click.option("--seed", type=int, default=None, help="Random seed")
@click.option("--tau", type=float, default=None, help="RMST horizon")
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Report directory")
@click.option("--experiment",
              type=click.Choice(["benchmark", "rct-equivalence", "cross-center-hr", "cross-center-survival", "synthetic"]),
              default=None, help="Experiment type (overrides the config file)")
@click.option("--benchmark-loghr", default=None, help="Benchmark log-HR: a number or a JSON object per dataset")
def diagnostics(inputs, schema_path, config_path, seed, tau, out, experiment, benchmark_loghr):
    """Permutation and ablation suite against the unpermuted run."""
    _grid_command(experiment, inputs, schema_path, config_path, out, diagnostics=True, seed=seed, tau=tau,
                  benchmark_loghr=_benchmark_value(benchmark_loghr))


@cli.command()
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Cohort CSV to write")
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--d", type=int, default=3, show_default=True, help="Observed covariates")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--gamma-sel", type=float, default=1.0, show_default=True, help="Hidden factor effect on treatment")
@click.option("--gamma-out", type=float, default=1.0, show_default=True, help="Hidden factor effect on hazard")
@click.option("--theta", type=float, default=None, help="True treatment log-HR (default log 0.67)")
@click.option("--rct", is_flag=True, help="Randomize treatment")
@click.option("--centers", type=int, default=None, help="Number of centers")
@click.option("--no-external-score", is_flag=True, help="Omit the external score column")
def synth(out, n, d, seed, gamma_sel, gamma_out, theta, rct, centers, no_external_score):
    """Generate a synthetic cohort with a hidden confounder and a truth sidecar."""
    try:
        fields = dict(
            n=n, d=d, seed=seed, gamma_sel=gamma_sel, gamma_out=gamma_out,
            rct_mode=rct, centers=centers, emit_external_score=not no_external_score,
        )
        if theta is not None:
            fields["theta"] = theta
        try:
            config = SynthConfig(**fields)
        except ValueError as e:
            raise ConfigurationError(f"Invalid generator settings: {e}")

        synth_cohort = generate(config)
        csv_path, truth_path = export_synth(synth_cohort, out)
        cohort = synth_cohort.cohort
        click.echo(click.style("✓ Cohort generated", fg="green", bold=True))
        click.echo(f"Patients:       {len(cohort)} ({cohort.n_treated} treated)")
        click.echo(f"Events:         {int(cohort.events.sum())}")
        click.echo(f"True log HR:    {synth_cohort.theta:+.4f}")
        click.echo(f"Written:        {csv_path}, {truth_path}")
    except BaseAppException as e:
        _fail(e)
    except OSError as e:
        click.echo(click.style(f"✗ Cannot write cohort: {e}", fg="red"), err=True)
        sys.exit(3)


@cli.command("config-info")
def config_info():
    """Display current configuration settings."""
    try:
        config = get_config()

        click.echo("Configuration Settings:")
        click.echo("=" * 60)
        click.echo()

        click.echo("Environment:")
        click.echo(f"  Environment:     {config.env.environment}")
        click.echo(f"  Log level:       {config.logging.level}")
        click.echo(f"  Workers:         {config.pipeline.max_workers}")
        click.echo()

        analysis = config.analysis
        click.echo("Analysis:")
        click.echo(f"  tau:             {analysis.tau}")
        click.echo(f"  Pseudo scope:    {analysis.pseudo_scope}")
        click.echo(f"  Winsorization:   {analysis.winsor_quantile}")
        click.echo(f"  Landmark:        {analysis.landmark}")
        click.echo(f"  Score horizon:   {analysis.score_horizon} ({analysis.score_folds} folds)")
        click.echo()

        grids = config.grids
        click.echo("Grids:")
        click.echo(f"  k:               {grids.k}")
        click.echo(f"  Score in dist.:  {grids.include_score}")
        click.echo(f"  n_bins:          {grids.n_bins}")
        click.echo(f"  Moments:         {grids.moments}")
        click.echo(f"  Clip:            {grids.clip}")
        click.echo()

    except Exception as e:
        click.echo(click.style(f"✗ Error loading config: {str(e)}", fg="red"), err=True)
        sys.exit(1)


if __name__ == "__main__":
    cli()
