"""Command-line interface.

Every subcommand reads one JSON config (all defaults when omitted), applies
``--set section.key=value`` overrides and the ``--seed`` shortcut, then
writes its artifacts under a fresh run directory. Exit codes: 0 on success,
2 for configuration or input contract problems, 3 for numeric failures.
"""

from __future__ import annotations

import functools
import sys

import click

from . import pipeline
from .config import load_config
from .errors import ConfigError, ContractViolation, NumericFailure


def _common(fn):
    @click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")
    @click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the run seed.")
    @click.option(
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override one config entry, e.g. --set training.epochs=20 (repeatable).",
    )
    @functools.wraps(fn)
    def wrapper(config_path, seed, overrides, **kwargs):
        items = list(overrides)
        if seed is not None:
            items.append(f"seed={seed}")
        try:
            cfg = load_config(config_path, items)
            fn(cfg, **kwargs)
        except (ConfigError, ContractViolation) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except NumericFailure as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(3)

    return wrapper


@click.group()
def main():
    """Probabilistic forecasting on sensor graphs: a parameter-free
    graph-diffusion prior refined by a residual-aware denoising model."""


@main.command()
@_common
def train(cfg):
    """Train the denoiser and write a checkpoint plus a loss log."""
    run_dir = pipeline.cmd_train(cfg)
    click.echo(f"run dir: {run_dir}")
    click.echo(f"checkpoint: {run_dir / 'model.ckpt'}")


@main.command()
@click.option("--deterministic", is_flag=True, help="Noise-free reverse updates.")
@_common
def sample(cfg, deterministic):
    """Draw forecast ensembles from a trained checkpoint."""
    if deterministic:
        cfg.sampling.deterministic = True
    run_dir = pipeline.cmd_sample(cfg)
    click.echo(f"run dir: {run_dir}")
    with open(run_dir / "sampling_info.json") as fh:
        click.echo(fh.read().rstrip())


@main.command()
@click.option(
    "--baseline",
    type=click.Choice(["ode", "persistence"]),
    default=None,
    help="Score a training-free baseline instead of the model.",
)
@click.option("--deterministic", is_flag=True, help="Noise-free reverse updates.")
@click.option("--emit-plots", is_flag=True, help="Also write plot-ready per-horizon CSV.")
@_common
def evaluate(cfg, baseline, deterministic, emit_plots):
    """Score forecasts (MAE, RMSE, CRPS) on a held-out split."""
    if deterministic:
        cfg.sampling.deterministic = True
    run_dir, report = pipeline.cmd_evaluate(cfg, baseline=baseline, emit_plots=emit_plots)
    click.echo(f"run dir: {run_dir}")
    for line in report.to_csv().strip().splitlines()[1:]:
        metric, value = line.split(",", 1)
        click.echo(f"{metric}: {value}")


@main.command()
@_common
def schedule(cfg):
    """Tabulate accelerated starting steps over a (steps, beta_end) grid."""
    run_dir, table_csv = pipeline.cmd_schedule(cfg)
    click.echo(table_csv.rstrip())
    click.echo(f"run dir: {run_dir}")


@main.command()
@_common
def synth(cfg):
    """Generate the synthetic benchmark series and graph files."""
    run_dir = pipeline.cmd_synth(cfg)
    click.echo(f"run dir: {run_dir}")


@main.command("forecast-ode")
@_common
def forecast_ode(cfg):
    """Forecast with the training-free graph-diffusion prior alone."""
    run_dir = pipeline.cmd_forecast_ode(cfg)
    click.echo(f"run dir: {run_dir}")


if __name__ == "__main__":
    main()
