import dataclasses
import functools
import logging
from pathlib import Path
from typing import List, Optional

import click
import polars as pl

from app.errors import CheckpointError, ComparisonError, ConfigError
from app.experiments.compare import ComparisonResult, compare_by_scenario
from app.experiments.runner import (
    ExperimentResult,
    compare_algorithms,
    compare_deployments,
    evaluate_checkpoint,
    run,
)
from app.models.config_models import ALGORITHMS, ExperimentConfig
from app.utils.config import apply_overrides, load_config
from app.utils.data_processor import write_csv

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "configs/reference.toml"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_RUN_FAILURES = 2


def configure_logging(verbosity: int):
    level = logging.WARNING if verbosity <= 0 else logging.INFO if verbosity == 1 else logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT)


def experiment_options(func):
    """Options shared by every subcommand that trains."""
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=DEFAULT_CONFIG,
                  show_default=True, help="Experiment configuration (TOML).")
    @click.option("--seed", "seeds", type=int, multiple=True, help="Seed; repeat for several seeds.")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("--deployment", type=click.Choice(["1d", "2d", "3d"], case_sensitive=False), default=None)
    @click.option("--algorithm", type=click.Choice(ALGORITHMS), default=None)
    @click.option("--episodes", type=click.IntRange(min=0), default=None, help="Training episodes per run.")
    @click.option("--per-antenna-power", type=float, default=None, help="Per-antenna power cap in W.")
    @functools.wraps(func)
    def wrapper(config_path, seeds, out, deployment, algorithm, episodes, per_antenna_power, **kwargs):
        try:
            config = apply_overrides(
                load_config(config_path),
                seeds=seeds,
                deployment=deployment,
                algorithm=algorithm,
                episodes=episodes,
                per_antenna_power=per_antenna_power,
                out=out,
            )
        except ConfigError as e:
            raise click.ClickException(str(e)) from e
        return func(config, **kwargs)
    return wrapper


def report_result(result: ExperimentResult):
    with pl.Config(tbl_cols=-1, tbl_width_chars=160):
        click.echo(result.summary)
    click.echo(f"Results written to {result.out_dir}")
    if result.failures:
        for outcome in result.failures:
            click.echo(f"FAILED {outcome.key.run_id}: {outcome.error}", err=True)
        raise SystemExit(EXIT_RUN_FAILURES)


def report_comparisons(out_dir: Path, comparisons: List[ComparisonResult]):
    if not comparisons:
        click.echo("Nothing to compare: every scenario has a single run family.")
        return
    tables = pl.concat([c.table for c in comparisons], how="diagonal_relaxed")
    pairs = pl.concat([c.pairs for c in comparisons], how="diagonal_relaxed")
    orderings = pl.concat([c.orderings for c in comparisons], how="diagonal_relaxed")
    write_csv(tables, out_dir / "comparison.csv")
    write_csv(pairs, out_dir / "sign_tests.csv")
    write_csv(orderings, out_dir / "orderings.csv")
    with pl.Config(tbl_cols=-1, tbl_rows=-1, tbl_width_chars=160):
        click.echo(tables)
        click.echo(orderings)
    for comparison in comparisons:
        for warning in comparison.warnings:
            click.echo(f"warning: {warning}", err=True)


def _compare(result: ExperimentResult):
    try:
        comparisons = compare_by_scenario([r for r in result.reports if r.seeds])
    except ComparisonError as e:
        raise click.ClickException(str(e)) from e
    report_comparisons(result.out_dir, comparisons)
    report_result(result)


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output.")
def cli(verbose: int):
    """Pinching-antenna ISAC experiments."""
    configure_logging(verbose)


@cli.command()
@experiment_options
def train(config: ExperimentConfig):
    """Train one algorithm on one deployment for every seed, then evaluate it."""
    report_result(run(config))


@cli.command("compare-deployments")
@experiment_options
def compare_deployments_command(config: ExperimentConfig):
    """Train on the 1D, 2D and 3D deployments at each per-antenna power level."""
    _compare(compare_deployments(config))


@cli.command("compare-algorithms")
@experiment_options
def compare_algorithms_command(config: ExperimentConfig):
    """Train HGRL and every baseline on the configured deployment."""
    _compare(compare_algorithms(config))


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Checkpoint written by a training run.")
@click.option("--seed", "seeds", type=int, multiple=True, help="Evaluation seed; defaults to the run's seed.")
@click.option("--episodes", type=click.IntRange(min=1), default=None, help="Greedy evaluation episodes.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Directory for evaluation.csv; printed only when omitted.")
def eval_command(checkpoint: str, seeds, episodes: Optional[int], out: Optional[str]):
    """Evaluate the greedy policy of a saved model without training."""
    rows = []
    try:
        for seed in (seeds or (None,)):
            summary = evaluate_checkpoint(checkpoint, episodes=episodes, seed=seed)
            rows.append({"checkpoint": checkpoint, "seed": seed, **dataclasses.asdict(summary)})
    except (CheckpointError, ConfigError) as e:
        raise click.ClickException(str(e)) from e
    frame = pl.DataFrame(rows)
    with pl.Config(tbl_cols=-1, tbl_width_chars=160):
        click.echo(frame)
    if out is not None:
        path = write_csv(frame, Path(out) / "evaluation.csv")
        click.echo(f"Evaluation written to {path}")


def main():
    cli()


if __name__ == "__main__":
    main()
