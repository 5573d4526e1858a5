"""
Experiment orchestration: one training run per (algorithm, deployment, power cap, seed).

Worker processes only write their own curve and checkpoint files; the parent
process is the single writer of the results database and the summary.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from functools import partial
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import polars as pl

from app.agent.a2c import EvaluationSummary, build_model, evaluate, greedy_policy
from app.agent.baselines import ENCODER_FOR, TRAINERS, uniform_policy
from app.database.init_db import DB_FILENAME, initialize_database
from app.database.models import EvaluationRow, RunRow
from app.database.queries import get_episode_frame, get_summary, save_episodes, save_evaluation, save_run
from app.env.isac_env import IsacEnvironment
from app.errors import CheckpointError, ContractError, DivergenceError, InfeasibleGeometryError
from app.models.config_models import ALGORITHMS, ExperimentConfig
from app.physics.geometry import DEPLOYMENT_KINDS
from app.utils.checkpoint import read_checkpoint, write_checkpoint
from app.utils.config import config_from_dict, write_resolved_config
from app.utils.data_processor import curve_frame, final_window_mean, summary_frame, write_csv
from app.visualizations.curves import (
    create_deployment_figure,
    create_learning_curve_figure,
    write_figure_html,
    write_gnuplot_script,
)

logger = logging.getLogger(__name__)

RUN_FAILURES = (DivergenceError, InfeasibleGeometryError, ContractError)


@dataclass(frozen=True)
class RunKey:
    algorithm: str
    deployment: str
    per_antenna_power_w: float
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.algorithm}-{self.deployment}-{self.per_antenna_power_w:g}W-s{self.seed}"

    @property
    def family(self):
        return self.algorithm, self.deployment, self.per_antenna_power_w


@dataclass(frozen=True)
class RunJob:
    key: RunKey
    config: ExperimentConfig
    out_dir: str


@dataclass
class RunOutcome:
    """Result of a single seed; `status` is "ok" or "failed"."""
    key: RunKey
    scenario_hash: str
    status: str = "ok"
    error: Optional[str] = None
    curve: pl.DataFrame = field(default_factory=lambda: curve_frame([]))
    final_reward: Optional[float] = None
    evaluation: Optional[EvaluationSummary] = None
    parameter_count: int = 0
    checkpoint: Optional[str] = None
    curve_csv: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class RunReport:
    """
    All seeds of one (algorithm, deployment, power cap) family.

    Carries the per-seed learning curves, final-window means and evaluation
    metrics, plus the resolved configuration the runs were produced from.
    """
    algorithm: str
    deployment: str
    per_antenna_power_w: float
    scenario_hash: str
    config: Dict[str, Any]
    outcomes: List[RunOutcome] = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"{self.algorithm}/{self.deployment}/{self.per_antenna_power_w:g}W"

    @property
    def completed(self) -> List[RunOutcome]:
        return [o for o in self.outcomes if o.ok]

    @property
    def seeds(self) -> List[int]:
        return [o.key.seed for o in self.completed]

    @property
    def curves(self) -> Dict[int, pl.DataFrame]:
        return {o.key.seed: o.curve for o in self.completed}

    def values(self, metric: str) -> Dict[int, float]:
        """
        Per-seed value of a metric.

        Args:
            metric: "final_reward" or an EvaluationSummary field

        Returns:
            Dict mapping seed to value, for completed runs only
        """
        result = {}
        for o in self.completed:
            if metric == "final_reward":
                value = o.final_reward
            elif o.evaluation is not None:
                value = getattr(o.evaluation, metric)
            else:
                continue
            if value is not None:
                result[o.key.seed] = float(value)
        return result


@dataclass
class ExperimentResult:
    out_dir: Path
    reports: List[RunReport]
    summary: pl.DataFrame

    @property
    def failures(self) -> List[RunOutcome]:
        return [o for r in self.reports for o in r.outcomes if not o.ok]


def scenario_for(config: ExperimentConfig, deployment: str, per_antenna_power_w: float) -> ExperimentConfig:
    """Configuration with the deployment and per-antenna power cap of one run family."""
    scenario = dataclasses.replace(
        config.scenario, deployment=deployment, per_antenna_power_w=float(per_antenna_power_w)
    )
    return dataclasses.replace(config, scenario=scenario)


def make_env(config: ExperimentConfig, seed) -> IsacEnvironment:
    return IsacEnvironment(config.scenario, config.scenario.deployment, seed=np.random.default_rng(seed))


def evaluation_seed(seed: int) -> np.random.SeedSequence:
    # fourth child of the run seed, disjoint from the three training streams
    return np.random.SeedSequence(seed).spawn(4)[3]


def evaluation_row(run_id: str, summary: EvaluationSummary) -> EvaluationRow:
    return EvaluationRow(run_id=run_id, **dataclasses.asdict(summary))


def plan_runs(config: ExperimentConfig, out_dir: Union[str, Path],
              algorithms: Optional[Sequence[str]] = None,
              deployments: Optional[Sequence[str]] = None,
              powers: Optional[Sequence[float]] = None) -> List[RunJob]:
    """
    Expand a configuration into one job per (algorithm, deployment, power, seed).

    Unset axes fall back to the single value in the configuration.
    """
    algorithms = list(algorithms or [config.train.algorithm])
    deployments = list(deployments or [config.scenario.deployment])
    powers = list(powers or [config.scenario.per_antenna_power_w])
    jobs = []
    for power in powers:
        for deployment in deployments:
            family_config = scenario_for(config, deployment, power)
            for algorithm in algorithms:
                run_config = dataclasses.replace(
                    family_config, train=dataclasses.replace(config.train, algorithm=algorithm)
                )
                for seed in config.train.seeds:
                    key = RunKey(algorithm, deployment, float(power), int(seed))
                    jobs.append(RunJob(key=key, config=run_config, out_dir=str(out_dir)))
    return jobs


def execute_run(job: RunJob) -> RunOutcome:
    """
    Train, evaluate and persist the files of one run.

    Divergence, infeasible geometry and contract violations are reported in
    the outcome instead of being raised, so sibling runs keep going.
    """
    key, config = job.key, job.config
    out_dir = Path(job.out_dir)
    outcome = RunOutcome(key=key, scenario_hash=config.scenario_hash())
    try:
        result = TRAINERS[key.algorithm](partial(make_env, config), config.train, key.seed)
        outcome.curve = curve_frame(result.curve)
        outcome.parameter_count = result.parameter_count
        outcome.final_reward = final_window_mean(outcome.curve, "reward", config.train.final_window)

        env = make_env(config, evaluation_seed(key.seed))
        if result.model is not None:
            policy = greedy_policy(result.model)
        else:
            policy = uniform_policy(env.action_dim, np.random.default_rng(evaluation_seed(key.seed)),
                                    config.train.random_action_scale)
        outcome.evaluation = evaluate(env, policy, config.train.eval_episodes)

        curve_path = write_csv(outcome.curve, out_dir / "curves" / f"{key.run_id}.csv")
        outcome.curve_csv = str(curve_path.relative_to(out_dir))
        if result.model is not None:
            meta = {
                "run_id": key.run_id,
                "algorithm": key.algorithm,
                "deployment": key.deployment,
                "per_antenna_power_w": key.per_antenna_power_w,
                "seed": key.seed,
                "scenario_hash": outcome.scenario_hash,
                "config": config.to_dict(),
            }
            path = write_checkpoint(out_dir / "checkpoints" / f"{key.run_id}.json",
                                    result.model.store.snapshot(), meta)
            outcome.checkpoint = str(path.relative_to(out_dir))
    except RUN_FAILURES as e:
        logger.error("Run %s failed: %s", key.run_id, e)
        outcome.status = "failed"
        outcome.error = f"{type(e).__name__}: {e}"
        outcome.evaluation = None
        outcome.checkpoint = None
    return outcome


def _execute_all(jobs: Sequence[RunJob], workers: int) -> List[RunOutcome]:
    if workers > 1 and len(jobs) > 1:
        with Pool(min(workers, len(jobs))) as pool:
            return pool.map(execute_run, jobs)
    return [execute_run(job) for job in jobs]


def _store(db_path: Path, outcome: RunOutcome, episodes: int):
    key = outcome.key
    save_run(db_path, RunRow(
        run_id=key.run_id,
        algorithm=key.algorithm,
        deployment=key.deployment,
        per_antenna_power_w=key.per_antenna_power_w,
        seed=key.seed,
        scenario_hash=outcome.scenario_hash,
        status=outcome.status,
        error=outcome.error,
        episodes=episodes if outcome.ok else outcome.curve.height,
        parameter_count=outcome.parameter_count,
        final_reward=outcome.final_reward,
        checkpoint=outcome.checkpoint,
        curve_csv=outcome.curve_csv,
    ))
    save_episodes(db_path, key.run_id, outcome.curve)
    if outcome.evaluation is not None:
        save_evaluation(db_path, evaluation_row(key.run_id, outcome.evaluation))


def group_reports(outcomes: Sequence[RunOutcome], jobs: Sequence[RunJob]) -> List[RunReport]:
    """Group per-seed outcomes into one report per run family, in job order."""
    reports: Dict[tuple, RunReport] = {}
    for job, outcome in zip(jobs, outcomes):
        family = job.key.family
        if family not in reports:
            reports[family] = RunReport(
                algorithm=job.key.algorithm,
                deployment=job.key.deployment,
                per_antenna_power_w=job.key.per_antenna_power_w,
                scenario_hash=outcome.scenario_hash,
                config=job.config.to_dict(),
            )
        reports[family].outcomes.append(outcome)
    return list(reports.values())


def write_figures(out_dir: Path, db_path: Path, run_ids: Sequence[str], summary: pl.DataFrame,
                  curve_csvs: Sequence[str]):
    episodes = get_episode_frame(db_path, run_ids)
    write_figure_html(create_learning_curve_figure(episodes), out_dir / "curves.html")
    write_figure_html(create_deployment_figure(summary), out_dir / "deployments.html")
    write_gnuplot_script(curve_csvs, out_dir / "plot_curves.gp")


def run_experiment(config: ExperimentConfig, jobs: Sequence[RunJob]) -> ExperimentResult:
    """
    Execute planned jobs and write the run artifacts.

    Writes `resolved_config.toml`, per-run curve CSVs and checkpoints, the
    results database, `summary.csv` and, when enabled, the figures.

    Args:
        config: Resolved configuration, echoed into the output directory
        jobs: Jobs from `plan_runs`

    Returns:
        ExperimentResult: One report per run family and the summary frame
    """
    out_dir = Path(config.output.dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_resolved_config(config, out_dir / "resolved_config.toml")
    db_path = initialize_database(out_dir / DB_FILENAME)

    logger.info("Running %d job(s) with %d worker(s) into %s", len(jobs), config.train.workers, out_dir)
    outcomes = _execute_all(jobs, config.train.workers)
    for outcome in outcomes:
        _store(db_path, outcome, config.train.episodes)

    run_ids = [o.key.run_id for o in outcomes]
    summary = summary_frame(get_summary(db_path, run_ids))
    write_csv(summary, out_dir / "summary.csv")
    if config.output.plots:
        write_figures(out_dir, db_path, run_ids, summary, [o.curve_csv for o in outcomes if o.curve_csv])

    failed = [o for o in outcomes if not o.ok]
    if failed:
        logger.warning("%d of %d run(s) failed: %s", len(failed), len(outcomes),
                       ", ".join(o.key.run_id for o in failed))
    return ExperimentResult(out_dir=out_dir, reports=group_reports(outcomes, jobs), summary=summary)


def run(config: ExperimentConfig) -> ExperimentResult:
    """Train the configured algorithm on the configured deployment for every seed."""
    return run_experiment(config, plan_runs(config, config.output.dir))


def compare_deployments(config: ExperimentConfig) -> ExperimentResult:
    """Every deployment at every per-antenna power level of the sweep."""
    jobs = plan_runs(config, config.output.dir,
                     deployments=DEPLOYMENT_KINDS,
                     powers=config.scenario.compare_power_levels_w)
    return run_experiment(config, jobs)


def compare_algorithms(config: ExperimentConfig) -> ExperimentResult:
    """Every algorithm on the configured deployment and power cap."""
    return run_experiment(config, plan_runs(config, config.output.dir, algorithms=ALGORITHMS))


def evaluate_checkpoint(path: Union[str, Path], episodes: Optional[int] = None,
                        seed: Optional[int] = None) -> EvaluationSummary:
    """
    Rebuild a trained model from a checkpoint and evaluate its greedy policy.

    Args:
        path: Checkpoint written by a training run
        episodes: Evaluation episodes (defaults to the run's `eval_episodes`)
        seed: Evaluation seed (defaults to the run's seed)

    Returns:
        EvaluationSummary: Metrics of the greedy policy
    """
    params, meta = read_checkpoint(path)
    if "config" not in meta or meta.get("algorithm") not in ENCODER_FOR:
        raise CheckpointError(f"checkpoint {path} does not describe a trained model")
    config = config_from_dict(meta["config"], source=f"{path} (embedded config)")
    seed = int(meta.get("seed", 0)) if seed is None else int(seed)
    episodes = config.train.eval_episodes if episodes is None else int(episodes)

    env = make_env(config, evaluation_seed(seed))
    model = build_model(ENCODER_FOR[meta["algorithm"]], env, config.train, np.random.default_rng(0))
    model.store.load(params)
    logger.info("Evaluating %s from %s for %d episode(s)", meta.get("run_id", meta["algorithm"]), path, episodes)
    return evaluate(env, greedy_policy(model), episodes)
