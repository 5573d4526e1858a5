import dataclasses
import math
from pathlib import Path

import polars as pl
import pytest
from click.testing import CliRunner

from app.agent.a2c import EvaluationSummary
from app.agent.baselines import TRAINERS
from app.database.queries import get_runs
from app.errors import CheckpointError, ComparisonError, DivergenceError
from app.experiments.compare import check_orderings, compare, compare_by_scenario, sign_test
from app.experiments.runner import (
    RunKey,
    RunOutcome,
    RunReport,
    compare_algorithms,
    evaluate_checkpoint,
    plan_runs,
    run,
)
from app.main import EXIT_RUN_FAILURES, cli
from app.utils.checkpoint import read_checkpoint, write_checkpoint
from app.utils.config import dump_config


def _with(config, **train):
    return dataclasses.replace(config, train=dataclasses.replace(config.train, **train))


def _summary(rate, snr_db=3.0):
    return EvaluationSummary(episodes=2, avg_reward=0.0, avg_rate_bps_hz=rate, avg_user_rate=rate / 2,
                             avg_sensing_snr_db=snr_db, avg_sensing_snr_db_alt=2.0, max_sensing_snr_db=6.0,
                             feasible_fraction=1.0)


def _report(values, algorithm="hgrl", deployment="3D", scenario_hash="h", snr_db=3.0, config=None):
    """Report with one completed outcome per seed; `values` maps seed -> (final_reward, avg_rate)."""
    report = RunReport(algorithm=algorithm, deployment=deployment, per_antenna_power_w=0.1,
                       scenario_hash=scenario_hash, config=config or {})
    for seed, (reward, rate) in values.items():
        report.outcomes.append(RunOutcome(key=RunKey(algorithm, deployment, 0.1, seed), scenario_hash=scenario_hash,
                                          final_reward=reward, evaluation=_summary(rate, snr_db)))
    return report


def _write_config(config, tmp_path) -> Path:
    path = tmp_path / "experiment.toml"
    path.write_text(dump_config(config), encoding="utf-8")
    return path


def test_plan_runs_expands_axes(small_config):
    config = _with(small_config, seeds=(0, 1))
    jobs = plan_runs(config, "out", algorithms=["hgrl", "random"], deployments=["1D", "3D"], powers=[0.1, 0.02])
    assert len(jobs) == 2 * 2 * 2 * 2
    assert len({job.key.run_id for job in jobs}) == len(jobs)
    first = jobs[0]
    assert first.key == RunKey("hgrl", "1D", 0.1, 0)
    assert first.key.run_id == "hgrl-1D-0.1W-s0"
    assert first.config.scenario.deployment == "1D"
    assert first.config.train.algorithm == "hgrl"


def test_random_run_writes_no_checkpoint(small_config):
    result = run(_with(small_config, algorithm="random"))
    out = result.out_dir
    assert not (out / "checkpoints").exists()
    assert (out / "curves" / "random-3D-0.1W-s0.csv").exists()
    for name in ("summary.csv", "resolved_config.toml", "results.duckdb", "curves.html", "plot_curves.gp"):
        assert (out / name).exists(), name
    outcome = result.reports[0].outcomes[0]
    assert outcome.ok and outcome.checkpoint is None and outcome.parameter_count == 0


def test_seeds_produce_curves_checkpoints_and_summary(small_config):
    result = run(_with(small_config, seeds=(0, 1)))
    out = result.out_dir
    assert sorted(p.name for p in (out / "curves").glob("*.csv")) == ["hgrl-3D-0.1W-s0.csv", "hgrl-3D-0.1W-s1.csv"]
    assert len(list((out / "checkpoints").glob("*.json"))) == 2

    summary = pl.read_csv(out / "summary.csv")
    assert summary.height == 1
    assert summary["seeds"].to_list() == [2]
    curve = pl.read_csv(out / "curves" / "hgrl-3D-0.1W-s0.csv")
    assert curve.columns == ["episode", "reward", "sum_rate", "min_sensing_snr_db", "energy_used"]
    assert curve.height == small_config.train.episodes
    assert "curves/hgrl-3D-0.1W-s0.csv" in (out / "plot_curves.gp").read_text()

    report = result.reports[0]
    assert report.seeds == [0, 1]
    assert set(report.values("final_reward")) == {0, 1}


def test_checkpoint_evaluation_matches_run(small_config):
    result = run(small_config)
    outcome = result.reports[0].outcomes[0]
    path = result.out_dir / outcome.checkpoint
    _, meta = read_checkpoint(path)
    assert meta["algorithm"] == "hgrl" and meta["seed"] == 0
    assert evaluate_checkpoint(path) == outcome.evaluation
    assert evaluate_checkpoint(path, episodes=1).episodes == 1


def test_checkpoint_without_config_is_rejected(tmp_path):
    path = write_checkpoint(tmp_path / "bare.json", {}, meta={"algorithm": "hgrl"})
    with pytest.raises(CheckpointError):
        evaluate_checkpoint(path)


def test_failed_run_is_recorded(small_config, monkeypatch):
    def diverge(env_factory, config, seed=0):
        raise DivergenceError("loss became non-finite at episode 0")

    monkeypatch.setitem(TRAINERS, "hgrl", diverge)
    result = run(small_config)
    assert [o.key.run_id for o in result.failures] == ["hgrl-3D-0.1W-s0"]
    assert "DivergenceError" in result.failures[0].error
    runs = get_runs(result.out_dir / "results.duckdb")
    assert [r.status for r in runs] == ["failed"]
    assert result.summary.height == 0


def test_compare_algorithms_produces_a_report_per_algorithm(small_config):
    result = compare_algorithms(small_config)
    assert [r.algorithm for r in result.reports] == ["hgrl", "grl", "mlp_a2c", "random"]
    assert len({r.scenario_hash for r in result.reports}) == 1
    comparison = compare(result.reports)
    assert comparison.table.height == 4
    assert comparison.pairs.height == 6 * 3


def test_identical_reports_have_zero_difference():
    values = {0: (1.0, 2.0), 1: (3.0, 4.0), 2: (5.0, 1.0)}
    result = compare([_report(values, "hgrl"), _report(values, "grl")])
    pairs = result.pairs.filter(pl.col("metric") == "final_reward")
    assert pairs["mean_diff"].to_list() == [0.0]
    assert pairs["ties"].to_list() == [3]
    assert math.isnan(pairs["p_value"][0])
    assert result.warnings == []


def test_single_seed_warns():
    result = compare([_report({0: (1.0, 2.0)}, "hgrl"), _report({0: (0.0, 1.0)}, "random")])
    assert len(result.warnings) == 1
    assert math.isnan(result.table["final_reward_std"][0])


def test_compare_rejects_mismatched_scenarios():
    with pytest.raises(ComparisonError):
        compare([_report({0: (1.0, 2.0)}, scenario_hash="a"), _report({0: (1.0, 2.0)}, "grl", scenario_hash="b")])
    with pytest.raises(ComparisonError):
        compare([_report({0: (1.0, 2.0)})])


def test_sign_test_counts_and_p_value():
    better = _report({s: (10.0 + s, 5.0) for s in range(5)})
    worse = _report({s: (float(s), 5.0) for s in range(5)}, "random")
    result = sign_test(better, worse, "final_reward")
    assert (result["wins"], result["losses"], result["ties"]) == (5, 0, 0)
    assert result["mean_diff"] == pytest.approx(10.0)
    assert result["p_value"] == pytest.approx(2 * 0.5 ** 5)


def test_sign_test_uses_common_seeds_only():
    a = _report({0: (1.0, 1.0), 1: (2.0, 1.0), 2: (3.0, 1.0)})
    b = _report({1: (0.0, 1.0), 2: (0.0, 1.0), 3: (9.0, 1.0)}, "grl")
    assert sign_test(a, b, "final_reward")["seeds"] == 2


def test_deployment_orderings():
    reports = [
        _report({0: (3.0, 9.0), 1: (3.0, 9.0)}, deployment="3D"),
        _report({0: (2.0, 6.0), 1: (2.0, 6.0)}, deployment="2D"),
        _report({0: (2.5, 7.0), 1: (2.5, 7.0)}, deployment="1D"),
    ]
    rows = {(r["better"], r["worse"], r["metric"]): r["holds"] for r in check_orderings(reports)}
    assert rows[("hgrl/3D/0.1W", "hgrl/2D/0.1W", "avg_rate_bps_hz")]
    assert not rows[("hgrl/2D/0.1W", "hgrl/1D/0.1W", "avg_rate_bps_hz")]
    assert rows[("hgrl/3D/0.1W", "hgrl/1D/0.1W", "final_reward")]
    assert len(rows) == 7


def test_sensing_snr_proximity_ordering():
    config = {"scenario": {"gamma_min_db": 5.0}}
    reports = [
        _report({0: (3.0, 9.0)}, deployment="3D", snr_db=6.0, config=config),
        _report({0: (2.0, 8.0)}, deployment="2D", snr_db=9.0, config=config),
        _report({0: (1.0, 7.0)}, deployment="1D", snr_db=4.5, config=config),
    ]
    rows = [r for r in check_orderings(reports) if r["relation"] == "closest"]
    holds = {r["worse"]: r["holds"] for r in rows}
    assert holds == {"hgrl/2D/0.1W": True, "hgrl/1D/0.1W": False}
    assert {r["metric"] for r in rows} == {"avg_sensing_snr_db"}


def test_sensing_snr_below_threshold_never_counts_as_closest():
    reports = [
        _report({0: (3.0, 9.0)}, deployment="3D", snr_db=4.9, config={"scenario": {"gamma_min_db": 5.0}}),
        _report({0: (2.0, 8.0)}, deployment="2D", snr_db=12.0),
    ]
    (row,) = [r for r in check_orderings(reports) if r["relation"] == "closest"]
    assert not row["holds"]


def test_non_strict_algorithm_ordering_accepts_ties():
    reports = [_report({0: (1.0, 1.0)}, "hgrl"), _report({0: (1.0, 1.0)}, "grl")]
    (row,) = check_orderings(reports)
    assert row["holds"] and not row["strict"]


def test_compare_by_scenario_groups():
    reports = [
        _report({0: (1.0, 1.0)}, "hgrl", scenario_hash="a"),
        _report({0: (1.0, 1.0)}, "grl", scenario_hash="a"),
        _report({0: (1.0, 1.0)}, "hgrl", scenario_hash="b"),
    ]
    results = compare_by_scenario(reports)
    assert len(results) == 1
    assert results[0].table.height == 2


def test_cli_train_and_eval(small_config, tmp_path):
    config_path = _write_config(small_config, tmp_path)
    out = tmp_path / "cli"
    runner = CliRunner()
    result = runner.invoke(cli, ["train", "--config", str(config_path), "--out", str(out), "--seed", "3",
                                 "--deployment", "2d", "--episodes", "2"])
    assert result.exit_code == 0, result.output
    checkpoint = out / "checkpoints" / "hgrl-2D-0.1W-s3.json"
    assert checkpoint.exists()
    assert pl.read_csv(out / "curves" / "hgrl-2D-0.1W-s3.csv").height == 2

    result = runner.invoke(cli, ["eval", "--checkpoint", str(checkpoint), "--episodes", "1", "--out", str(out)])
    assert result.exit_code == 0, result.output
    evaluation = pl.read_csv(out / "evaluation.csv")
    assert evaluation["episodes"].to_list() == [1]


def test_cli_compare_deployments(small_config, tmp_path):
    config_path = _write_config(small_config, tmp_path)
    out = tmp_path / "cli"
    result = CliRunner().invoke(cli, ["compare-deployments", "--config", str(config_path), "--out", str(out)])
    assert result.exit_code == 0, result.output
    for name in ("comparison.csv", "sign_tests.csv", "orderings.csv", "deployments.html"):
        assert (out / name).exists(), name
    assert pl.read_csv(out / "comparison.csv").height == 3 * len(small_config.scenario.compare_power_levels_w)


def test_cli_reports_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario]\nnum_users = 2\n", encoding="utf-8")
    result = CliRunner().invoke(cli, ["train", "--config", str(bad)])
    assert result.exit_code == 1
    assert "missing required key" in result.output


def test_cli_exit_code_on_failed_runs(small_config, tmp_path, monkeypatch):
    def diverge(env_factory, config, seed=0):
        raise DivergenceError("parameter 'critic.dense1.b' became non-finite at episode 0")

    monkeypatch.setitem(TRAINERS, "hgrl", diverge)
    config_path = _write_config(small_config, tmp_path)
    result = CliRunner().invoke(cli, ["train", "--config", str(config_path), "--out", str(tmp_path / "cli")])
    assert result.exit_code == EXIT_RUN_FAILURES


def test_repeated_runs_are_bitwise_identical(small_config, tmp_path):
    outputs = []
    for name in ("first", "second"):
        config = dataclasses.replace(small_config, output=dataclasses.replace(small_config.output,
                                                                            dir=str(tmp_path / name)))
        outputs.append(run(config).out_dir)
    for relative in ("curves/hgrl-3D-0.1W-s0.csv", "checkpoints/hgrl-3D-0.1W-s0.json", "summary.csv"):
        assert (outputs[0] / relative).read_bytes() == (outputs[1] / relative).read_bytes(), relative
