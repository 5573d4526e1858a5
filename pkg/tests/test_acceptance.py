"""Full-length reference experiments; run with `pytest --runslow`."""
import dataclasses
import warnings
from pathlib import Path

import numpy as np
import pytest

from app.experiments.compare import check_orderings, compare_by_scenario
from app.experiments.runner import compare_algorithms, compare_deployments
from app.utils.config import apply_overrides, load_config

pytestmark = pytest.mark.slow

REFERENCE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "reference.toml"


def _reference(tmp_path_factory, name):
    config = apply_overrides(load_config(REFERENCE_CONFIG), out=str(tmp_path_factory.mktemp(name)))
    return dataclasses.replace(config, train=dataclasses.replace(config.train, workers=3, log_every=0))


@pytest.fixture(scope="module")
def deployment_runs(tmp_path_factory):
    return compare_deployments(_reference(tmp_path_factory, "deployments"))


@pytest.fixture(scope="module")
def algorithm_runs(tmp_path_factory):
    return compare_algorithms(_reference(tmp_path_factory, "algorithms"))


def _seed_mean(report, metric):
    return float(np.mean(list(report.values(metric).values())))


def _curves(runs, reports):
    return [str(runs.out_dir / o.curve_csv) for r in reports for o in r.completed]


def test_every_run_completes(deployment_runs, algorithm_runs):
    assert deployment_runs.failures == []
    assert algorithm_runs.failures == []


@pytest.mark.parametrize("power", [0.1, 0.02])
def test_deployment_rate_ordering(deployment_runs, power):
    reports = {r.deployment: r for r in deployment_runs.reports if r.per_antenna_power_w == power}
    assert all(len(r.seeds) >= 3 for r in reports.values())
    rates = {kind: _seed_mean(r, "avg_rate_bps_hz") for kind, r in reports.items()}
    assert rates["3D"] > rates["2D"] > rates["1D"], (rates, _curves(deployment_runs, reports.values()))


def test_deployment_comparison_flags(deployment_runs):
    for comparison in compare_by_scenario(deployment_runs.reports):
        rate_rows = comparison.orderings.filter(comparison.orderings["metric"] == "avg_rate_bps_hz")
        assert rate_rows["holds"].all()


def test_3d_sensing_snr_closest_to_threshold(deployment_runs):
    reports = {r.deployment: r for r in deployment_runs.reports if r.per_antenna_power_w == 0.02}
    gamma_min_db = reports["3D"].config["scenario"]["gamma_min_db"]
    gaps = {kind: _seed_mean(r, "avg_sensing_snr_db") - gamma_min_db for kind, r in reports.items()}
    curves = _curves(deployment_runs, reports.values())
    assert gaps["3D"] >= 0.0, (gaps, curves)
    assert abs(gaps["3D"]) == min(abs(g) for g in gaps.values()), (gaps, curves)


def test_algorithm_ordering(algorithm_runs):
    reports = {r.algorithm: r for r in algorithm_runs.reports}
    rewards = {name: _seed_mean(r, "final_reward") for name, r in reports.items()}
    assert rewards["hgrl"] > rewards["random"], rewards

    for row in check_orderings(list(reports.values())):
        if not row["strict"] and not row["holds"]:
            curves = [str(algorithm_runs.out_dir / o.curve_csv) for o in reports["hgrl"].completed]
            warnings.warn(f"{row['better']} below {row['worse']} on {row['metric']} "
                          f"({row['better_mean']:.3f} vs {row['worse_mean']:.3f}); curves: {', '.join(curves)}")
