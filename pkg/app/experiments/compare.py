"""Cross-run comparison: mean +/- std tables, per-pair sign tests and expected orderings."""
import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np
import polars as pl
from scipy.stats import binomtest

from app.errors import ComparisonError
from app.experiments.runner import RunReport
from app.models.config_models import ScenarioConfig

logger = logging.getLogger(__name__)

COMPARE_METRICS = ("final_reward", "avg_rate_bps_hz", "avg_sensing_snr_db")


@dataclass(frozen=True)
class ExpectedOrdering:
    """`better` should beat `worse` on `metric` when every other run axis matches."""
    axis: str
    better: str
    worse: str
    metric: str
    strict: bool = True


EXPECTED_ORDERINGS = (
    ExpectedOrdering("deployment", "3D", "2D", "avg_rate_bps_hz"),
    ExpectedOrdering("deployment", "2D", "1D", "avg_rate_bps_hz"),
    ExpectedOrdering("deployment", "3D", "1D", "avg_rate_bps_hz"),
    ExpectedOrdering("deployment", "3D", "2D", "final_reward"),
    ExpectedOrdering("deployment", "3D", "1D", "final_reward"),
    ExpectedOrdering("algorithm", "hgrl", "random", "final_reward"),
    ExpectedOrdering("algorithm", "hgrl", "grl", "final_reward", strict=False),
    ExpectedOrdering("algorithm", "hgrl", "mlp_a2c", "final_reward", strict=False),
)


@dataclass(frozen=True)
class ExpectedProximity:
    """
    `closest` should sit at or above the scenario threshold `threshold_key` on
    `metric`, and nearer to it than any other value of `axis`.
    """
    axis: str
    closest: str
    metric: str
    threshold_key: str


EXPECTED_PROXIMITY = (
    ExpectedProximity("deployment", "3D", "avg_sensing_snr_db", "gamma_min_db"),
)

_AXES = ("algorithm", "deployment", "per_antenna_power_w")


@dataclass
class ComparisonResult:
    table: pl.DataFrame
    pairs: pl.DataFrame
    orderings: pl.DataFrame
    warnings: List[str] = field(default_factory=list)


def _mean_std(values: Sequence[float]):
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else float("nan")
    return float(np.mean(arr)), std


def sign_test(a: RunReport, b: RunReport, metric: str) -> dict:
    """
    Paired sign test of `a` against `b` over their common seeds.

    Returns:
        Dict with the mean difference, win/loss/tie counts and the two-sided
        binomial p-value (NaN when there are no untied pairs)
    """
    va, vb = a.values(metric), b.values(metric)
    seeds = sorted(set(va) & set(vb))
    diffs = np.array([va[s] - vb[s] for s in seeds], dtype=np.float64)
    wins = int(np.sum(diffs > 0))
    losses = int(np.sum(diffs < 0))
    untied = wins + losses
    p_value = binomtest(wins, untied, 0.5).pvalue if untied > 0 else float("nan")
    return {
        "a": a.label,
        "b": b.label,
        "metric": metric,
        "seeds": len(seeds),
        "mean_diff": float(np.mean(diffs)) if seeds else float("nan"),
        "wins": wins,
        "losses": losses,
        "ties": len(seeds) - untied,
        "p_value": float(p_value),
    }


def _summary_row(report: RunReport) -> dict:
    row = {
        "run": report.label,
        "algorithm": report.algorithm,
        "deployment": report.deployment,
        "per_antenna_power_w": report.per_antenna_power_w,
        "seeds": len(report.seeds),
    }
    for metric in COMPARE_METRICS:
        mean, std = _mean_std(list(report.values(metric).values()))
        row[f"{metric}_mean"] = mean
        row[f"{metric}_std"] = std
    return row


def _matches(a: RunReport, b: RunReport, axis: str) -> bool:
    return all(getattr(a, other) == getattr(b, other) for other in _AXES if other != axis)


def _threshold(report: RunReport, key: str) -> float:
    scenario = report.config.get("scenario", {}) if report.config else {}
    return float(scenario.get(key, getattr(ScenarioConfig(), key)))


def check_orderings(reports: Sequence[RunReport]) -> List[dict]:
    """Evaluate every expected ordering that the given reports can test."""
    rows = []
    for expected in EXPECTED_ORDERINGS:
        for a in reports:
            if getattr(a, expected.axis) != expected.better:
                continue
            for b in reports:
                if getattr(b, expected.axis) != expected.worse or not _matches(a, b, expected.axis):
                    continue
                mean_a, _ = _mean_std(list(a.values(expected.metric).values()))
                mean_b, _ = _mean_std(list(b.values(expected.metric).values()))
                holds = mean_a > mean_b if expected.strict else mean_a >= mean_b
                rows.append({
                    "better": a.label,
                    "worse": b.label,
                    "metric": expected.metric,
                    "better_mean": mean_a,
                    "worse_mean": mean_b,
                    "strict": expected.strict,
                    "relation": "greater",
                    "holds": bool(holds),
                })
    for expected in EXPECTED_PROXIMITY:
        for a in reports:
            if getattr(a, expected.axis) != expected.closest:
                continue
            threshold = _threshold(a, expected.threshold_key)
            mean_a, _ = _mean_std(list(a.values(expected.metric).values()))
            for b in reports:
                if getattr(b, expected.axis) == expected.closest or not _matches(a, b, expected.axis):
                    continue
                mean_b, _ = _mean_std(list(b.values(expected.metric).values()))
                holds = mean_a >= threshold and abs(mean_a - threshold) < abs(mean_b - threshold)
                rows.append({
                    "better": a.label,
                    "worse": b.label,
                    "metric": expected.metric,
                    "better_mean": mean_a,
                    "worse_mean": mean_b,
                    "strict": True,
                    "relation": "closest",
                    "holds": bool(holds),
                })
    return rows


def compare(reports: Sequence[RunReport]) -> ComparisonResult:
    """
    Compare run families that share a scenario.

    Args:
        reports: At least two reports with the same scenario hash

    Returns:
        ComparisonResult: Mean/std table, pairwise sign tests and ordering checks
    """
    if len(reports) < 2:
        raise ComparisonError(f"need at least two reports to compare, got {len(reports)}")
    hashes = sorted({r.scenario_hash for r in reports})
    if len(hashes) > 1:
        raise ComparisonError(f"reports come from different scenarios: {', '.join(hashes)}")

    warnings = []
    if any(len(r.seeds) < 2 for r in reports):
        message = "fewer than two completed seeds in some runs; significance is unavailable"
        logger.warning(message)
        warnings.append(message)

    table = pl.DataFrame([_summary_row(r) for r in reports])
    pair_rows = [
        sign_test(a, b, metric)
        for a, b in itertools.combinations(reports, 2)
        for metric in COMPARE_METRICS
    ]
    pairs = pl.DataFrame(pair_rows)
    ordering_rows = check_orderings(reports)
    orderings = pl.DataFrame(ordering_rows) if ordering_rows else pl.DataFrame(
        schema={"better": pl.Utf8, "worse": pl.Utf8, "metric": pl.Utf8, "better_mean": pl.Float64,
                "worse_mean": pl.Float64, "strict": pl.Boolean, "relation": pl.Utf8, "holds": pl.Boolean}
    )
    for row in ordering_rows:
        if not row["holds"]:
            logger.warning("Expected %s %s %s on %s does not hold (%.4f vs %.4f)",
                           row["better"], ">" if row["relation"] == "greater" else "closer to threshold than",
                           row["worse"], row["metric"], row["better_mean"], row["worse_mean"])
    return ComparisonResult(table=table, pairs=pairs, orderings=orderings, warnings=warnings)


def compare_by_scenario(reports: Sequence[RunReport]) -> List[ComparisonResult]:
    """Run `compare` separately for every group of reports sharing a scenario hash."""
    results = []
    for scenario_hash in dict.fromkeys(r.scenario_hash for r in reports):
        group = [r for r in reports if r.scenario_hash == scenario_hash]
        if len(group) >= 2:
            results.append(compare(group))
    return results
