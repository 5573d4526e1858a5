from dataclasses import asdict
from pathlib import Path
from typing import List, Sequence, Union

import pandas as pd
import polars as pl

from app.database.models import SummaryRow
from app.models.data_models import EpisodeRecord

CURVE_SCHEMA = {
    "episode": pl.Int64,
    "reward": pl.Float64,
    "sum_rate": pl.Float64,
    "min_sensing_snr_db": pl.Float64,
    "energy_used": pl.Float64,
}

SUMMARY_COLUMNS = [
    "algorithm",
    "deployment",
    "per_antenna_power_w",
    "seeds",
    "avg_rate_bps_hz",
    "avg_sensing_snr_db",
    "avg_sensing_snr_db_alt",
    "max_sensing_snr_db",
    "avg_user_rate",
    "final_reward_mean",
    "final_reward_std",
]


def curve_frame(records: Sequence[EpisodeRecord]) -> pl.DataFrame:
    """
    Build a learning-curve DataFrame with the fixed episode columns

    Args:
        records (Sequence[EpisodeRecord]): One record per episode

    Returns:
        pl.DataFrame: Frame with columns episode, reward, sum_rate, min_sensing_snr_db, energy_used
    """
    rows = [asdict(r) for r in records]
    return pl.DataFrame(rows, schema=CURVE_SCHEMA) if rows else pl.DataFrame(schema=CURVE_SCHEMA)


def write_csv(df: pl.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.write_csv(path)
    return path


def final_window_mean(df: pl.DataFrame, value_column: str = "reward", window: int = 100) -> float:
    """
    Mean of the last `window` rows of a column

    Args:
        df (pl.DataFrame): Learning curve ordered by episode
        value_column (str): Column to average
        window (int): Number of trailing episodes

    Returns:
        float: Mean, or NaN for an empty frame
    """
    if df.height == 0:
        return float("nan")
    return float(df.sort("episode").tail(window)[value_column].mean())


def calculate_rolling_average(df: pl.DataFrame,
                              value_column: str,
                              window_size: int = 50,
                              order_column: str = "episode") -> pl.DataFrame:
    """
    Calculate rolling average on a Polars DataFrame

    Args:
        df (pl.DataFrame): DataFrame to process
        value_column (str): Column to calculate rolling average
        window_size (int): Window size for rolling average
        order_column (str): Column giving the row order

    Returns:
        pl.DataFrame: DataFrame with rolling average
    """
    return df.sort(order_column).with_columns(
        pl.col(value_column).rolling_mean(window_size=window_size, min_samples=1).alias(f"{value_column}_rolling_avg")
    )


def aggregate_over_seeds(df: pl.DataFrame,
                         group_columns: Sequence[str] = ("algorithm", "deployment", "per_antenna_power_w"),
                         value_column: str = "reward") -> pl.DataFrame:
    """
    Mean and standard deviation across seeds for every episode of every group

    Args:
        df (pl.DataFrame): Episode rows of several runs
        group_columns (Sequence[str]): Columns identifying a curve family
        value_column (str): Column to aggregate

    Returns:
        pl.DataFrame: One row per (group, episode) with `<value>_mean` and `<value>_std`
    """
    keys = list(group_columns) + ["episode"]
    return df.group_by(keys).agg([
        pl.col(value_column).mean().alias(f"{value_column}_mean"),
        pl.col(value_column).std().alias(f"{value_column}_std"),
    ]).sort(keys)


def summary_frame(rows: Sequence[SummaryRow]) -> pl.DataFrame:
    """Summary rows with the table columns in a fixed order."""
    records: List[dict] = [asdict(r) for r in rows]
    if not records:
        return pl.DataFrame(schema={c: pl.Float64 for c in SUMMARY_COLUMNS})
    return pl.DataFrame(records).select(SUMMARY_COLUMNS)


def convert_dataframe_for_plotly(df: pl.DataFrame) -> pd.DataFrame:
    """
    Convert a Polars DataFrame to Pandas for Plotly

    Args:
        df (pl.DataFrame): Polars DataFrame

    Returns:
        pd.DataFrame: Pandas DataFrame
    """
    return df.to_pandas()
