from pathlib import Path
from typing import Dict, Sequence, Union

import plotly.express as px
import plotly.graph_objects as go
import polars as pl

from app.utils.data_processor import aggregate_over_seeds, convert_dataframe_for_plotly

DEPLOYMENT_COLORS = {
    "1D": "#9E9E9E",  # Gray
    "2D": "#64B5F6",  # Light Blue
    "3D": "#4CAF50",  # Green
}


def _curve_label(row: Dict) -> str:
    return f"{row['algorithm']} {row['deployment']} {row['per_antenna_power_w']:g} W"


def create_learning_curve_figure(episodes: pl.DataFrame, value_column: str = "reward") -> go.Figure:
    """
    Create a learning-curve chart with one mean line and a +/- std band per run family.

    Args:
        episodes: Episode rows with algorithm, deployment, per_antenna_power_w, seed columns
        value_column: Column to plot

    Returns:
        Plotly figure with the learning curves
    """
    fig = go.Figure()
    if episodes.height == 0:
        return fig

    aggregated = aggregate_over_seeds(episodes, value_column=value_column).fill_null(0.0)
    mean_col, std_col = f"{value_column}_mean", f"{value_column}_std"
    palette = px.colors.qualitative.Bold
    families = aggregated.select(["algorithm", "deployment", "per_antenna_power_w"]).unique(maintain_order=True)

    for i, family in enumerate(families.iter_rows(named=True)):
        curve = aggregated.filter(
            (pl.col("algorithm") == family["algorithm"])
            & (pl.col("deployment") == family["deployment"])
            & (pl.col("per_antenna_power_w") == family["per_antenna_power_w"])
        )
        df = convert_dataframe_for_plotly(curve)
        color = palette[i % len(palette)]
        label = _curve_label(family)
        upper = df[mean_col] + df[std_col]
        lower = df[mean_col] - df[std_col]
        fig.add_trace(go.Scatter(
            x=list(df["episode"]) + list(df["episode"])[::-1],
            y=list(upper) + list(lower)[::-1],
            fill="toself",
            fillcolor=color,
            opacity=0.2,
            line=dict(width=0),
            hoverinfo="skip",
            showlegend=False,
            legendgroup=label,
        ))
        fig.add_trace(go.Scatter(
            x=df["episode"],
            y=df[mean_col],
            mode="lines",
            name=label,
            line=dict(color=color),
            legendgroup=label,
        ))

    fig.update_layout(
        xaxis_title="Episode",
        yaxis_title=value_column.replace("_", " ").capitalize(),
        legend_title="Run",
        margin=dict(l=10, r=10, t=10, b=10),
    )
    return fig


def create_deployment_figure(summary: pl.DataFrame, value_column: str = "avg_rate_bps_hz") -> go.Figure:
    """
    Create a grouped bar chart comparing deployments at each per-antenna power level.

    Args:
        summary: Summary rows (deployment, per_antenna_power_w and the value column)
        value_column: Metric to show

    Returns:
        Plotly figure with the comparison
    """
    if summary.height == 0:
        return go.Figure()

    df = convert_dataframe_for_plotly(
        summary.with_columns(
            pl.col("per_antenna_power_w").map_elements(lambda p: f"{p:g} W", return_dtype=pl.Utf8).alias("power")
        )
    )
    fig = px.bar(
        df,
        x="power",
        y=value_column,
        color="deployment",
        barmode="group",
        color_discrete_map=DEPLOYMENT_COLORS,
        hover_data=["algorithm", "seeds"],
    )
    fig.update_layout(
        xaxis_title="Per-antenna power",
        yaxis_title=value_column.replace("_", " "),
        legend_title="Deployment",
        margin=dict(l=10, r=10, t=10, b=10),
    )
    return fig


def write_figure_html(fig: go.Figure, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    return path


def write_gnuplot_script(curve_csvs: Sequence[Union[str, Path]], path: Union[str, Path],
                         value_column: str = "reward") -> Path:
    """
    Write a gnuplot script that plots the learning curve of every CSV file.

    Args:
        curve_csvs: Per-seed curve files, relative to the script directory
        path: Script location
        value_column: Column to plot against the episode

    Returns:
        Path of the script
    """
    path = Path(path)
    columns = ["episode", "reward", "sum_rate", "min_sensing_snr_db", "energy_used"]
    y = columns.index(value_column) + 1
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set xlabel 'Episode'",
        f"set ylabel '{value_column}'",
        "set terminal pngcairo size 1000,600",
        f"set output '{path.stem}.png'",
    ]
    if curve_csvs:
        plots = []
        for csv in curve_csvs:
            plots.append(f"'{Path(csv).as_posix()}' using 1:{y} with lines title '{Path(csv).stem}'")
        lines.append("plot " + ", \\\n     ".join(plots))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
