import contextlib
import logging
import time
from functools import wraps
from pathlib import Path
from typing import List, Optional, Sequence, Union

import duckdb
import polars as pl

from app.database.models import EvaluationRow, RunRow, SummaryRow

logger = logging.getLogger(__name__)

EPISODE_COLUMNS = ["episode", "reward", "sum_rate", "min_sensing_snr_db", "energy_used"]


@contextlib.contextmanager
def get_db_connection(db_path: Union[str, Path], read_only: bool = False):
    """
    Get a connection to the results database.

    Args:
        db_path: Path of the DuckDB file
        read_only: Whether to open the connection in read-only mode

    Returns:
        DuckDB connection
    """
    max_retries = 3
    retry_delay = 0.1  # seconds
    conn = None

    for attempt in range(max_retries):
        try:
            conn = duckdb.connect(str(db_path), read_only=read_only)
            break
        except duckdb.IOException as e:
            if "Conflicting lock" in str(e) and attempt < max_retries - 1:
                logger.debug("Database %s is locked, retrying (attempt %d)", db_path, attempt + 1)
                time.sleep(retry_delay * (attempt + 1))
                continue
            raise

    if not conn:
        raise duckdb.IOException("Failed to establish database connection after retries")

    try:
        yield conn
    finally:
        try:
            conn.close()
        except duckdb.Error:
            pass


def with_connection(read_only: bool = False):
    """
    Decorator to handle database connections.

    The wrapped function is called as `func(db_path, ...)` and receives an
    open connection in place of the path.

    Args:
        read_only: Whether to open the connection in read-only mode
    """
    def decorator(func):
        @wraps(func)
        def wrapper(db_path, *args, **kwargs):
            with get_db_connection(db_path, read_only=read_only) as conn:
                return func(conn, *args, **kwargs)
        return wrapper
    return decorator


@with_connection()
def save_run(conn, run: RunRow) -> str:
    """
    Insert or replace a run row.

    Args:
        run: Run metadata

    Returns:
        The run id
    """
    conn.execute("""
        INSERT OR REPLACE INTO runs (
            run_id, algorithm, deployment, per_antenna_power_w, seed, scenario_hash,
            status, error, episodes, parameter_count, final_reward, checkpoint, curve_csv
        )
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
    """, [
        run.run_id, run.algorithm, run.deployment, run.per_antenna_power_w, run.seed, run.scenario_hash,
        run.status, run.error, run.episodes, run.parameter_count, run.final_reward, run.checkpoint,
        run.curve_csv,
    ])
    return run.run_id


@with_connection()
def save_episodes(conn, run_id: str, curve: pl.DataFrame) -> int:
    """
    Replace the learning curve stored for a run.

    Args:
        run_id: Run the rows belong to
        curve: Frame with the episode columns

    Returns:
        Number of rows written
    """
    conn.execute("DELETE FROM episodes WHERE run_id = ?", [run_id])
    if curve.height == 0:
        return 0
    frame = curve.select(EPISODE_COLUMNS).with_columns(pl.lit(run_id).alias("run_id"))
    conn.register("curve_frame", frame.to_arrow())
    try:
        conn.execute(f"""
            INSERT INTO episodes (run_id, {", ".join(EPISODE_COLUMNS)})
            SELECT run_id, {", ".join(EPISODE_COLUMNS)} FROM curve_frame
        """)
    finally:
        conn.unregister("curve_frame")
    return curve.height


@with_connection()
def save_evaluation(conn, evaluation: EvaluationRow) -> str:
    conn.execute("""
        INSERT OR REPLACE INTO evaluations (
            run_id, episodes, avg_reward, avg_rate_bps_hz, avg_user_rate,
            avg_sensing_snr_db, avg_sensing_snr_db_alt, max_sensing_snr_db, feasible_fraction
        )
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)
    """, [
        evaluation.run_id, evaluation.episodes, evaluation.avg_reward, evaluation.avg_rate_bps_hz,
        evaluation.avg_user_rate, evaluation.avg_sensing_snr_db, evaluation.avg_sensing_snr_db_alt,
        evaluation.max_sensing_snr_db, evaluation.feasible_fraction,
    ])
    return evaluation.run_id


@with_connection(read_only=True)
def get_runs(conn, status: Optional[str] = None) -> List[RunRow]:
    """
    Get all runs, optionally filtered by status.

    Args:
        status: "ok" or "failed"

    Returns:
        List of RunRow objects ordered by algorithm, deployment, power and seed
    """
    query = "SELECT * FROM runs"
    params = []
    if status is not None:
        query += " WHERE status = ?"
        params.append(status)
    query += " ORDER BY algorithm, deployment, per_antenna_power_w DESC, seed"

    cursor = conn.execute(query, params)
    columns = [d[0] for d in cursor.description]
    return [RunRow.from_dict(dict(zip(columns, row))) for row in cursor.fetchall()]


@with_connection(read_only=True)
def get_evaluation(conn, run_id: str) -> Optional[EvaluationRow]:
    cursor = conn.execute("SELECT * FROM evaluations WHERE run_id = ?", [run_id])
    row = cursor.fetchone()
    if row is None:
        return None
    columns = [d[0] for d in cursor.description]
    return EvaluationRow.from_dict(dict(zip(columns, row)))


@with_connection(read_only=True)
def get_episode_frame(conn, run_ids: Optional[Sequence[str]] = None) -> pl.DataFrame:
    """Learning-curve rows joined with their run keys."""
    query = """
        SELECT r.run_id, r.algorithm, r.deployment, r.per_antenna_power_w, r.seed,
               e.episode, e.reward, e.sum_rate, e.min_sensing_snr_db, e.energy_used
        FROM episodes e
        JOIN runs r ON r.run_id = e.run_id
    """
    params: List = []
    if run_ids:
        query += f" WHERE e.run_id IN ({', '.join('?' for _ in run_ids)})"
        params.extend(run_ids)
    query += " ORDER BY r.run_id, e.episode"
    return conn.execute(query, params).pl()


@with_connection(read_only=True)
def get_summary(conn, run_ids: Optional[Sequence[str]] = None) -> List[SummaryRow]:
    """
    Aggregate successful runs by algorithm, deployment and per-antenna power.

    Args:
        run_ids: Restrict the summary to these runs

    Returns:
        One SummaryRow per group, with seed means of the final-window reward and
        of the evaluation metrics
    """
    params: List = []
    where = "r.status = 'ok'"
    if run_ids:
        where += f" AND r.run_id IN ({', '.join('?' for _ in run_ids)})"
        params.extend(run_ids)
    cursor = conn.execute(f"""
        SELECT
            r.algorithm,
            r.deployment,
            r.per_antenna_power_w,
            COUNT(*) AS seeds,
            AVG(r.final_reward) AS final_reward_mean,
            STDDEV_SAMP(r.final_reward) AS final_reward_std,
            AVG(v.avg_rate_bps_hz) AS avg_rate_bps_hz,
            AVG(v.avg_user_rate) AS avg_user_rate,
            AVG(v.avg_sensing_snr_db) AS avg_sensing_snr_db,
            AVG(v.avg_sensing_snr_db_alt) AS avg_sensing_snr_db_alt,
            MAX(v.max_sensing_snr_db) AS max_sensing_snr_db
        FROM runs r
        LEFT JOIN evaluations v ON v.run_id = r.run_id
        WHERE {where}
        GROUP BY r.algorithm, r.deployment, r.per_antenna_power_w
        ORDER BY r.per_antenna_power_w DESC, r.algorithm, r.deployment
    """, params)
    columns = [d[0] for d in cursor.description]
    return [SummaryRow.from_dict(dict(zip(columns, row))) for row in cursor.fetchall()]
