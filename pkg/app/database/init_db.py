import logging
from pathlib import Path
from typing import Union

import duckdb

logger = logging.getLogger(__name__)

DB_FILENAME = "results.duckdb"


def initialize_database(db_path: Union[str, Path]) -> Path:
    """Create the results database and its tables if they do not exist yet."""
    db_path = Path(db_path)
    db_path.parent.mkdir(parents=True, exist_ok=True)
    existed = db_path.exists()

    conn = duckdb.connect(str(db_path))
    try:
        create_tables(conn)
    finally:
        conn.close()

    if existed:
        logger.debug("Results database already exists at %s", db_path)
    else:
        logger.info("Results database initialized at %s", db_path)
    return db_path


def create_tables(conn):
    """Create the database tables."""
    # One row per (algorithm, deployment, power cap, seed) run
    conn.execute("""
    CREATE TABLE IF NOT EXISTS runs (
        run_id VARCHAR PRIMARY KEY,
        algorithm VARCHAR NOT NULL,
        deployment VARCHAR NOT NULL,
        per_antenna_power_w DOUBLE NOT NULL,
        seed INTEGER NOT NULL,
        scenario_hash VARCHAR NOT NULL,
        status VARCHAR DEFAULT 'ok',
        error VARCHAR,
        episodes INTEGER DEFAULT 0,
        parameter_count INTEGER DEFAULT 0,
        final_reward DOUBLE,
        checkpoint VARCHAR,
        curve_csv VARCHAR
    )
    """)

    # Learning curve rows
    conn.execute("""
    CREATE TABLE IF NOT EXISTS episodes (
        run_id VARCHAR NOT NULL,
        episode INTEGER NOT NULL,
        reward DOUBLE,
        sum_rate DOUBLE,
        min_sensing_snr_db DOUBLE,
        energy_used DOUBLE,
        PRIMARY KEY (run_id, episode)
    )
    """)

    # Greedy-policy evaluation of a finished run
    conn.execute("""
    CREATE TABLE IF NOT EXISTS evaluations (
        run_id VARCHAR PRIMARY KEY,
        episodes INTEGER NOT NULL,
        avg_reward DOUBLE,
        avg_rate_bps_hz DOUBLE,
        avg_user_rate DOUBLE,
        avg_sensing_snr_db DOUBLE,
        avg_sensing_snr_db_alt DOUBLE,
        max_sensing_snr_db DOUBLE,
        feasible_fraction DOUBLE
    )
    """)
