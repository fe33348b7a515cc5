"""Run ledger for omqa: records runs, validation history and errors in SQLite."""

import json
import os
import sqlite3
import threading
import uuid
from contextlib import contextmanager
from datetime import datetime, timezone

from config import (
    DATABASE_FILE,
    OMQA_LOG_PATH,
    logger,
)
from constants import ERROR_LOG_CONSTANTS


class DatabaseManager:
    """Thread-safe database manager with proper connection handling."""

    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if not hasattr(self, "initialized") or not self.initialized:
            self.initialized = True
            self.database_file = DATABASE_FILE
            os.makedirs(os.path.dirname(self.database_file) or ".", exist_ok=True)

    @contextmanager
    def get_connection(self, read_only: bool = False):
        """Context manager for database connections with proper error handling.

        WAL mode is set once in init_db() since it persists across connections.
        """
        connection = None
        try:
            connection = sqlite3.connect(self.database_file, timeout=30.0)
            connection.row_factory = sqlite3.Row
            connection.execute("PRAGMA synchronous=NORMAL")
            connection.execute("PRAGMA temp_store=MEMORY")
            yield connection
            if not read_only:
                connection.commit()
        except sqlite3.Error as e:
            if connection:
                connection.rollback()
            logger.error(f"Database error: {e}")
            self._log_error_to_file(f"Database error: {e}")
            raise
        finally:
            if connection:
                connection.close()

    def _log_error_to_file(self, error_msg):
        """Fallback logging if database operations fail"""
        try:
            os.makedirs(OMQA_LOG_PATH, exist_ok=True)
            with open(
                os.path.join(OMQA_LOG_PATH, "db_errors.log"), "a", encoding="utf-8"
            ) as f:
                timestamp = datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S")
                f.write(f"[{timestamp}] DATABASE ERROR: {error_msg}\n")
        except Exception as ex:
            logger.critical(
                f"Critical error: Could not write to error log file. Original DB error: {error_msg}. Log writing error: {ex}"
            )


# Module-level singleton instance
_db = DatabaseManager()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def init_db() -> bool:
    """Initialize the ledger tables and indexes."""
    try:
        with _db.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute("PRAGMA journal_mode=WAL")

            cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL UNIQUE,
                command TEXT NOT NULL,
                started_utc TEXT NOT NULL,
                finished_utc TEXT,
                exit_code INTEGER,
                config_json TEXT NOT NULL
            )
            """)

            cursor.execute("""
            CREATE TABLE IF NOT EXISTS eval_history (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                step INTEGER NOT NULL,
                hits1 REAL NOT NULL,
                hits3 REAL NOT NULL,
                hits10 REAL NOT NULL,
                mrr REAL NOT NULL,
                loss REAL,
                timestamp_utc TEXT NOT NULL
            )
            """)

            cursor.execute("""
            CREATE TABLE IF NOT EXISTS errors_log (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp_utc TEXT NOT NULL,
                run_id TEXT,
                error_type TEXT NOT NULL,
                error_message TEXT NOT NULL,
                operation TEXT,
                stack_trace TEXT
            )
            """)

            cursor.execute(
                "CREATE INDEX IF NOT EXISTS idx_runs_started ON runs(started_utc)"
            )
            cursor.execute(
                "CREATE INDEX IF NOT EXISTS idx_eval_history_run ON eval_history(run_id)"
            )
            cursor.execute(
                "CREATE INDEX IF NOT EXISTS idx_errors_log_timestamp ON errors_log(timestamp_utc)"
            )

            logger.debug("Run ledger initialized.")
            return True
    except sqlite3.Error as e:
        logger.error(f"Database initialization error: {e}")
        return False
    except OSError as e:
        logger.error(f"Unexpected error during database initialization: {e}")
        return False


def record_run_start(command: str, config: dict) -> str:
    """Insert a run row and return its run id.

    The run id is returned even when the ledger is unavailable so the
    pipeline never depends on the database.
    """
    run_id = uuid.uuid4().hex[:12]
    try:
        with _db.get_connection() as conn:
            conn.execute(
                """
            INSERT INTO runs (run_id, command, started_utc, config_json)
            VALUES (?, ?, ?, ?)
            """,
                (run_id, command, _now(), json.dumps(config, sort_keys=True, default=str)),
            )
    except sqlite3.Error as e:
        logger.warning(f"Could not record run start for {command}: {e}")
    return run_id


def record_run_end(run_id: str, exit_code: int) -> bool:
    """Stamp the finish time and exit code of a run."""
    try:
        with _db.get_connection() as conn:
            conn.execute(
                "UPDATE runs SET finished_utc = ?, exit_code = ? WHERE run_id = ?",
                (_now(), exit_code, run_id),
            )
        return True
    except sqlite3.Error as e:
        logger.warning(f"Could not record run end for {run_id}: {e}")
        return False


def record_evaluation(
    run_id: str,
    step: int,
    metrics: dict[str, float],
    loss: float | None = None,
) -> int | None:
    """Append one validation result to the history of a run.

    Args:
        run_id: Ledger run id
        step: Training step of the evaluation
        metrics: Mapping with keys ``hits@1``, ``hits@3``, ``hits@10``, ``mrr``
        loss: Mean training loss since the previous evaluation

    Returns:
        The inserted row ID, or None if logging failed
    """
    try:
        with _db.get_connection() as conn:
            cursor = conn.cursor()
            cursor.execute(
                """
            INSERT INTO eval_history (run_id, step, hits1, hits3, hits10, mrr, loss, timestamp_utc)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?)
            """,
                (
                    run_id,
                    step,
                    metrics["hits@1"],
                    metrics["hits@3"],
                    metrics["hits@10"],
                    metrics["mrr"],
                    loss,
                    _now(),
                ),
            )
            return cursor.lastrowid
    except sqlite3.Error as e:
        logger.error(f"Error recording evaluation for run {run_id}: {e}")
        return None


def log_error_to_db(
    error_type: str,
    error_message: str,
    run_id: str | None = None,
    operation: str | None = None,
    stack_trace: str | None = None,
) -> bool:
    """Store an error for later inspection with ``omqa history``."""
    try:
        with _db.get_connection() as conn:
            conn.execute(
                """
            INSERT INTO errors_log (timestamp_utc, run_id, error_type, error_message, operation, stack_trace)
            VALUES (?, ?, ?, ?, ?, ?)
            """,
                (
                    _now(),
                    run_id,
                    error_type,
                    error_message[: ERROR_LOG_CONSTANTS.MAX_MESSAGE_LENGTH],
                    operation,
                    stack_trace[: ERROR_LOG_CONSTANTS.MAX_TRACE_LENGTH] if stack_trace else None,
                ),
            )
        return True
    except sqlite3.Error as e:
        logger.error(f"Error logging error to database: {e}")
        return False


def get_recent_runs(limit: int = 20) -> list[dict]:
    """Most recent runs first."""
    try:
        with _db.get_connection(read_only=True) as conn:
            rows = conn.execute(
                """
            SELECT run_id, command, started_utc, finished_utc, exit_code, config_json
            FROM runs
            ORDER BY id DESC
            LIMIT ?
            """,
                (limit,),
            ).fetchall()
            return [dict(row) for row in rows]
    except sqlite3.Error as e:
        logger.error(f"Error reading runs: {e}")
        return []


def get_eval_history(run_id: str) -> list[dict]:
    """Validation history of one run in step order."""
    try:
        with _db.get_connection(read_only=True) as conn:
            rows = conn.execute(
                """
            SELECT step, hits1, hits3, hits10, mrr, loss
            FROM eval_history
            WHERE run_id = ?
            ORDER BY step ASC, id ASC
            """,
                (run_id,),
            ).fetchall()
            return [dict(row) for row in rows]
    except sqlite3.Error as e:
        logger.error(f"Error reading evaluation history for {run_id}: {e}")
        return []


def get_recent_errors(limit: int = 20) -> list[dict]:
    """Most recent errors first."""
    try:
        with _db.get_connection(read_only=True) as conn:
            rows = conn.execute(
                """
            SELECT timestamp_utc, run_id, error_type, error_message, operation
            FROM errors_log
            ORDER BY id DESC
            LIMIT ?
            """,
                (limit,),
            ).fetchall()
            return [dict(row) for row in rows]
    except sqlite3.Error as e:
        logger.error(f"Error reading errors log: {e}")
        return []
