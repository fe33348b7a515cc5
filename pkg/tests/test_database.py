"""Tests for the SQLite run ledger."""

from __future__ import annotations

import json

import database
from constants import ERROR_LOG_CONSTANTS


def test_init_db_is_idempotent(tmp_db) -> None:
    assert tmp_db.exists()
    assert database.init_db() is True


def test_run_round_trip(tmp_db) -> None:
    run_id = database.record_run_start("closure", {"kg": "campus.tsv", "seed": 0})
    assert database.record_run_end(run_id, 0) is True

    (run,) = database.get_recent_runs()
    assert run["run_id"] == run_id
    assert run["command"] == "closure"
    assert run["exit_code"] == 0
    assert run["finished_utc"] is not None
    assert json.loads(run["config_json"]) == {"kg": "campus.tsv", "seed": 0}


def test_recent_runs_newest_first(tmp_db) -> None:
    ids = [database.record_run_start(command, {}) for command in ("split", "sample", "train")]
    runs = database.get_recent_runs(limit=2)
    assert [r["run_id"] for r in runs] == ids[::-1][:2]
    assert runs[0]["exit_code"] is None


def test_eval_history_in_step_order(tmp_db) -> None:
    run_id = database.record_run_start("train", {})
    for step, hits3 in ((20, 0.5), (10, 0.25)):
        metrics = {"hits@1": hits3 / 2, "hits@3": hits3, "hits@10": 1.0, "mrr": hits3}
        assert database.record_evaluation(run_id, step, metrics, loss=1.5) is not None

    history = database.get_eval_history(run_id)
    assert [h["step"] for h in history] == [10, 20]
    assert history[1]["hits3"] == 0.5
    assert history[0]["loss"] == 1.5
    assert database.get_eval_history("unknown") == []


def test_errors_are_truncated(tmp_db) -> None:
    message = "x" * (ERROR_LOG_CONSTANTS.MAX_MESSAGE_LENGTH + 50)
    assert database.log_error_to_db("ParseError", message, run_id="r1", operation="closure") is True

    (entry,) = database.get_recent_errors()
    assert entry["error_type"] == "ParseError"
    assert len(entry["error_message"]) == ERROR_LOG_CONSTANTS.MAX_MESSAGE_LENGTH
    assert entry["operation"] == "closure"


def test_unavailable_ledger_does_not_block_runs(tmp_db, tmp_path, monkeypatch) -> None:
    blocked = tmp_path / "blocked"
    blocked.mkdir()
    monkeypatch.setattr(database._db, "database_file", str(blocked))

    run_id = database.record_run_start("stats", {})
    assert run_id
    assert database.record_run_end(run_id, 0) is False
    assert database.get_recent_runs() == []
