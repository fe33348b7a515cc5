"""Shared helpers for the command implementations: file loading, output and run bookkeeping."""

from __future__ import annotations

import json
import sys
import traceback
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

from config import logger
from constants import ALL_SHAPES, ERROR_LOG_CONSTANTS, EXIT_CODES
from database import log_error_to_db, record_run_end, record_run_start
from errors import ConfigError, OmqaError
from kg import KnowledgeGraph, SymbolTable, load_triples
from ontology import Ontology, load_ontology
from query import QueryRecord, get_shape, read_queries, write_queries
import strings as S
from utils import truncate_text


@dataclass
class RunContext:
    """Global options shared by every subcommand."""

    seed: int = 0
    threads: int = 1
    deterministic: bool = False
    verbose: bool = False
    run_id: str | None = None
    extra: dict = field(default_factory=dict)


def load_graph(path: str | Path, symbols: SymbolTable | None = None) -> KnowledgeGraph:
    with open(path, "rb") as f:
        return load_triples(f, symbols)


def load_onto(path: str | Path | None, symbols: SymbolTable | None = None) -> Ontology:
    """The ontology at ``path``, or the empty ontology when no path is given."""
    if path is None:
        return Ontology()
    with open(path, "rb") as f:
        return load_ontology(f, symbols)


def load_queries(path: str | Path) -> list[QueryRecord]:
    with open(path, encoding="utf-8") as f:
        return read_queries(f)


def parse_shapes(text: str | None, default: Iterable[str] = ALL_SHAPES) -> list[str]:
    if not text:
        return list(default)
    names = [s.strip() for s in text.split(",") if s.strip()]
    for name in names:
        get_shape(name)
    return names


def parse_depth(text: str | int | None, default: int) -> int | None:
    """Non-negative depth, or None for ``fix`` (run to fixpoint)."""
    if text is None:
        return default
    if isinstance(text, str) and text.strip().lower() == "fix":
        return None
    try:
        depth = int(text)
    except (TypeError, ValueError):
        raise ConfigError(S.DEPTH_INVALID.format(value=text)) from None
    if depth < 0:
        raise ConfigError(S.DEPTH_INVALID.format(value=text))
    return depth


@contextmanager
def open_output(path: str | Path | None) -> Iterator[TextIO]:
    """Text stream for ``path``; ``-`` or None means standard output."""
    if path is None or str(path) == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="\n") as f:
        yield f


def save_queries(records: Iterable[QueryRecord], path: str | Path | None, what: str = "queries") -> int:
    with open_output(path) as stream:
        count = write_queries(records, stream)
    if path is not None and str(path) != "-":
        logger.info(S.WROTE.format(what=f"{count} {what}", path=path))
    return count


def log_error_with_context(error: Exception, context_info: dict | None = None, run_id: str | None = None) -> None:
    """Log an error with its context and mirror it into the run ledger."""
    details = {"error_type": type(error).__name__, "error_message": str(error)}
    if context_info:
        details.update(context_info)

    log_parts = [f"{details['error_type']}: {details['error_message']}"]
    for key, value in details.items():
        if key not in ("error_type", "error_message"):
            log_parts.append(f"  {key}: {truncate_text(str(value), ERROR_LOG_CONSTANTS.MAX_CONTEXT_PREVIEW)}")
    logger.error("\n".join(log_parts))

    log_error_to_db(
        error_type=details["error_type"],
        error_message=details["error_message"],
        run_id=run_id,
        operation=(context_info or {}).get("operation", "unknown"),
        stack_trace=traceback.format_exc(),
    )


@contextmanager
def recorded_run(command: str, config: dict) -> Iterator[str | None]:
    """Record a run in the ledger; yields the run id (None if the ledger is unavailable)."""
    run_id = record_run_start(command, config)
    logger.info(S.RUN_STARTED.format(command=command, config=json.dumps(config, sort_keys=True, default=str)))
    code = 0
    try:
        yield run_id
    except BaseException as e:
        code = e.exit_code if isinstance(e, OmqaError) else EXIT_CODES.USAGE
        raise
    finally:
        if run_id is not None:
            record_run_end(run_id, code)
        logger.info(S.RUN_FINISHED.format(command=command, code=code))
