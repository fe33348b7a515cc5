"""Test configuration shared by the unit, integration and slow suites."""

from __future__ import annotations

import os
import sys
import tempfile
from pathlib import Path

import pytest


# ---------------------------------------------------------------------------
# Keep logs and the run ledger out of the working tree.
# This must happen *before* any application code is imported.
# ---------------------------------------------------------------------------

_SCRATCH = tempfile.mkdtemp(prefix="omqa-tests-")
os.environ.setdefault("OMQA_LOG_PATH", os.path.join(_SCRATCH, "logs"))
os.environ.setdefault("OMQA_DB_PATH", os.path.join(_SCRATCH, "data"))
os.environ.pop("OMQA_THREADS", None)

# ---------------------------------------------------------------------------
# Ensure project root is on sys.path
# ---------------------------------------------------------------------------

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

FIXTURES_DIR = ROOT_DIR / "fixtures"
CAMPUS_KG = FIXTURES_DIR / "fig1.tsv"
CAMPUS_ONTO = FIXTURES_DIR / "fig1.onto"
CAMPUS_MANIFEST = FIXTURES_DIR / "fig1.manifest"


# ---------------------------------------------------------------------------
# Shared test helpers
# ---------------------------------------------------------------------------

def load_campus(symbols=None):
    """Running-example graph and ontology over one symbol table."""
    from kg import SymbolTable, load_triples
    from ontology import load_ontology

    symbols = symbols if symbols is not None else SymbolTable()
    with open(CAMPUS_KG, "rb") as f:
        g = load_triples(f, symbols)
    with open(CAMPUS_ONTO, "rb") as f:
        o = load_ontology(f, symbols)
    return g, o


def graph_from(lines, symbols=None):
    """Graph from ``head relation tail`` strings (whitespace separated)."""
    from kg import load_triples

    data = ["\t".join(line.split()).encode("utf-8") + b"\n" for line in lines]
    return load_triples(data, symbols)


def ontology_from(lines, symbols=None):
    from ontology import load_ontology

    return load_ontology([line.encode("utf-8") + b"\n" for line in lines], symbols)


def names(g, ids):
    """Node ids to names, as a set."""
    return {g.symbols.node_name(i) for i in ids}


def cq(*atoms, answer="X"):
    """Query from ``(head, relation, tail)`` tuples; ``?V`` marks a variable."""
    from query import Atom, ConjunctiveQuery, Var, parse_term

    return ConjunctiveQuery(
        tuple(Atom(r, parse_term(h), parse_term(t)) for h, r, t in atoms),
        Var(answer),
    )


def trial_counts(quick: int, full: int) -> list:
    """Parametrize a randomized check: a quick count always, the full count under the slow marker."""
    return [pytest.param(quick, id=f"{quick}-trials"), pytest.param(full, id=f"{full}-trials", marks=pytest.mark.slow)]


def read_manifest(path=CAMPUS_MANIFEST) -> dict[str, int]:
    from config import read_key_value_file

    return {k: int(v) for k, v in read_key_value_file(path).items()}


@pytest.fixture()
def campus():
    """(graph, ontology) of the running example."""
    return load_campus()


@pytest.fixture()
def campus_graph(campus):
    return campus[0]


@pytest.fixture()
def campus_onto(campus):
    return campus[1]


@pytest.fixture()
def tmp_db(tmp_path, monkeypatch):
    """Fresh run ledger in a temporary directory.

    Monkeypatches ``database.DATABASE_FILE`` and resets the
    ``DatabaseManager`` singleton so it picks up the new path.

    Yields the ``pathlib.Path`` to the temporary database file.
    """
    import database

    original = database.DATABASE_FILE
    db_file = str(tmp_path / "runs.db")
    monkeypatch.setattr(database, "DATABASE_FILE", db_file)

    database.DatabaseManager._instance = None
    database._db = database.DatabaseManager()
    assert database.init_db() is True, "init_db() must succeed for the temp ledger"

    yield tmp_path / "runs.db"

    instance = database.DatabaseManager._instance
    database.DatabaseManager._instance = None
    if instance is not None:
        instance.initialized = False
    monkeypatch.setattr(database, "DATABASE_FILE", original)
    database._db = database.DatabaseManager()
