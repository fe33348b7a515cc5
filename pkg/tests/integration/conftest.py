"""Integration test fixtures for the omqa command line.

Provides:
- ``isolated_ledger`` -- autouse fixture routing every run to a fresh ledger
  (see ``tmp_db`` in the root ``tests/conftest.py``).
- ``campus_files`` -- copies of the running-example files in a temp directory.
- ``omqa`` -- runs the CLI in-process and returns ``(exit_code, stdout, stderr)``.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

import pytest

from conftest import CAMPUS_KG, CAMPUS_MANIFEST, CAMPUS_ONTO


@dataclass
class CampusFiles:
    kg: Path
    onto: Path
    manifest: Path


@pytest.fixture(autouse=True)
def isolated_ledger(tmp_db):
    yield tmp_db


@pytest.fixture()
def campus_files(tmp_path) -> CampusFiles:
    target = tmp_path / "campus"
    target.mkdir()
    return CampusFiles(
        kg=Path(shutil.copy(CAMPUS_KG, target)),
        onto=Path(shutil.copy(CAMPUS_ONTO, target)),
        manifest=Path(shutil.copy(CAMPUS_MANIFEST, target)),
    )


@pytest.fixture()
def omqa(capsys):
    """Call ``omqa.dispatch`` with string arguments."""
    from omqa import dispatch

    def run(*args):
        capsys.readouterr()
        code = dispatch([str(a) for a in args])
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    return run
