"""Utility functions for omqa.

This module provides common helpers used across the toolkit, including
file digests, named random sub-streams and plain-text table formatting.
"""

import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def file_digest(path: str | Path, chunk_size: int = 1 << 16) -> str:
    """
    Compute the sha256 digest of a file.

    Args:
        path: File to hash
        chunk_size: Read size in bytes

    Returns:
        Hex digest prefixed with ``sha256:``
    """
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            h.update(chunk)
    return f"sha256:{h.hexdigest()}"


def stable_hash(name: str) -> int:
    """32-bit hash of a string that does not depend on PYTHONHASHSEED."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")


def sub_rng(seed: int, *names: str) -> np.random.Generator:
    """
    Derive an independent generator for a named stage of a run.

    The same (seed, names) pair always yields the same stream, so stages can
    run in any order or in parallel and still produce identical output.

    Args:
        seed: Base seed of the run
        names: Stage path, e.g. ("sample", "2p")

    Returns:
        A seeded ``numpy.random.Generator``
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [stable_hash(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def as_rng(seed_or_rng: int | np.random.Generator) -> np.random.Generator:
    """Accept either a seed or an existing generator."""
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def format_number(value: float, digits: int = 4) -> str:
    """Format metrics with a fixed number of decimals; integers stay integers."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{value:.{digits}f}"


def format_table(headers: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    """
    Render rows as a left-aligned plain-text table.

    Args:
        headers: Column titles
        rows: Row values (formatted with ``format_number`` when numeric)

    Returns:
        Table text with a dashed rule under the header
    """
    cells = [list(headers)]
    for row in rows:
        cells.append(
            [
                format_number(v) if isinstance(v, (int, float, np.number)) else str(v)
                for v in row
            ]
        )
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cells[0], widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in cells[1:]:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines)


def truncate_text(text: str, max_length: int = 200) -> str:
    """Shorten text for log previews."""
    if not text or len(text) <= max_length:
        return text or ""
    return text[: max_length - 3] + "..."
