"""Constants module for omqa.

This module centralizes defaults, limits and format constants used throughout
the toolkit. Paths and environment-driven settings live in ``config``.
"""

from dataclasses import dataclass
from typing import Final


@dataclass(frozen=True)
class TrainDefaults:
    """Full-scale training hyperparameters."""

    DIM: Final[int] = 400
    LEARNING_RATE: Final[float] = 1e-4
    BATCH_SIZE: Final[int] = 512
    MAX_STEPS: Final[int] = 150_000
    K_NEGATIVES: Final[int] = 32
    EVAL_EVERY: Final[int] = 5_000
    PATIENCE: Final[int] = 5
    GAMMA: Final[float] = 12.0
    PREFETCH_DEPTH: Final[int] = 4


@dataclass(frozen=True)
class DeskScale:
    """Preset overrides for desk-scale runs."""

    DIM: Final[int] = 32
    MAX_STEPS: Final[int] = 20_000
    BATCH_SIZE: Final[int] = 128
    GAMMA: Final[float] = 4.0
    EVAL_EVERY: Final[int] = 2_000
    LEARNING_RATE: Final[float] = 0.25


@dataclass(frozen=True)
class ModelConstants:
    """Box model numerics."""

    INIT_SCALE: Final[float] = 0.5  # divided by sqrt(d)
    LOG_CLAMP: Final[float] = 1e-12
    VARIANTS: Final[tuple[str, ...]] = ("q2b", "o2b")


@dataclass(frozen=True)
class RewriteDefaults:
    """Rewriting depths."""

    GEN_DEPTH: Final[int] = 2
    SPEC_DEPTH: Final[int] = 2
    FRESH_PREFIX: Final[str] = "Z"


@dataclass(frozen=True)
class SplitDefaults:
    """Nested split settings."""

    RATIO: Final[float] = 0.1


@dataclass(frozen=True)
class SamplerDefaults:
    """Query sampling settings."""

    ANCHOR_FRACTION: Final[float] = 0.5
    RETRY_FACTOR: Final[int] = 50
    DELTA_PREFERENCE: Final[float] = 0.5
    MAX_ANCHOR_TUPLES: Final[int] = 200_000
    STRATEGIES: Final[tuple[str, ...]] = ("plain", "gen", "spec", "onto")


@dataclass(frozen=True)
class EvalConstants:
    """Ranking metrics."""

    HITS_KS: Final[tuple[int, ...]] = (1, 3, 10)
    CASES: Final[tuple[str, ...]] = ("A", "B", "C")
    AVERAGING: Final[str] = "per hard answer"
    TIE_POLICY: Final[str] = "pessimistic (ties rank ahead of the answer)"


@dataclass(frozen=True)
class CheckpointFormat:
    """Binary checkpoint layout."""

    MAGIC: Final[bytes] = b"OMQA-CKPT\x01"
    VERSION: Final[int] = 1
    LENGTH_BYTES: Final[int] = 4
    DTYPE: Final[str] = "<f4"


@dataclass(frozen=True)
class ErrorLogConstants:
    """Error ledger limits."""

    MAX_CONTEXT_PREVIEW: Final[int] = 200
    MAX_MESSAGE_LENGTH: Final[int] = 2000
    MAX_TRACE_LENGTH: Final[int] = 10_000


@dataclass(frozen=True)
class ExitCodes:
    """Process exit codes."""

    OK: Final[int] = 0
    USAGE: Final[int] = 1
    DATA: Final[int] = 2


TRAIN_DEFAULTS = TrainDefaults()
DESK_SCALE = DeskScale()
MODEL_CONSTANTS = ModelConstants()
REWRITE_DEFAULTS = RewriteDefaults()
SPLIT_DEFAULTS = SplitDefaults()
SAMPLER_DEFAULTS = SamplerDefaults()
EVAL_CONSTANTS = EvalConstants()
CHECKPOINT_FORMAT = CheckpointFormat()
EXIT_CODES = ExitCodes()
ERROR_LOG_CONSTANTS = ErrorLogConstants()

TYPE_RELATION: Final[str] = "type"

TRAIN_SHAPES: Final[tuple[str, ...]] = ("1p", "2p", "3p", "2i", "3i")
ALL_SHAPES: Final[tuple[str, ...]] = (
    "1p",
    "2p",
    "3p",
    "2i",
    "3i",
    "ip",
    "pi",
    "2u",
    "up",
)
