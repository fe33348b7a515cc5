"""Configuration module for omqa."""

import os
import logging
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path
from dotenv import load_dotenv

from errors import ConfigError
import strings as S

# Load environment variables from .env file
load_dotenv()

# --- Logging Setup ---
LOG_DIR = os.environ.get("OMQA_LOG_PATH", "logs")
os.makedirs(LOG_DIR, exist_ok=True)

# Log rotation settings
LOG_MAX_BYTES = 10 * 1024 * 1024  # 10 MB per file
LOG_BACKUP_COUNT = 5

LOG_LEVEL = os.environ.get("OMQA_LOG_LEVEL", "INFO").upper()

# Set up logging with UTC timestamps
formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")
formatter.converter = lambda *args: datetime.now(timezone.utc).timetuple()

file_handler = RotatingFileHandler(
    os.path.join(LOG_DIR, "omqa.log"),
    maxBytes=LOG_MAX_BYTES,
    backupCount=LOG_BACKUP_COUNT,
)
file_handler.setFormatter(formatter)

# Console handler writes to stderr so results on stdout stay clean
console_handler = logging.StreamHandler()
console_handler.setFormatter(formatter)

logging.basicConfig(
    level=getattr(logging, LOG_LEVEL, logging.INFO),
    handlers=[file_handler, console_handler],
)
logger = logging.getLogger("omqa")

# --- Configuration ---
OMQA_DB_PATH = os.environ.get("OMQA_DB_PATH", "data")
OMQA_LOG_PATH = LOG_DIR

# SQLite run ledger in the chosen database directory
DATABASE_FILE = os.path.join(OMQA_DB_PATH, "runs.db")

OMQA_THREADS = os.environ.get("OMQA_THREADS")
OMQA_SEED = os.environ.get("OMQA_SEED", "0")

FIXTURES_DIR = Path(__file__).parent / "fixtures"


def _parse_positive_int(value: str | int, message: str) -> int:
    try:
        parsed = int(value)
    except (TypeError, ValueError):
        raise ConfigError(message) from None
    if parsed <= 0:
        raise ConfigError(message)
    return parsed


def resolve_threads(flag: int | None = None, deterministic: bool = False) -> int:
    """
    Resolve the worker thread count.

    Args:
        flag: Value of ``--threads`` (wins over the environment)
        deterministic: If True, always returns 1

    Returns:
        Positive thread count
    """
    if deterministic:
        return 1
    if flag is not None:
        return _parse_positive_int(flag, S.THREADS_INVALID.format(value=flag))
    if OMQA_THREADS:
        return _parse_positive_int(
            OMQA_THREADS, S.THREADS_INVALID.format(value=OMQA_THREADS)
        )
    return os.cpu_count() or 1


def default_seed() -> int:
    """Seed used when ``--seed`` is not given."""
    try:
        return int(OMQA_SEED)
    except ValueError:
        raise ConfigError(
            S.CONFIG_BAD_VALUE.format(key="OMQA_SEED", value=OMQA_SEED)
        ) from None


def read_key_value_file(path: str | Path) -> dict[str, str]:
    """
    Read a line-based ``key = value`` file (the run.cfg format).

    Blank lines and ``#`` comments are ignored, keys are lower-cased and
    later duplicates override earlier ones.

    Args:
        path: File to read

    Returns:
        Mapping of keys to raw string values
    """
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: " + S.KEY_VALUE_LINE.format(line=line))
        key, value = line.split("=", 1)
        values[key.strip().lower().replace("-", "_")] = value.strip()
    return values


def validate_config() -> bool:
    """Validate environment-driven settings; logs the first problem found."""
    if not isinstance(logging.getLevelName(LOG_LEVEL), int):
        logger.error(f"Error: OMQA_LOG_LEVEL '{LOG_LEVEL}' is not a logging level.")
        return False
    try:
        resolve_threads()
        default_seed()
    except ConfigError as e:
        logger.error(f"Error: {e}")
        return False
    return True
