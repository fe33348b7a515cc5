"""
Subcommand implementations for the omqa CLI.

This package contains the command bodies split by functionality:
- common: Shared helpers (file loading, output streams, run ledger, error logging)
- reasoning: closure, rewrite, split and stats
- sampling: training-query sampling and evaluation-set construction
- learning: training, evaluation, the desk-scale demo, generation and history
"""

from __future__ import annotations

# Re-export common utilities
from .common import (
    RunContext,
    log_error_with_context,
    parse_depth,
    parse_shapes,
    recorded_run,
)

# Re-export symbolic commands
from .reasoning import (
    closure_command,
    rewrite_command,
    split_command,
    stats_command,
)

# Re-export sampling commands
from .sampling import (
    build_eval_command,
    sample_command,
)

# Re-export learning commands
from .learning import (
    demo_command,
    eval_command,
    generate_command,
    history_command,
    train_command,
)

__all__ = [
    # Common utilities
    "RunContext",
    "log_error_with_context",
    "parse_depth",
    "parse_shapes",
    "recorded_run",
    # Reasoning
    "closure_command",
    "rewrite_command",
    "split_command",
    "stats_command",
    # Sampling
    "build_eval_command",
    "sample_command",
    # Learning
    "demo_command",
    "eval_command",
    "generate_command",
    "history_command",
    "train_command",
]
