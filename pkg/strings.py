"""
Centralized message strings for omqa.
All diagnostics, log templates and table headers.

Modules format these with ``.format(...)``; keep placeholders in sync.
"""

from typing import Final


# =============================================================================
# INPUT PARSING
# =============================================================================

TRIPLE_FIELD_COUNT: Final[str] = (
    "expected 3 tab-separated fields, found {count}"
)
CONCEPT_AS_HEAD: Final[str] = "concept '{name}' cannot be the head of a triple"
ENTITY_AS_CONCEPT: Final[str] = (
    "'{name}' is an entity and cannot be the object of '{relation}'"
)
CONCEPT_AS_ENTITY: Final[str] = (
    "'{name}' is a concept and cannot be used as an entity"
)
UNKNOWN_SYMBOL: Final[str] = "unknown {kind} '{name}'"
UNKNOWN_KEYWORD: Final[str] = "unknown axiom keyword '{keyword}'"
WRONG_ARITY: Final[str] = "'{keyword}' takes {expected} arguments, found {found}"
TYPE_IN_AXIOM: Final[str] = "the reserved relation 'type' cannot appear in axioms"
BAD_QUERY_RECORD: Final[str] = "malformed query record: {reason}"
KEY_VALUE_LINE: Final[str] = "expected 'key = value', found '{line}'"


# =============================================================================
# QUERIES AND SHAPES
# =============================================================================

UNSUPPORTED_SHAPE: Final[str] = "query does not match a supported shape: {query}"
UNKNOWN_SHAPE: Final[str] = "unknown shape '{shape}'"
LABELING_MISSING: Final[str] = "labeling leaves {what} '{item}' unassigned"
LABELING_DOMAIN: Final[str] = "labeling maps {what} '{item}' outside its domain: {value}"
ANSWER_VAR_MISSING: Final[str] = "answer variable '{var}' occurs in no atom"


# =============================================================================
# SAMPLING
# =============================================================================

SHAPE_TOO_SPARSE: Final[str] = (
    "graph too sparse to realize shape {shape}; skipped"
)
PARTIAL_SAMPLE: Final[str] = (
    "shape {shape}: {got}/{wanted} queries after {attempts} attempts"
)
NO_NEGATIVES: Final[str] = "every entity is a positive answer; cannot draw negatives"
NO_LABELINGS: Final[str] = (
    "shape {shape}: no valid labelings and no data patterns"
)
SAMPLED: Final[str] = "Sampled {count} {strategy} queries ({shapes})"
EVAL_BUILT: Final[str] = "Built {count} case {case} {split} queries"
SPLIT_NOT_NESTED: Final[str] = "split files are not nested (train ⊆ valid ⊆ test)"


# =============================================================================
# MODEL AND TRAINING
# =============================================================================

NON_FINITE: Final[str] = "non-finite value in {where}"
ARITY: Final[str] = "intersection needs at least 2 boxes, got {count}"
BAD_MAGIC: Final[str] = "checkpoint magic/version mismatch in {path}"
TRUNCATED: Final[str] = "checkpoint {path} is truncated"
CONFIG_POSITIVE: Final[str] = "config value '{key}' must be positive, got {value}"
CONFIG_UNKNOWN_KEY: Final[str] = "unknown config key '{key}'"
CONFIG_BAD_VALUE: Final[str] = "config value '{key}' is invalid: {value}"
EMPTY_BATCH: Final[str] = "batch is empty"
NO_SAMPLES: Final[str] = "training needs non-empty samples and validation set"
DIVERGED: Final[str] = "loss diverged at step {step}; restoring last good parameters"
TRAIN_PROGRESS: Final[str] = "step {step}/{max_steps} loss {loss:.4f}"
VALIDATION: Final[str] = (
    "step {step}: valid hits@3 {hits3:.4f} mrr {mrr:.4f} (best {best:.4f} at {best_step})"
)
EARLY_STOP: Final[str] = "early stop at step {step} after {evals} evaluations without improvement"


# =============================================================================
# EVALUATION
# =============================================================================

ANSWER_NOT_HARD: Final[str] = (
    "answer '{answer}' is a known easy answer, not a hard one"
)
METRICS_HEADER: Final[str] = (
    "# averaging: {averaging}; ties: {ties}; filter: all answers of the target graph"
)
EMPTY_EVAL_SET: Final[str] = "evaluation set is empty"


# =============================================================================
# CLI
# =============================================================================

RATIO_RANGE: Final[str] = "ratio must lie in (0, 1), got {ratio}"
THREADS_INVALID: Final[str] = "thread count must be a positive integer, got {value}"
DEPTH_INVALID: Final[str] = "depth must be a non-negative integer or 'fix', got {value}"
RUN_STARTED: Final[str] = "omqa {command}: {config}"
RUN_FINISHED: Final[str] = "omqa {command} finished with exit code {code}"
WROTE: Final[str] = "Wrote {what} to {path}"
CLOSURE_DONE: Final[str] = "Closure of {before} triples under {axioms} axioms has {after} triples"
REWRITE_DONE: Final[str] = "Rewrote {queries} queries into {members} {mode} members"
TRAIN_DONE: Final[str] = "Trained {name}: best valid hits@3 {hits3:.4f} at step {step}"
EVAL_DONE: Final[str] = "Ranked {answers} hard answers over {queries} queries"
RUN_FAILED: Final[str] = "omqa {command} failed"
DEMO_STAGE: Final[str] = "demo: {stage}"
NO_RUNS: Final[str] = "No runs recorded yet."
ENV_INVALID: Final[str] = "environment settings are invalid; explicit flags still apply"


# =============================================================================
# TABLE HEADERS
# =============================================================================

STATS_COLUMNS: Final[tuple[str, ...]] = ("|G|", "|I|", "|R|", "|C|", "|O|", "|O∞(G)|")
METRICS_COLUMNS: Final[tuple[str, ...]] = (
    "case",
    "shape",
    "answers",
    "hits@1",
    "hits@3",
    "hits@10",
    "mrr",
)
COMPARISON_COLUMNS: Final[tuple[str, ...]] = ("model", "case", "hits@1", "hits@3", "hits@10", "mrr")
