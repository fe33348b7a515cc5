"""omqa command line: ontology-mediated query answering over knowledge graphs.

Results go to standard output or files, diagnostics to standard error.
Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import logging
import sys
from typing import Callable, Sequence

import click

from commands import (
    RunContext,
    build_eval_command,
    closure_command,
    demo_command,
    eval_command,
    generate_command,
    history_command,
    log_error_with_context,
    parse_depth,
    parse_shapes,
    recorded_run,
    rewrite_command,
    sample_command,
    split_command,
    stats_command,
    train_command,
)
from config import default_seed, logger, resolve_threads, validate_config
from constants import (
    ALL_SHAPES,
    EVAL_CONSTANTS,
    EXIT_CODES,
    MODEL_CONSTANTS,
    REWRITE_DEFAULTS,
    SAMPLER_DEFAULTS,
    SPLIT_DEFAULTS,
    TRAIN_SHAPES,
)
from database import init_db
from errors import OmqaError
import strings as S

INPUT_FILE = click.Path(exists=True, dir_okay=False)


def _run(ctx: click.Context, command: str, params: dict, body: Callable[[RunContext], object]) -> None:
    """Run a command body inside a ledger record; data errors are logged with context and re-raised."""
    run: RunContext = ctx.obj
    config = {"seed": run.seed, "threads": run.threads, "deterministic": run.deterministic, **params}
    with recorded_run(command, config) as run_id:
        run.run_id = run_id
        context = {"operation": command, **{k: v for k, v in params.items() if v is not None}}
        try:
            body(run)
        except OmqaError as e:
            log_error_with_context(e, context, run_id)
            raise
        except OSError as e:
            error = OmqaError(str(e))
            log_error_with_context(error, context, run_id)
            raise error from e


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--seed", type=int, default=None, help="Base seed of every random stream (env OMQA_SEED).")
@click.option("--threads", type=int, default=None, help="Worker threads (env OMQA_THREADS; default: all cores).")
@click.option("--deterministic", is_flag=True, help="Serial reductions; forces one thread.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx: click.Context, seed: int | None, threads: int | None, deterministic: bool, verbose: bool) -> None:
    """Ontology-mediated query answering with box embeddings."""
    if verbose:
        logger.setLevel(logging.DEBUG)
    if not validate_config():
        logger.warning(S.ENV_INVALID)
    ctx.obj = RunContext(
        seed=default_seed() if seed is None else seed,
        threads=resolve_threads(threads, deterministic),
        deterministic=deterministic,
        verbose=verbose,
    )
    init_db()


# =============================================================================
# REASONING
# =============================================================================


@cli.command()
@click.option("--kg", "kg_path", required=True, type=INPUT_FILE, help="Triple file (TSV).")
@click.option("--ontology", "onto_path", type=INPUT_FILE, help="Ontology file.")
@click.option("--out", default="-", show_default=True, help="Output file; '-' for standard output.")
@click.pass_context
def closure(ctx, kg_path, onto_path, out):
    """Saturate a graph under an ontology."""
    _run(
        ctx,
        "closure",
        {"kg": kg_path, "ontology": onto_path, "out": out},
        lambda run: closure_command(run, kg_path, onto_path, out),
    )


@cli.command()
@click.option("--query", "query_path", required=True, type=INPUT_FILE, help="Query file (JSON lines).")
@click.option("--ontology", "onto_path", type=INPUT_FILE, help="Ontology file.")
@click.option("--mode", type=click.Choice(["gen", "spec", "rew"]), default="gen", show_default=True)
@click.option("--depth", default=None, help="Rewriting depth or 'fix' for the fixpoint.")
@click.option("--shapes", default=None, help="Shapes kept by 'rew' (comma separated).")
@click.option("--no-r8", is_flag=True, help="Disable constant-to-variable generalization.")
@click.option("--out", default="-", show_default=True)
@click.pass_context
def rewrite(ctx, query_path, onto_path, mode, depth, shapes, no_r8, out):
    """Generalize or specialize queries, with rule provenance."""

    def body(run):
        default = REWRITE_DEFAULTS.GEN_DEPTH if mode == "gen" else REWRITE_DEFAULTS.SPEC_DEPTH
        rewrite_command(
            run,
            query_path,
            onto_path,
            mode,
            parse_depth(depth, default),
            out,
            parse_shapes(shapes) if shapes else None,
            enable_r8=not no_r8,
        )

    _run(ctx, "rewrite", {"query": query_path, "ontology": onto_path, "mode": mode, "depth": depth, "out": out}, body)


@cli.command("split")
@click.option("--kg", "kg_path", required=True, type=INPUT_FILE)
@click.option("--ratio", type=float, default=SPLIT_DEFAULTS.RATIO, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False), help="Output directory.")
@click.pass_context
def split_cmd(ctx, kg_path, ratio, out_dir):
    """Nested train/valid/test split."""
    _run(
        ctx,
        "split",
        {"kg": kg_path, "ratio": ratio, "out": out_dir},
        lambda run: split_command(run, kg_path, ratio, out_dir),
    )


@cli.command()
@click.option("--kg", "kg_path", required=True, type=INPUT_FILE)
@click.option("--ontology", "onto_path", type=INPUT_FILE)
@click.option("--kv", "key_values", is_flag=True, help="Print 'key = value' lines instead of a table.")
@click.option("--out", default="-", show_default=True)
@click.pass_context
def stats(ctx, kg_path, onto_path, key_values, out):
    """Dataset statistics."""
    _run(
        ctx,
        "stats",
        {"kg": kg_path, "ontology": onto_path},
        lambda run: stats_command(run, kg_path, onto_path, out, key_values),
    )


# =============================================================================
# SAMPLING
# =============================================================================


@cli.command()
@click.option("--kg", "kg_path", required=True, type=INPUT_FILE, help="Training graph.")
@click.option("--ontology", "onto_path", type=INPUT_FILE)
@click.option("--strategy", type=click.Choice(list(SAMPLER_DEFAULTS.STRATEGIES)), default="plain", show_default=True)
@click.option("--shapes", default=",".join(TRAIN_SHAPES), show_default=True)
@click.option("--n", "n", type=click.IntRange(min=1), default=100, show_default=True, help="Queries per shape.")
@click.option("--anchor-fraction", type=float, default=SAMPLER_DEFAULTS.ANCHOR_FRACTION, show_default=True)
@click.option("--cap", type=click.IntRange(min=1), default=None, help="Per-shape cap for 'onto' (default: --n).")
@click.option("--depth", default=None, help="Rewriting depth or 'fix'.")
@click.option("--gens", "with_gens", is_flag=True, help="Attach generalizations for the o2b loss.")
@click.option("--out", default="-", show_default=True)
@click.pass_context
def sample(ctx, kg_path, onto_path, strategy, shapes, n, anchor_fraction, cap, depth, with_gens, out):
    """Sample training queries with one strategy."""

    def body(run):
        sample_command(
            run,
            kg_path,
            onto_path,
            strategy,
            parse_shapes(shapes, TRAIN_SHAPES),
            n,
            out,
            anchor_fraction,
            cap,
            parse_depth(depth, REWRITE_DEFAULTS.GEN_DEPTH),
            with_gens,
        )

    params = {"kg": kg_path, "ontology": onto_path, "strategy": strategy, "shapes": shapes, "n": n, "out": out}
    _run(ctx, "sample", params, body)


@cli.command("build-eval")
@click.option("--case", type=click.Choice(list(EVAL_CONSTANTS.CASES)), required=True)
@click.option("--split", "split_name", type=click.Choice(["valid", "test"]), default="test", show_default=True)
@click.option("--train", "train_path", required=True, type=INPUT_FILE)
@click.option("--valid", "valid_path", required=True, type=INPUT_FILE)
@click.option("--test", "test_path", required=True, type=INPUT_FILE)
@click.option("--ontology", "onto_path", type=INPUT_FILE)
@click.option("--shapes", default=",".join(ALL_SHAPES), show_default=True)
@click.option("--n", "n", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--exclude", multiple=True, type=INPUT_FILE, help="Query files whose queries must not reappear.")
@click.option("--out", default="-", show_default=True)
@click.pass_context
def build_eval(ctx, case, split_name, train_path, valid_path, test_path, onto_path, shapes, n, exclude, out):
    """Evaluation queries with hard answers for case A, B or C."""

    def body(run):
        build_eval_command(
            run,
            case,
            split_name,
            train_path,
            valid_path,
            test_path,
            onto_path,
            parse_shapes(shapes),
            n,
            out,
            exclude,
        )

    params = {"case": case, "split": split_name, "test": test_path, "ontology": onto_path, "n": n, "out": out}
    _run(ctx, "build-eval", params, body)


# =============================================================================
# LEARNING
# =============================================================================


@cli.command()
@click.option("--kg", "kg_path", required=True, type=INPUT_FILE, help="Training graph.")
@click.option("--ontology", "onto_path", type=INPUT_FILE)
@click.option("--samples", "samples_path", required=True, type=INPUT_FILE)
@click.option("--valid", "valid_path", required=True, type=INPUT_FILE)
@click.option("--config", "config_path", type=INPUT_FILE, help="run.cfg with 'key = value' lines.")
@click.option("--vocab", multiple=True, type=INPUT_FILE, help="Larger graphs interned first (e.g. g_test.tsv).")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--variant", type=click.Choice(list(MODEL_CONSTANTS.VARIANTS)), default=None)
@click.option("--dim", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--k-negatives", type=int, default=None)
@click.option("--eval-every", type=int, default=None)
@click.option("--patience", type=int, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--desk-scale/--full-scale", default=None, help="Apply the desk-scale preset.")
@click.pass_context
def train(ctx, kg_path, onto_path, samples_path, valid_path, config_path, vocab, out_dir, **overrides):
    """Train a box model and keep the best checkpoint on validation HITS@3."""
    params = {"kg": kg_path, "samples": samples_path, "valid": valid_path, "config": config_path, "out": out_dir}
    params.update({k: v for k, v in overrides.items() if v is not None})
    _run(
        ctx,
        "train",
        params,
        lambda run: train_command(
            run, kg_path, onto_path, samples_path, valid_path, config_path, out_dir, overrides, vocab
        ),
    )


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=INPUT_FILE, help="Checkpoint (best.ckpt).")
@click.option("--queries", "queries_path", required=True, type=INPUT_FILE)
@click.option("--ontology", "onto_path", type=INPUT_FILE, help="Needed by --baseline rewriting.")
@click.option("--baseline", type=click.Choice(["none", "rewriting"]), default="none", show_default=True)
@click.option("--ranks", "ranks_path", default=None, help="Also dump per-answer ranks as TSV.")
@click.option("--out", default="-", show_default=True)
@click.pass_context
def eval_cmd(ctx, model_path, queries_path, onto_path, baseline, ranks_path, out):
    """Rank hard answers and report HITS@K and MRR."""
    if baseline == "rewriting" and onto_path is None:
        raise click.UsageError("--baseline rewriting needs --ontology")
    _run(
        ctx,
        "eval",
        {"model": model_path, "queries": queries_path, "baseline": baseline, "out": out},
        lambda run: eval_command(run, model_path, queries_path, out, ranks_path, onto_path, baseline == "rewriting"),
    )


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--grid", is_flag=True, help="Train every variant x strategy combination.")
@click.option("--universities", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--departments", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--n", "n", type=click.IntRange(min=1), default=60, show_default=True, help="Training queries per shape.")
@click.option("--eval-n", type=click.IntRange(min=1), default=20, show_default=True, help="Evaluation queries per shape.")
@click.option("--max-steps", type=click.IntRange(min=1), default=None, help="Override the preset step budget.")
@click.pass_context
def demo(ctx, out_dir, grid, universities, departments, n, eval_n, max_steps):
    """End-to-end desk-scale run on a generated university graph."""
    params = {"out": out_dir, "grid": grid, "universities": universities, "departments": departments, "n": n}
    _run(
        ctx,
        "demo",
        params,
        lambda run: demo_command(run, out_dir, grid, universities, departments, n, eval_n, max_steps),
    )


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--universities", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--departments", type=click.IntRange(min=1), default=4, show_default=True)
@click.pass_context
def generate(ctx, out_dir, universities, departments):
    """Write the synthetic university graph and its ontology."""
    _run(
        ctx,
        "generate",
        {"out": out_dir, "universities": universities, "departments": departments},
        lambda run: generate_command(run, out_dir, universities, departments),
    )


@cli.command()
@click.option("--limit", type=click.IntRange(min=1), default=20, show_default=True)
@click.option("--run", "run_id", default=None, help="Show the validation history of one run.")
@click.option("--out", default="-", show_default=True)
@click.pass_context
def history(ctx, limit, run_id, out):
    """Recent runs from the ledger."""
    history_command(ctx.obj, limit, run_id, out)


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run the CLI and map the outcome to an exit code."""
    try:
        result = cli.main(args=list(argv) if argv is not None else None, prog_name="omqa", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return EXIT_CODES.USAGE
    except click.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_CODES.USAGE
    except OmqaError as e:
        click.echo(f"error: {e}", err=True)
        return e.exit_code
    return result if isinstance(result, int) else EXIT_CODES.OK


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
