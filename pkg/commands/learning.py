"""Learning subcommands: train, eval, demo, generate and history."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from config import logger
from constants import ALL_SHAPES, DESK_SCALE, EVAL_CONSTANTS, SPLIT_DEFAULTS, TRAIN_SHAPES
from database import get_eval_history, get_recent_runs
from evaluation import (
    MetricsTable,
    containment_pairs,
    dump_ranks,
    evaluate,
    evaluate_records,
    evaluate_rewriting_baseline,
    metrics_from_records,
    metrics_summary,
)
from kg import SymbolTable, dump_triples, split, stats
from model import BoxModel, containment_gap, load
from query import canonical_form
from sampler import EvalSample, TrainSample
import strings as S
from synthetic import write_university_kg
from trainer import RunManifest, TrainConfig, train
from utils import file_digest, format_number, format_table

from .common import RunContext, load_graph, load_onto, load_queries, open_output, save_queries
from .sampling import draw_training, eval_sets


def _digests(paths: Mapping[str, str | None]) -> dict[str, str]:
    return {name: file_digest(path) for name, path in sorted(paths.items()) if path}


def train_command(
    ctx: RunContext,
    kg_path: str,
    onto_path: str | None,
    samples_path: str,
    valid_path: str,
    config_path: str | None,
    out_dir: str,
    overrides: Mapping[str, object] | None = None,
    vocab_paths: Sequence[str] = (),
) -> tuple[BoxModel, RunManifest]:
    """
    Train from query files.

    ``vocab_paths`` are graphs interned before the training graph so that
    validation answers missing from g_train still have an embedding row.
    """
    symbols = SymbolTable()
    for path in vocab_paths:
        load_graph(path, symbols)
    load_graph(kg_path, symbols)
    load_onto(onto_path, symbols)

    samples = [TrainSample.from_record(r, symbols) for r in load_queries(samples_path)]
    valid = [EvalSample.from_record(r, symbols) for r in load_queries(valid_path)]
    values = dict(overrides or {})
    values.update(seed=ctx.seed, threads=ctx.threads, deterministic=ctx.deterministic)
    config = TrainConfig.from_file(config_path, values)

    digests = _digests(
        {"kg": kg_path, "ontology": onto_path, "samples": samples_path, "valid": valid_path, "config": config_path}
    )
    model, manifest = train(config, samples, valid, symbols, out_dir=out_dir, run_id=ctx.run_id, digests=digests)
    logger.info(
        S.TRAIN_DONE.format(name=Path(out_dir).name, hits3=manifest.best_hits3 or 0.0, step=manifest.best_step or 0)
    )
    return model, manifest


def eval_command(
    ctx: RunContext,
    model_path: str,
    queries_path: str,
    out: str | None,
    ranks_path: str | None = None,
    onto_path: str | None = None,
    baseline: bool = False,
) -> dict[str, MetricsTable]:
    """Rank the hard answers of a query file; optionally add the rewriting baseline."""
    model = load(model_path)
    samples = [EvalSample.from_record(r, model.symbols) for r in load_queries(queries_path)]
    records = evaluate_records(model, samples)
    tables = {"model": metrics_from_records(records)}
    if baseline:
        tables["rewriting"] = evaluate_rewriting_baseline(model, samples, load_onto(onto_path))
    logger.info(S.EVAL_DONE.format(answers=len(records), queries=len(samples)))

    with open_output(out) as stream:
        stream.write(_metrics_text(tables))
    if ranks_path:
        with open_output(ranks_path) as stream:
            dump_ranks(records, stream)
    return tables


def _metrics_text(tables: Mapping[str, MetricsTable]) -> str:
    if len(tables) == 1:
        return next(iter(tables.values())).to_text()
    return "\n".join(f"## {name}\n{table.to_text()}" for name, table in tables.items())


# =============================================================================
# DEMO
# =============================================================================

GRID = tuple((variant, strategy) for variant in ("q2b", "o2b") for strategy in ("plain", "gen", "spec", "onto"))
DEFAULT_RUNS = (("q2b", "plain"), ("o2b", "onto"))
BASELINE_MODEL = "Q2B_plain"


@dataclass
class DemoResult:
    out_dir: Path
    tables: dict[str, MetricsTable] = field(default_factory=dict)
    gaps: dict[str, float] = field(default_factory=dict)
    manifests: dict[str, RunManifest] = field(default_factory=dict)


def model_name(variant: str, strategy: str) -> str:
    return f"{variant.upper()}_{strategy}"


def demo_command(
    ctx: RunContext,
    out_dir: str,
    grid: bool = False,
    universities: int = 3,
    departments: int = 4,
    n: int = 60,
    eval_n: int = 20,
    max_steps: int | None = None,
    ratio: float = SPLIT_DEFAULTS.RATIO,
) -> DemoResult:
    """
    Desk-scale run on a generated university graph.

    generate, split, sample, train each model, build the A/B/C test sets,
    evaluate (plus the rewriting baseline on the plain model) and write
    ``comparison.txt`` and ``metrics.txt``.
    """
    out = Path(out_dir)
    result = DemoResult(out)
    seed = ctx.seed

    logger.info(S.DEMO_STAGE.format(stage="generate"))
    kg_path, onto_path = write_university_kg(out, seed, universities, departments)
    symbols = SymbolTable()
    g = load_graph(kg_path, symbols)
    o = load_onto(onto_path, symbols)

    logger.info(S.DEMO_STAGE.format(stage="split"))
    bundle = split(g, ratio, seed)
    for name in ("g_train", "g_valid", "g_test"):
        with open(out / f"{name}.tsv", "w", encoding="utf-8", newline="\n") as f:
            dump_triples(getattr(bundle, name), f)
    (out / "stats.txt").write_text(stats(bundle.g_train, o).format_row() + "\n", encoding="utf-8")

    runs = GRID if grid else DEFAULT_RUNS
    logger.info(S.DEMO_STAGE.format(stage="sample"))
    training: dict[str, list[TrainSample]] = {}
    for strategy in sorted({s for _, s in runs}):
        training[strategy] = draw_training(
            bundle.g_train, o, strategy, TRAIN_SHAPES, n, seed, ctx.threads, with_gens=True
        )
        save_queries((s.to_record(symbols) for s in training[strategy]), out / "samples" / f"{strategy}.queries")

    logger.info(S.DEMO_STAGE.format(stage="build-eval"))
    valid_sets = eval_sets(bundle, o, ("A", "C"), TRAIN_SHAPES, eval_n, seed, "valid", threads=ctx.threads)
    valid = [s for case in sorted(valid_sets) for s in valid_sets[case]]
    seen = {canonical_form(s.query) for samples in training.values() for s in samples}
    seen |= {canonical_form(s.query) for s in valid}
    test_sets = eval_sets(bundle, o, EVAL_CONSTANTS.CASES, ALL_SHAPES, eval_n, seed, "test", seen, ctx.threads)
    test = [s for case in EVAL_CONSTANTS.CASES for s in test_sets[case]]
    save_queries((s.to_record(symbols) for s in valid), out / "eval" / "valid.queries")
    for case, samples in test_sets.items():
        save_queries((s.to_record(symbols) for s in samples), out / "eval" / f"test_{case}.queries")

    pairs, pair_answers = containment_pairs(bundle.g_train, o, seed=seed)
    values: dict[str, object] = {"desk_scale": True, "threads": ctx.threads, "deterministic": ctx.deterministic}
    if max_steps is not None:
        values["max_steps"] = max_steps
        values["eval_every"] = max(1, min(DESK_SCALE.EVAL_EVERY, max_steps))

    for variant, strategy in runs:
        name = model_name(variant, strategy)
        logger.info(S.DEMO_STAGE.format(stage=f"train {name}"))
        config = TrainConfig.build({**values, "variant": variant, "strategy": strategy, "seed": seed})
        model, manifest = train(
            config, training[strategy], valid, symbols, out_dir=out / "models" / name, run_id=ctx.run_id
        )
        result.manifests[name] = manifest
        result.tables[name] = evaluate(model, test)
        result.gaps[name] = containment_gap(model, pairs, pair_answers)
        if name == BASELINE_MODEL:
            result.tables[f"{name}+rewriting"] = evaluate_rewriting_baseline(model, test, o)

    _write_reports(result)
    return result


def _write_reports(result: DemoResult) -> None:
    rows = []
    for case in EVAL_CONSTANTS.CASES:
        rows += metrics_summary(result.tables, case)
    lines = [format_table(S.COMPARISON_COLUMNS, rows), ""]
    lines += [f"containment_gap.{name} = {format_number(gap)}" for name, gap in result.gaps.items()]
    comparison = result.out_dir / "comparison.txt"
    comparison.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (result.out_dir / "metrics.txt").write_text(_metrics_text(result.tables), encoding="utf-8")
    logger.info(S.WROTE.format(what="model comparison", path=comparison))


# =============================================================================
# GENERATE / HISTORY
# =============================================================================


def generate_command(ctx: RunContext, out_dir: str, universities: int = 3, departments: int = 4) -> tuple[Path, Path]:
    kg_path, onto_path = write_university_kg(out_dir, ctx.seed, universities, departments)
    logger.info(S.WROTE.format(what="university graph and ontology", path=out_dir))
    return kg_path, onto_path


def history_command(ctx: RunContext, limit: int, run_id: str | None, out: str | None) -> int:
    """Print recent runs, or the validation history of one run."""
    if run_id:
        entries = get_eval_history(run_id)
        rows = [[e["step"], e["hits1"], e["hits3"], e["hits10"], e["mrr"], e["loss"] if e["loss"] is not None else "-"]
                for e in entries]
        text = format_table(("step", "hits@1", "hits@3", "hits@10", "mrr", "loss"), rows)
    else:
        entries = get_recent_runs(limit)
        rows = [
            [e["run_id"], e["command"], e["started_utc"], "-" if e["exit_code"] is None else e["exit_code"]]
            for e in entries
        ]
        text = format_table(("run_id", "command", "started_utc", "exit_code"), rows) if rows else S.NO_RUNS
    with open_output(out) as stream:
        stream.write(text + "\n")
    return len(entries)
