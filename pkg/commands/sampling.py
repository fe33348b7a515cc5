"""Query-set subcommands: sample and build-eval."""

from __future__ import annotations

from typing import Iterable, Sequence

from config import logger
from constants import REWRITE_DEFAULTS, SAMPLER_DEFAULTS
from kg import KnowledgeGraph, SplitBundle, SymbolTable
from ontology import Ontology
from query import canonical_form
from sampler import (
    EvalSample,
    TrainSample,
    attach_gens,
    build_eval,
    sample_certain,
    sample_onto,
    sample_plain,
)
import strings as S

from .common import RunContext, load_graph, load_onto, load_queries, save_queries


def draw_training(
    g: KnowledgeGraph,
    o: Ontology,
    strategy: str,
    shapes: Sequence[str],
    n: int,
    seed: int,
    threads: int = 1,
    anchor_fraction: float = SAMPLER_DEFAULTS.ANCHOR_FRACTION,
    cap: int | None = None,
    depth: int | None = REWRITE_DEFAULTS.GEN_DEPTH,
    with_gens: bool = False,
) -> list[TrainSample]:
    """
    Training samples for one strategy.

    ``with_gens`` fills the generalizations for strategies that do not
    compute them on their own, so the o2b loss can be paired with any
    strategy.
    """
    if strategy == "plain":
        samples = sample_plain(g, shapes, n, seed, threads)
    elif strategy in ("gen", "spec"):
        samples = sample_certain(g, o, shapes, n, seed, mode=strategy, depth=depth, threads=threads)
    else:
        samples = sample_onto(g, o, shapes, anchor_fraction, cap if cap is not None else n, seed, threads)
    if with_gens and strategy != "gen":
        samples = attach_gens(samples, o, depth)
    return samples


def sample_command(
    ctx: RunContext,
    kg_path: str,
    onto_path: str | None,
    strategy: str,
    shapes: Sequence[str],
    n: int,
    out: str | None,
    anchor_fraction: float = SAMPLER_DEFAULTS.ANCHOR_FRACTION,
    cap: int | None = None,
    depth: int | None = REWRITE_DEFAULTS.GEN_DEPTH,
    with_gens: bool = False,
) -> int:
    symbols = SymbolTable()
    g = load_graph(kg_path, symbols)
    o = load_onto(onto_path, symbols)
    samples = draw_training(
        g, o, strategy, shapes, n, ctx.seed, ctx.threads, anchor_fraction, cap, depth, with_gens
    )
    return save_queries((s.to_record(symbols) for s in samples), out, what=f"{strategy} training queries")


def load_bundle(train: str, valid: str, test: str) -> SplitBundle:
    """Nested split from three files sharing one vocabulary (largest graph first)."""
    symbols = SymbolTable()
    g_test = load_graph(test, symbols)
    g_valid = load_graph(valid, symbols)
    g_train = load_graph(train, symbols)
    bundle = SplitBundle(g_train, g_valid, g_test)
    if not bundle.is_nested():
        logger.warning(S.SPLIT_NOT_NESTED)
    return bundle


def excluded_forms(paths: Iterable[str]) -> set[str]:
    return {canonical_form(record.query) for path in paths for record in load_queries(path)}


def eval_sets(
    bundle: SplitBundle,
    o: Ontology,
    cases: Sequence[str],
    shapes: Sequence[str],
    n: int,
    seed: int,
    split_name: str = "test",
    exclude: Iterable[str] = (),
    threads: int = 1,
) -> dict[str, list[EvalSample]]:
    excluded = frozenset(exclude)
    return {case: build_eval(case, bundle, o, shapes, n, seed, split_name, excluded, threads) for case in cases}


def build_eval_command(
    ctx: RunContext,
    case: str,
    split_name: str,
    train: str,
    valid: str,
    test: str,
    onto_path: str | None,
    shapes: Sequence[str],
    n: int,
    out: str | None,
    exclude_paths: Sequence[str] = (),
) -> int:
    bundle = load_bundle(train, valid, test)
    o = load_onto(onto_path, bundle.g_test.symbols)
    samples = build_eval(
        case, bundle, o, shapes, n, ctx.seed, split_name, excluded_forms(exclude_paths), ctx.threads
    )
    symbols = bundle.g_test.symbols
    return save_queries((s.to_record(symbols) for s in samples), out, what=f"case {case} {split_name} queries")
