"""Symbolic subcommands: closure, rewrite, split and stats."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from config import logger
from errors import UnsupportedShapeError
from kg import SymbolTable, dump_triples, split, stats
from ontology import saturate
from query import QueryRecord, match_shape
from rewrite import gen_closure, rew, spec_closure
import strings as S

from .common import RunContext, load_graph, load_onto, load_queries, open_output, save_queries


def closure_command(ctx: RunContext, kg_path: str, onto_path: str | None, out: str | None) -> int:
    """Write O∞(g) as TSV; returns the number of triples."""
    symbols = SymbolTable()
    g = load_graph(kg_path, symbols)
    o = load_onto(onto_path, symbols)
    closed = saturate(g, o)
    with open_output(out) as stream:
        count = dump_triples(closed, stream)
    logger.info(S.CLOSURE_DONE.format(before=len(g), after=count, axioms=len(o)))
    return count


def _rewrite_members(record: QueryRecord, o, mode: str, depth: int | None, shapes, enable_r8: bool):
    if mode == "gen":
        return gen_closure(record.query, o, depth, enable_r8=enable_r8)
    if mode == "spec":
        return spec_closure(record.query, o, depth)
    return rew(record.query, o, shapes, depth)


def rewrite_command(
    ctx: RunContext,
    query_path: str,
    onto_path: str | None,
    mode: str,
    depth: int | None,
    out: str | None,
    shapes: Sequence[str] | None = None,
    enable_r8: bool = True,
) -> int:
    """
    Rewrite every query of a query file.

    Each member becomes one output record whose ``provenance`` lists the
    rule trace from the input query; the input query itself appears with
    an empty trace.
    """
    records = load_queries(query_path)
    o = load_onto(onto_path)
    output = []
    for record in records:
        members = _rewrite_members(record, o, mode, depth, shapes, enable_r8)
        for i, member in enumerate(members):
            trace = members.trace_of(member)
            try:
                member = member.with_shape(match_shape(member).shape.name)
            except UnsupportedShapeError:
                pass
            output.append(
                QueryRecord(
                    id=f"{record.id}.{mode}-{i}",
                    query=member,
                    strategy=mode,
                    provenance=[step.describe() for step in trace],
                )
            )
        logger.debug(f"{record.id}: {len(members)} {mode} members")
    count = save_queries(output, out, what=f"{mode} rewritings")
    logger.info(S.REWRITE_DONE.format(queries=len(records), members=count, mode=mode))
    return count


def split_command(ctx: RunContext, kg_path: str, ratio: float, out_dir: str) -> dict[str, Path]:
    """Write g_train.tsv, g_valid.tsv and g_test.tsv into ``out_dir``."""
    g = load_graph(kg_path)
    bundle = split(g, ratio, ctx.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("g_train", "g_valid", "g_test"):
        path = out / f"{name}.tsv"
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            dump_triples(getattr(bundle, name), f)
        paths[name] = path
    logger.info(S.WROTE.format(what="nested split", path=out))
    return paths


def stats_command(ctx: RunContext, kg_path: str, onto_path: str | None, out: str | None, key_values: bool = False):
    symbols = SymbolTable()
    g = load_graph(kg_path, symbols)
    o = load_onto(onto_path, symbols) if onto_path else None
    record = stats(g, o)
    with open_output(out) as stream:
        if key_values:
            for key, value in record.as_dict().items():
                stream.write(f"{key} = {value}\n")
        else:
            stream.write(record.format_row() + "\n")
    return record
