"""Ranking metrics for hard answers.

Each hard answer is ranked against the entities that are not answers of the
query on the case's target graph; ties count against the answer.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from config import logger
from constants import EVAL_CONSTANTS
from errors import ContractError, ParseError
from kg import KnowledgeGraph, SymbolTable
from model import BoxModel, score_all
from ontology import Ontology, SubRole
from query import Atom, ConjunctiveQuery, Const, Var, has_supported_shape
from rewrite import rew
from sampler import EvalSample
import strings as S
from utils import format_number, format_table, sub_rng


RANK_COLUMNS = ("query_id", "answer", "rank", "case", "shape")


@dataclass(frozen=True)
class RankRecord:
    query_id: str
    answer: str
    rank: int
    case: str
    shape: str


@dataclass
class MetricRow:
    answers: int = 0
    hits: dict[int, float] = field(default_factory=dict)
    mrr: float = 0.0

    def as_dict(self) -> dict[str, float]:
        data = {f"hits@{k}": v for k, v in sorted(self.hits.items())}
        data["mrr"] = self.mrr
        return data


def _row(ranks: Sequence[int]) -> MetricRow:
    if not ranks:
        return MetricRow(0, {k: 0.0 for k in EVAL_CONSTANTS.HITS_KS}, 0.0)
    arr = np.asarray(ranks, dtype=np.float64)
    return MetricRow(
        answers=len(ranks),
        hits={k: float(np.mean(arr <= k)) for k in EVAL_CONSTANTS.HITS_KS},
        mrr=float(np.mean(1.0 / arr)),
    )


@dataclass
class MetricsTable:
    """Metrics per (case, shape), per case and overall; averaged per hard answer."""

    rows: dict[tuple[str, str], MetricRow]
    totals: dict[str, MetricRow]
    overall: MetricRow

    def hits3(self) -> float:
        return self.overall.hits.get(3, 0.0)

    def to_text(self) -> str:
        header = S.METRICS_HEADER.format(
            averaging=EVAL_CONSTANTS.AVERAGING, ties=EVAL_CONSTANTS.TIE_POLICY
        )
        table_rows = []
        for (case, shape), row in sorted(self.rows.items()):
            table_rows.append(_table_row(case, shape, row))
        for case, row in sorted(self.totals.items()):
            table_rows.append(_table_row(case, "all", row))
        lines = [header, format_table(S.METRICS_COLUMNS, table_rows), ""]
        lines += [f"{k} = {v}" for k, v in self.key_values().items()]
        return "\n".join(lines) + "\n"

    def key_values(self) -> dict[str, str]:
        data = {}
        for (case, shape), row in sorted(self.rows.items()):
            for name, value in row.as_dict().items():
                data[f"{case}.{shape}.{name}"] = format_number(value)
        for case, row in sorted(self.totals.items()):
            for name, value in row.as_dict().items():
                data[f"{case}.all.{name}"] = format_number(value)
        return data


def _table_row(case: str, shape: str, row: MetricRow) -> list:
    return [case, shape, row.answers] + [row.hits[k] for k in EVAL_CONSTANTS.HITS_KS] + [row.mrr]


def metrics_from_records(records: Iterable[RankRecord]) -> MetricsTable:
    per_group: dict[tuple[str, str], list[int]] = defaultdict(list)
    per_case: dict[str, list[int]] = defaultdict(list)
    everything = []
    for r in records:
        if r.rank < 1:
            raise ContractError(f"rank must be positive, got {r.rank}")
        per_group[(r.case, r.shape)].append(r.rank)
        per_case[r.case].append(r.rank)
        everything.append(r.rank)
    return MetricsTable(
        rows={k: _row(v) for k, v in per_group.items()},
        totals={k: _row(v) for k, v in per_case.items()},
        overall=_row(everything),
    )


# =============================================================================
# RANKING
# =============================================================================


def compute_rank(distances: np.ndarray, answer: int, candidates: np.ndarray) -> int:
    """1 + number of candidates (other than the answer) at distance <= the answer's."""
    others = candidates[candidates != answer]
    return 1 + int(np.count_nonzero(distances[others] <= distances[answer]))


def _ranks(distances: np.ndarray, hard: Iterable[int], candidates: np.ndarray) -> dict[int, int]:
    ordered = np.sort(distances[candidates])
    return {
        a: 1 + int(np.searchsorted(ordered, distances[a], side="right")) for a in sorted(hard)
    }


def _candidates(entities: Sequence[int], full: Iterable[int]) -> np.ndarray:
    excluded = set(full)
    return np.array([e for e in entities if e not in excluded], dtype=np.int64)


def rank_answer(
    model: BoxModel,
    q: ConjunctiveQuery,
    answer: int,
    full_answers: Iterable[int],
    hard_answers: Iterable[int] | None = None,
    case: str = "A",
    query_id: str = "",
) -> RankRecord:
    """
    Rank one hard answer of q.

    Raises:
        ContractError: the answer is an easy one
    """
    full = set(full_answers)
    if hard_answers is not None and answer not in set(hard_answers):
        raise ContractError(S.ANSWER_NOT_HARD.format(answer=model.symbols.node_name(answer)))
    distances = score_all(model, [q])[0]
    candidates = _candidates(model.symbols.entity_ids(), full | {answer})
    rank = compute_rank(distances, answer, np.append(candidates, answer))
    return RankRecord(query_id, model.symbols.node_name(answer), rank, case, q.shape or "")


def rank_samples(
    distances: np.ndarray, samples: Sequence[EvalSample], model: BoxModel
) -> list[RankRecord]:
    """RankRecords for every hard answer given a (len(samples), num_nodes) distance matrix."""
    entities = model.symbols.entity_ids()
    records = []
    for row, sample in zip(distances, samples):
        candidates = _candidates(entities, sample.full_answers)
        for answer, rank in _ranks(row, sample.hard_answers, candidates).items():
            records.append(
                RankRecord(sample.id, model.symbols.node_name(answer), rank, sample.case, sample.shape)
            )
    return records


def evaluate(model: BoxModel, eval_set: Sequence[EvalSample]) -> MetricsTable:
    if not eval_set:
        raise ContractError(S.EMPTY_EVAL_SET)
    return metrics_from_records(evaluate_records(model, eval_set))


def evaluate_records(model: BoxModel, eval_set: Sequence[EvalSample]) -> list[RankRecord]:
    distances = score_all(model, [s.query for s in eval_set])
    return rank_samples(distances, eval_set, model)


def _resolvable(symbols: SymbolTable, q: ConjunctiveQuery) -> bool:
    return all(symbols.has_relation(r) for r in q.relations()) and all(
        symbols.has_node(c.name) for c in q.constants()
    )


def rewriting_distances(
    model: BoxModel,
    eval_set: Sequence[EvalSample],
    o: Ontology,
    shapes: Iterable[str] | None = None,
) -> np.ndarray:
    """Per query, the minimum distance over its embeddable rewritings."""
    shapes = list(shapes) if shapes is not None else None
    distances = np.empty((len(eval_set), model.symbols.num_nodes))
    for i, sample in enumerate(eval_set):
        members = [
            m for m in rew(sample.query, o, shapes)
            if has_supported_shape(m) and _resolvable(model.symbols, m)
        ]
        if sample.query not in members:
            members.append(sample.query)
        distances[i] = score_all(model, members).min(axis=0)
        logger.debug(f"{sample.id}: {len(members)} rewritings")
    return distances


def evaluate_rewriting_baseline(
    model: BoxModel,
    eval_set: Sequence[EvalSample],
    o: Ontology,
    shapes: Iterable[str] | None = None,
) -> MetricsTable:
    """Score each entity by its closest rewriting of the query, then rank as usual."""
    if not eval_set:
        raise ContractError(S.EMPTY_EVAL_SET)
    return metrics_from_records(rank_samples(rewriting_distances(model, eval_set, o, shapes), eval_set, model))


# =============================================================================
# CONTAINMENT
# =============================================================================


def containment_pairs(
    g: KnowledgeGraph, o: Ontology, per_axiom: int = 20, seed: int = 0
) -> tuple[list[tuple[ConjunctiveQuery, ConjunctiveQuery]], list[frozenset[int]]]:
    """
    1p query pairs p(a, X) / s(a, X) for role inclusions p below s.

    Returns the pairs and the answers of each narrower query over g.
    """
    pairs, answer_sets = [], []
    x = Var("X")
    for axiom in sorted(o.of_type(SubRole), key=lambda a: a.to_line()):
        if not g.symbols.has_relation(axiom.sub):
            continue
        heads = sorted({h for h, _ in g.pairs(axiom.sub)})
        if not heads:
            continue
        rng = sub_rng(seed, "containment", axiom.sub, axiom.sup)
        picked = sorted(rng.choice(heads, size=min(per_axiom, len(heads)), replace=False).tolist())
        for h in picked:
            a = Const(g.symbols.node_name(h))
            sub = ConjunctiveQuery((Atom(axiom.sub, a, x),), x, shape="1p")
            sup = ConjunctiveQuery((Atom(axiom.sup, a, x),), x, shape="1p")
            pairs.append((sub, sup))
            answer_sets.append(g.successors(h, axiom.sub))
    return pairs, answer_sets


# =============================================================================
# RANK FILES
# =============================================================================


def dump_ranks(records: Iterable[RankRecord], stream: TextIO) -> int:
    writer = csv.writer(stream, delimiter="\t", lineterminator="\n")
    writer.writerow(RANK_COLUMNS)
    count = 0
    for r in records:
        writer.writerow([r.query_id, r.answer, r.rank, r.case, r.shape])
        count += 1
    return count


def load_ranks(stream: TextIO) -> list[RankRecord]:
    reader = csv.reader(stream, delimiter="\t")
    header = next(reader, None)
    if header is None or tuple(header) != RANK_COLUMNS:
        raise ParseError("rank file header must be " + "\t".join(RANK_COLUMNS), 1)
    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(RANK_COLUMNS):
            raise ParseError(f"expected {len(RANK_COLUMNS)} fields, found {len(row)}", line_no)
        try:
            rank = int(row[2])
        except ValueError:
            raise ParseError(f"rank is not an integer: {row[2]}", line_no) from None
        records.append(RankRecord(row[0], row[1], rank, row[3], row[4]))
    return records


def metrics_summary(tables: Mapping[str, MetricsTable], case: str) -> list[list]:
    """Comparison rows (model, case, hits@1/3/10, mrr) for one case."""
    rows = []
    for name, table in tables.items():
        row = table.totals.get(case)
        if row is None:
            continue
        rows.append([name, case] + [row.hits[k] for k in EVAL_CONSTANTS.HITS_KS] + [row.mrr])
    return rows
