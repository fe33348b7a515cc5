"""Training and evaluation query generation.

Random queries come from reverse instantiation: pick an answer entity, then
walk the shape's edges backwards through the graph indexes, so every query
has at least one answer. Strategic ("onto") queries come from enumerating
ontology-valid labelings plus the relation patterns present in the data.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from config import logger
from constants import ALL_SHAPES, REWRITE_DEFAULTS, SAMPLER_DEFAULTS, TYPE_RELATION
from errors import ContractError, SamplingError, UnknownSymbolError, UnsupportedShapeError
from kg import KnowledgeGraph, SplitBundle, SymbolTable
from ontology import Ontology, saturate
from query import (
    ConjunctiveQuery,
    Const,
    LabelingFunction,
    QueryRecord,
    QueryShape,
    Var,
    answers,
    canonical_form,
    get_shape,
    instantiate,
    match_shape,
)
from rewrite import gen_closure, spec_closure
import strings as S
from utils import as_rng, sub_rng


PLACEHOLDER = "_:"


@dataclass
class TrainSample:
    query: ConjunctiveQuery
    positives: frozenset[int]
    strategy: str
    gens: list[ConjunctiveQuery] = field(default_factory=list)
    id: str = ""

    def to_record(self, symbols: SymbolTable) -> QueryRecord:
        key = "plain" if self.strategy == "plain" else "certain"
        return QueryRecord(
            id=self.id,
            query=self.query,
            answers={key: sorted(symbols.node_name(e) for e in self.positives)},
            strategy=self.strategy,
            gens=list(self.gens),
        )

    @classmethod
    def from_record(cls, record: QueryRecord, symbols: SymbolTable) -> TrainSample:
        return cls(
            query=record.query,
            positives=frozenset(symbols.entity_id(n) for n in record.full_answers()),
            strategy=record.strategy or "plain",
            gens=list(record.gens),
            id=record.id,
        )


@dataclass
class EvalSample:
    query: ConjunctiveQuery
    easy_answers: frozenset[int]
    hard_answers: frozenset[int]
    case: str
    id: str = ""
    plain_answers: frozenset[int] | None = None

    @property
    def full_answers(self) -> frozenset[int]:
        return self.easy_answers | self.hard_answers

    @property
    def shape(self) -> str:
        return self.query.shape or match_shape(self.query).shape.name

    def to_record(self, symbols: SymbolTable) -> QueryRecord:
        def names(ids):
            return sorted(symbols.node_name(e) for e in ids)

        full_key = "plain" if self.case == "A" else "certain"
        answer_sets = {full_key: names(self.full_answers), "hard": names(self.hard_answers)}
        if self.plain_answers is not None and full_key != "plain":
            answer_sets["plain"] = names(self.plain_answers)
        return QueryRecord(id=self.id, query=self.query, answers=answer_sets, case=self.case)

    @classmethod
    def from_record(cls, record: QueryRecord, symbols: SymbolTable, case: str | None = None) -> EvalSample:
        full = frozenset(symbols.entity_id(n) for n in record.full_answers())
        hard = frozenset(symbols.entity_id(n) for n in record.answer_set("hard"))
        plain = record.answer_set("plain")
        return cls(
            query=record.query,
            easy_answers=full - hard,
            hard_answers=hard,
            case=case or record.case or "A",
            id=record.id,
            plain_answers=frozenset(symbols.entity_id(n) for n in plain) if plain else None,
        )


# =============================================================================
# REVERSE INSTANTIATION
# =============================================================================


def _answer_pool(g: KnowledgeGraph) -> list[int]:
    """Entities with at least one incoming role edge or a type fact."""
    type_id = g.symbols.type_id
    pool = {t for t in g.tails() if g.symbols.node_kind(t) == "entity"}
    pool |= {h for h, _ in g.pairs(type_id)}
    return sorted(pool)


def _in_options(g: KnowledgeGraph, entity: int, with_types: bool) -> list[tuple[int, int]]:
    """(relation id, source value) pairs that can feed ``entity``."""
    type_id = g.symbols.type_id
    options = [(r, h) for r, heads in sorted(g.in_edges(entity).items()) for h in sorted(heads)]
    if with_types:
        options += [(type_id, c) for c in sorted(g.successors(entity, type_id))]
    return options


def _pick(options: list, rng: np.random.Generator, small: KnowledgeGraph | None, dst: int, type_id: int):
    if small is not None and rng.random() < SAMPLER_DEFAULTS.DELTA_PREFERENCE:
        delta = []
        for r, h in options:
            fact = (dst, r, h) if r == type_id else (h, r, dst)
            if fact not in small:
                delta.append((r, h))
        if delta:
            options = delta
    return options[int(rng.integers(len(options)))]


def _walk(
    shape: QueryShape,
    g: KnowledgeGraph,
    rng: np.random.Generator,
    pool: Sequence[int],
    small: KnowledgeGraph | None = None,
) -> ConjunctiveQuery | None:
    symbols = g.symbols
    anchors = set(shape.anchors)
    values = {shape.distinguished: pool[int(rng.integers(len(pool)))]}
    chosen: dict[int, tuple[int, int]] = {}

    for j in reversed(shape.topological_edges()):
        src, dst = shape.edges[j]
        options = _in_options(g, values[dst], with_types=src in anchors)
        for i, k in shape.tied:
            partner = k if i == j else i if k == j else None
            if partner is not None and partner in chosen:
                options = [o for o in options if o[0] == chosen[partner][0]]
        siblings = {
            chosen[k] for k in chosen if shape.edges[k][1] == dst and shape.edges[k][0] in anchors
        }
        if src in anchors:
            options = [o for o in options if o not in siblings]
        if not options:
            return None
        rel, value = _pick(options, rng, small, values[dst], symbols.type_id)
        chosen[j] = (rel, value)
        values[src] = value

    nodes = {}
    for node in shape.nodes:
        if node in anchors:
            nodes[node] = Const(symbols.node_name(values[node]))
        else:
            nodes[node] = Var(node)
    edges = tuple(symbols.relation_name(chosen[j][0]) for j in range(len(shape.edges)))
    return instantiate(shape, LabelingFunction(nodes, edges))


def _sample_shape(
    g: KnowledgeGraph,
    shape: QueryShape,
    n: int,
    rng: np.random.Generator,
    accept: Callable[[ConjunctiveQuery], object | None],
    small: KnowledgeGraph | None = None,
    exclude: frozenset[str] = frozenset(),
) -> list:
    if n <= 0:
        return []
    pool = _answer_pool(g)
    if not pool:
        logger.warning(S.SHAPE_TOO_SPARSE.format(shape=shape.name))
        return []

    found: dict[str, object] = {}
    budget = n * SAMPLER_DEFAULTS.RETRY_FACTOR
    attempts = 0
    while len(found) < n and attempts < budget:
        attempts += 1
        q = _walk(shape, g, rng, pool, small)
        if q is None:
            continue
        key = canonical_form(q)
        if key in found or key in exclude:
            continue
        result = accept(q)
        if result is not None:
            found[key] = result

    if not found:
        logger.warning(S.SHAPE_TOO_SPARSE.format(shape=shape.name))
    elif len(found) < n:
        logger.warning(
            S.PARTIAL_SAMPLE.format(shape=shape.name, got=len(found), wanted=n, attempts=attempts)
        )
    return list(found.values())


def _per_shape(work: Callable[[str], list], shapes: Sequence[str], threads: int = 1) -> list:
    """Run ``work`` per shape; results are concatenated in shape order."""
    if threads > 1 and len(shapes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, shapes))
    else:
        parts = [work(s) for s in shapes]
    return list(itertools.chain.from_iterable(parts))


def _check_training_shapes(shapes: Iterable[str]) -> list[str]:
    shapes = list(shapes)
    for name in shapes:
        if get_shape(name).is_union:
            raise ContractError(f"shape {name} is evaluation-only")
    return shapes


def _number(samples: list, prefix: str) -> list:
    counters: dict[str, int] = {}
    for sample in samples:
        shape = sample.query.shape or "q"
        idx = counters.get(shape, 0)
        counters[shape] = idx + 1
        sample.id = f"{prefix}-{shape}-{idx}"
    return samples


def _random_train(
    g: KnowledgeGraph, shapes: Sequence[str], n: int, seed: int, strategy: str, threads: int
) -> list[TrainSample]:
    def work(name: str) -> list[TrainSample]:
        rng = sub_rng(seed, "random", name)

        def accept(q):
            positives = answers(q, g)
            return TrainSample(q, frozenset(positives), strategy) if positives else None

        return _sample_shape(g, get_shape(name), n, rng, accept)

    return _per_shape(work, shapes, threads)


def sample_plain(
    g: KnowledgeGraph, shapes: Sequence[str], n: int, seed: int, threads: int = 1
) -> list[TrainSample]:
    """
    Draw up to n random queries per shape with their answers over g.

    Args:
        g: Training graph
        shapes: Training shapes (no unions)
        n: Queries per shape
        seed: Run seed; each shape uses its own named stream

    Returns:
        Samples in shape order
    """
    shapes = _check_training_shapes(shapes)
    samples = _number(_random_train(g, shapes, n, seed, "plain", threads), "plain")
    logger.info(S.SAMPLED.format(count=len(samples), strategy="plain", shapes=",".join(shapes)))
    return samples


def _shaped(members: Iterable[ConjunctiveQuery]) -> list[ConjunctiveQuery]:
    result = []
    for member in members:
        try:
            result.append(member.with_shape(match_shape(member).shape.name))
        except UnsupportedShapeError:
            continue
    return result


def attach_gens(
    samples: Iterable[TrainSample],
    o: Ontology,
    depth: int | None = REWRITE_DEFAULTS.GEN_DEPTH,
    enable_r8: bool = True,
) -> list[TrainSample]:
    """Fill ``gens`` with the shaped generalizations of each sample's query."""
    result = []
    for sample in samples:
        gens = _shaped(gen_closure(sample.query, o, depth, enable_r8).proper_members())
        result.append(TrainSample(sample.query, sample.positives, sample.strategy, gens, sample.id))
    return result


def sample_certain(
    g: KnowledgeGraph,
    o: Ontology,
    shapes: Sequence[str],
    n: int,
    seed: int,
    mode: str = "gen",
    depth: int | None = REWRITE_DEFAULTS.GEN_DEPTH,
    threads: int = 1,
) -> list[TrainSample]:
    """
    Random queries over the closure of g with certain answers as positives.

    mode ``gen`` attaches the shaped generalizations to each query and emits
    the ones reached through ontology rules alone as samples of their own;
    mode ``spec`` adds the shaped specializations as samples.
    """
    if mode not in ("gen", "spec"):
        raise ContractError(f"unknown rewriting mode '{mode}'")
    shapes = _check_training_shapes(shapes)
    closure = saturate(g, o)
    base = _random_train(closure, shapes, n, seed, mode, threads)

    seen = {canonical_form(s.query) for s in base}
    extra: dict[str, TrainSample] = {}
    for sample in base:
        if mode == "gen":
            rewritings = gen_closure(sample.query, o, depth)
            sample.gens = _shaped(rewritings.proper_members())
            related = [
                m for m in sample.gens
                if all(step.rule != "R8" for step in rewritings.trace_of(m))
            ]
        else:
            related = _shaped(spec_closure(sample.query, o, depth).proper_members())
        for member in related:
            key = canonical_form(member)
            if key in seen or key in extra or member.is_union:
                continue
            positives = answers(member, closure)
            if positives:
                extra[key] = TrainSample(member, frozenset(positives), mode)

    result = _number(base + [extra[k] for k in sorted(extra)], mode)
    logger.info(S.SAMPLED.format(count=len(result), strategy=mode, shapes=",".join(shapes)))
    return result


# =============================================================================
# VALID LABELINGS
# =============================================================================


def _edge_pairs(shape: QueryShape):
    """Sequential, converging and diverging edge pairs within each branch."""
    sequential, converging, diverging = [], [], []
    for group in shape.branch_edges():
        for i, j in itertools.permutations(group, 2):
            (a, b), (c, d) = shape.edges[i], shape.edges[j]
            if b == c:
                sequential.append((i, j))
            elif i < j and b == d:
                converging.append((i, j))
            elif i < j and a == c:
                diverging.append((i, j))
    return sequential, converging, diverging


def _share_super(o: Ontology, a: str, b: str) -> bool:
    return bool(o.closure.concept_supers(a) & o.closure.concept_supers(b))


def labeling_is_valid(shape: QueryShape, labeling: LabelingFunction, o: Ontology) -> bool:
    """Check every sequential, converging and diverging edge pair against o."""
    sequential, converging, diverging = _edge_pairs(shape)
    derived = o.derived

    def concept(j: int) -> str:
        return labeling.nodes[shape.edges[j][0]].name

    def is_type(j: int) -> bool:
        return labeling.edges[j] == TYPE_RELATION

    for j, rel in enumerate(labeling.edges):
        if rel is None:
            continue
        if is_type(j) and shape.edges[j][0] not in shape.anchors:
            return False

    for i, j in shape.tied:
        if None not in (labeling.edges[i], labeling.edges[j]) and labeling.edges[i] != labeling.edges[j]:
            return False

    for i, j in sequential:
        if labeling.edges[i] is None or labeling.edges[j] is None:
            continue
        if is_type(j):
            return False
        nxt = labeling.edges[j]
        if is_type(i):
            if concept(i) not in derived.head_types(nxt):
                return False
        elif nxt not in derived.follows(labeling.edges[i]):
            return False

    for i, j in converging:
        if labeling.edges[i] is None or labeling.edges[j] is None:
            continue
        if is_type(i) and is_type(j):
            if not _share_super(o, concept(i), concept(j)):
                return False
        elif is_type(i) or is_type(j):
            typed, role = (i, j) if is_type(i) else (j, i)
            if concept(typed) not in derived.tail_types(labeling.edges[role]):
                return False
        elif labeling.edges[j] not in derived.inter_r(labeling.edges[i]):
            return False

    for i, j in diverging:
        if labeling.edges[i] is None or labeling.edges[j] is None:
            continue
        if is_type(i) and is_type(j):
            continue
        if is_type(i) or is_type(j):
            return False
        if labeling.edges[j] not in derived.inter_d(labeling.edges[i]):
            return False
    return True


def _base_nodes(shape: QueryShape) -> dict:
    anchors = set(shape.anchors)
    return {n: None if n in anchors else Var(n) for n in shape.nodes}


def _edge_alphabet(shape: QueryShape, relations: Sequence[str], concepts: Sequence[str]):
    anchors = set(shape.anchors)
    alphabet = []
    for src, _ in shape.edges:
        labels = [(r, None) for r in relations]
        if src in anchors:
            labels += [(TYPE_RELATION, c) for c in concepts]
        alphabet.append(labels)
    return alphabet


def _labeling_from(shape: QueryShape, labels: Sequence[tuple[str, str | None] | None]) -> LabelingFunction:
    """Labeling from per-edge (relation, concept) labels; None leaves an edge open."""
    nodes = _base_nodes(shape)
    for (src, _), label in zip(shape.edges, labels):
        if label is not None and label[0] == TYPE_RELATION:
            nodes[src] = Const(label[1])
    return LabelingFunction(nodes, tuple(None if label is None else label[0] for label in labels))


def valid_labelings(shape: QueryShape | str, o: Ontology) -> list[LabelingFunction]:
    """
    Enumerate relation labels (and type concepts) making the shape valid
    under o. Anchors other than type concepts stay unassigned.
    """
    shape = get_shape(shape) if isinstance(shape, str) else shape
    relations = sorted(o.relations())
    concepts = sorted(o.concepts())
    alphabet = _edge_alphabet(shape, relations, concepts)
    order = shape.topological_edges()
    found: list[LabelingFunction] = []
    labels: list[tuple[str, str | None] | None] = [None] * len(shape.edges)

    def extend(depth: int) -> None:
        if depth == len(order):
            found.append(_labeling_from(shape, labels))
            return
        j = order[depth]
        for label in alphabet[j]:
            labels[j] = label
            if labeling_is_valid(shape, _labeling_from(shape, labels), o):
                extend(depth + 1)
        labels[j] = None

    extend(0)
    return found


# =============================================================================
# STRATEGIC SAMPLING
# =============================================================================


class _TemplateEvaluator:
    """Candidate-set propagation over a template with some anchors left free."""

    def __init__(self, g: KnowledgeGraph, shape: QueryShape):
        self.g = g
        self.shape = shape
        self.type_id = g.symbols.type_id
        self.anchors = set(shape.anchors)
        self._tails: dict[int, frozenset[int]] = {}
        self._heads: dict[int, list[int]] = {}
        # sources before targets
        self.node_order = shape.topological_nodes()
        self.in_edges = {n: [j for j, (_, d) in enumerate(shape.edges) if d == n] for n in shape.nodes}

    def tails(self, rel: int) -> frozenset[int]:
        if rel not in self._tails:
            self._tails[rel] = frozenset(t for _, t in self.g.pairs(rel))
        return self._tails[rel]

    def heads(self, rel: int) -> list[int]:
        if rel not in self._heads:
            self._heads[rel] = sorted({h for h, _ in self.g.pairs(rel)})
        return self._heads[rel]

    def sink(self, rel_ids: Sequence[int | None], fixed: Mapping[str, int]) -> frozenset[int] | None:
        """Candidates for the distinguished node; None means unconstrained."""
        cand: dict[str, frozenset[int] | None] = {}
        for node in self.node_order:
            if node in self.anchors:
                cand[node] = frozenset({fixed[node]}) if node in fixed else None
                continue
            result = None
            for j in self.in_edges[node]:
                rel = rel_ids[j]
                if rel is None:
                    continue
                src = self.shape.edges[j][0]
                if rel == self.type_id:
                    image = self.g.predecessors(fixed[src], rel)
                elif cand[src] is None:
                    image = self.tails(rel)
                else:
                    image = frozenset().union(*(self.g.successors(h, rel) for h in cand[src]))
                result = image if result is None else result & image
                if not result:
                    return frozenset()
            cand[node] = result
        return cand[self.shape.distinguished]


def _resolve_labels(symbols: SymbolTable, labeling: LabelingFunction, shape: QueryShape):
    """Relation ids per edge and fixed concept ids per type anchor, or None if unknown."""
    try:
        rel_ids = [None if r is None else symbols.relation_id(r) for r in labeling.edges]
        fixed = {
            n: symbols.node_id(t.name)
            for n, t in labeling.nodes.items()
            if n in shape.anchors and t is not None
        }
    except UnknownSymbolError:
        return None
    return rel_ids, fixed


def _data_patterns(g: KnowledgeGraph, shape: QueryShape) -> list[LabelingFunction]:
    """Labelings with at least one answer over g for some choice of anchors."""
    symbols = g.symbols
    relations = sorted(symbols.relation_name(r) for r in g.relations_used() if r != symbols.type_id)
    concepts = sorted({symbols.node_name(c) for _, c in g.pairs(symbols.type_id)})
    alphabet = _edge_alphabet(shape, relations, concepts)
    evaluator = _TemplateEvaluator(g, shape)
    order = shape.topological_edges()
    labels: list = [None] * len(shape.edges)
    found = []

    def extend(depth: int) -> None:
        if depth == len(order):
            found.append(_labeling_from(shape, labels))
            return
        j = order[depth]
        for label in alphabet[j]:
            labels[j] = label
            dst = shape.edges[j][1]
            if label[0] == TYPE_RELATION and any(
                labels[k] == label for k in evaluator.in_edges[dst] if k != j
            ):
                continue
            resolved = _resolve_labels(symbols, _labeling_from(shape, labels), shape)
            # None means still unconstrained, which is fine for a prefix
            if resolved is not None and evaluator.sink(*resolved) != frozenset():
                extend(depth + 1)
        labels[j] = None

    extend(0)
    return found


def _placeholder_query(shape: QueryShape, labeling: LabelingFunction) -> ConjunctiveQuery:
    nodes = {
        n: Const(f"{PLACEHOLDER}{n}") if t is None else t for n, t in labeling.nodes.items()
    }
    return instantiate(shape, LabelingFunction(nodes, labeling.edges))


def _pattern_key(q: ConjunctiveQuery) -> str:
    masked = q.with_atoms(
        a.substitute({t: Const(PLACEHOLDER) for t in a.terms() if isinstance(t, Const) and t.name.startswith(PLACEHOLDER)})
        for a in q.atoms
    )
    return canonical_form(masked)


def _generalized_patterns(shape: QueryShape, patterns: list[LabelingFunction], o: Ontology) -> list[LabelingFunction]:
    result = []
    for labeling in patterns:
        q = _placeholder_query(shape, labeling)
        for member in gen_closure(q, o, REWRITE_DEFAULTS.GEN_DEPTH, enable_r8=False).proper_members():
            try:
                match = match_shape(member)
            except UnsupportedShapeError:
                continue
            if match.shape.name != shape.name:
                continue
            nodes = {
                n: None if isinstance(t, Const) and t.name.startswith(PLACEHOLDER) else t
                for n, t in match.nodes.items()
            }
            result.append(LabelingFunction(nodes, match.relations))
    return result


def _iter_anchor_tuples(evaluator: _TemplateEvaluator, rel_ids: list, fixed: dict) -> Iterator[tuple[int, ...]]:
    """Free-anchor assignments whose template still has a candidate answer, in head-id order."""
    shape = evaluator.shape
    free = [n for n in shape.anchors if n not in fixed]
    feeding = {n: next(j for j, (s, _) in enumerate(shape.edges) if s == n) for n in free}
    assignment = dict(fixed)

    def extend(k: int) -> Iterator[tuple[int, ...]]:
        if k == len(free):
            yield tuple(assignment[n] for n in free)
            return
        node = free[k]
        for value in evaluator.heads(rel_ids[feeding[node]]):
            assignment[node] = value
            if evaluator.sink(rel_ids, assignment):
                yield from extend(k + 1)
        assignment.pop(node, None)

    return extend(0)


def _anchor_tuples(
    evaluator: _TemplateEvaluator, rel_ids: list, fixed: dict, limit: int, rng: np.random.Generator
) -> tuple[list[tuple[int, ...]], int]:
    """
    Uniform sample of at most ``limit`` admissible anchor tuples.

    Returns the sample (in enumeration order) and the total number of
    admissible tuples. Reservoir sampling keeps every tuple equally likely
    once the total exceeds the limit.
    """
    reservoir: list[tuple[int, ...]] = []
    slots: list[int] = []
    total = 0
    for item in _iter_anchor_tuples(evaluator, rel_ids, fixed):
        if total < limit:
            reservoir.append(item)
            slots.append(total)
        else:
            j = int(rng.integers(0, total + 1))
            if j < limit:
                reservoir[j] = item
                slots[j] = total
        total += 1
    if total > limit:
        logger.warning(f"shape {evaluator.shape.name}: sampled {limit} of {total} anchor tuples")
    order = sorted(range(len(reservoir)), key=slots.__getitem__)
    return [reservoir[i] for i in order], total


def sample_onto(
    g: KnowledgeGraph,
    o: Ontology,
    shapes: Sequence[str],
    anchor_fraction: float = SAMPLER_DEFAULTS.ANCHOR_FRACTION,
    cap: int | Mapping[str, int] | None = None,
    seed: int = 0,
    threads: int = 1,
) -> list[TrainSample]:
    """
    Strategic training queries.

    Per shape: valid labelings plus data patterns of g and their
    generalizations; each labeled query keeps ceil(anchor_fraction * m) of
    its m admissible anchor tuples (those with a certain answer), and the
    shape total is capped.
    """
    if not 0.0 < anchor_fraction <= 1.0:
        raise ContractError(f"anchor_fraction must lie in (0, 1], got {anchor_fraction}")
    shapes = _check_training_shapes(shapes)
    closure = saturate(g, o)
    symbols = g.symbols

    def work(name: str) -> list[TrainSample]:
        shape = get_shape(name)
        rng = sub_rng(seed, "onto", name)
        data = _data_patterns(g, shape)
        candidates = valid_labelings(shape, o) + data + _generalized_patterns(shape, data, o)
        patterns: dict[str, LabelingFunction] = {}
        for labeling in candidates:
            patterns.setdefault(_pattern_key(_placeholder_query(shape, labeling)), labeling)
        if not patterns:
            logger.warning(S.NO_LABELINGS.format(shape=name))
            return []

        evaluator = _TemplateEvaluator(closure, shape)
        chosen: dict[str, TrainSample] = {}
        for key in sorted(patterns):
            labeling = patterns[key]
            resolved = _resolve_labels(symbols, labeling, shape)
            if resolved is None:
                continue
            rel_ids, fixed = resolved
            tuples, total = _anchor_tuples(evaluator, rel_ids, fixed, SAMPLER_DEFAULTS.MAX_ANCHOR_TUPLES, rng)
            if not tuples:
                continue
            keep = min(len(tuples), math.ceil(anchor_fraction * total))
            picks = sorted(rng.choice(len(tuples), size=keep, replace=False).tolist())
            free = [n for n in shape.anchors if n not in fixed]
            for idx in picks:
                nodes = dict(labeling.nodes)
                for n, value in zip(free, tuples[idx]):
                    nodes[n] = Const(symbols.node_name(value))
                q = instantiate(shape, LabelingFunction(nodes, labeling.edges))
                qkey = canonical_form(q)
                if qkey in chosen:
                    continue
                positives = answers(q, closure)
                if positives:
                    chosen[qkey] = TrainSample(q, frozenset(positives), "onto")

        samples = [chosen[k] for k in sorted(chosen)]
        limit = cap.get(name) if isinstance(cap, Mapping) else cap
        if limit is not None and len(samples) > limit:
            keep_idx = sorted(rng.choice(len(samples), size=limit, replace=False).tolist())
            samples = [samples[i] for i in keep_idx]
        return samples

    result = _number(_per_shape(work, shapes, threads), "onto")
    logger.info(S.SAMPLED.format(count=len(result), strategy="onto", shapes=",".join(shapes)))
    return result


# =============================================================================
# NEGATIVES
# =============================================================================


def complement(positives: Iterable[int], pool: KnowledgeGraph | Sequence[int]) -> np.ndarray:
    entities = pool.entities() if isinstance(pool, KnowledgeGraph) else pool
    excluded = set(positives)
    return np.array([e for e in entities if e not in excluded], dtype=np.int64)


def draw_negatives(candidates: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if len(candidates) == 0:
        raise SamplingError(S.NO_NEGATIVES)
    return rng.choice(candidates, size=k, replace=len(candidates) < k)


def negatives(
    positives: Iterable[int],
    g: KnowledgeGraph | Sequence[int],
    k: int,
    seed: int | np.random.Generator,
) -> list[int]:
    """
    k entities outside ``positives``, uniformly; drawn with replacement only
    when fewer than k candidates exist.

    Raises:
        SamplingError: every entity is a positive
    """
    candidates = complement(positives, g)
    if len(candidates) == 0:
        raise SamplingError(S.NO_NEGATIVES)
    return draw_negatives(candidates, k, as_rng(seed)).tolist()


# =============================================================================
# EVALUATION SETS
# =============================================================================


@dataclass(frozen=True)
class AnswerPartition:
    easy: frozenset[int]
    hard: frozenset[int]
    plain: frozenset[int]

    @property
    def full(self) -> frozenset[int]:
        return self.easy | self.hard


def _case_graphs(case: str, bundle: SplitBundle, o: Ontology, split: str):
    """(larger graph, smaller graph, plain counterpart of the larger graph)."""
    if split not in ("valid", "test"):
        raise ContractError(f"unknown split '{split}'")
    if case == "A":
        if split == "test":
            return bundle.g_test, bundle.g_valid, bundle.g_test
        return bundle.g_valid, bundle.g_train, bundle.g_valid
    if case == "B":
        return saturate(bundle.g_train, o), bundle.g_train, bundle.g_train
    if case == "C":
        if split == "test":
            return saturate(bundle.g_test, o), saturate(bundle.g_valid, o), bundle.g_test
        return saturate(bundle.g_valid, o), saturate(bundle.g_train, o), bundle.g_valid
    raise ContractError(f"unknown test case '{case}'")


def partition_answers(
    q: ConjunctiveQuery, case: str, bundle: SplitBundle, o: Ontology, split: str = "test"
) -> AnswerPartition:
    """Easy and hard answers of q for a test case."""
    large, small, plain_graph = _case_graphs(case, bundle, o, split)
    full = frozenset(answers(q, large))
    easy = frozenset(answers(q, small)) & full
    return AnswerPartition(easy=easy, hard=full - easy, plain=frozenset(answers(q, plain_graph)))


def build_eval(
    case: str,
    bundle: SplitBundle,
    o: Ontology,
    shapes: Sequence[str] = ALL_SHAPES,
    n: int = 10,
    seed: int = 0,
    split: str = "test",
    exclude: Iterable[str] = (),
    threads: int = 1,
) -> list[EvalSample]:
    """
    Evaluation queries with a non-empty hard answer set for case A, B or C.

    Args:
        case: ``A`` (test vs valid), ``B`` (closure vs plain train) or ``C`` (closed test vs closed valid)
        bundle: Nested split
        o: Ontology
        shapes: Any of the nine shapes
        n: Queries per shape
        seed: Run seed
        split: ``test`` or ``valid`` (valid shifts A and C one graph down)
        exclude: Canonical forms of queries to avoid (training and validation queries)

    Returns:
        Samples in shape order
    """
    large, small, _ = _case_graphs(case, bundle, o, split)
    excluded = frozenset(exclude)

    def work(name: str) -> list[EvalSample]:
        rng = sub_rng(seed, "eval", case, split, name)

        def accept(q):
            part = partition_answers(q, case, bundle, o, split)
            if not part.hard:
                return None
            return EvalSample(q, part.easy, part.hard, case, plain_answers=part.plain)

        return _sample_shape(large, get_shape(name), n, rng, accept, small=small, exclude=excluded)

    samples = _number(_per_shape(work, list(shapes), threads), f"{case}-{split}")
    logger.info(S.EVAL_BUILT.format(count=len(samples), case=case, split=split))
    return samples
