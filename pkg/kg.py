"""Knowledge graph store: symbol interning, indexed triples, splits and stats.

Unary facts are stored as ``type`` triples. Entities and concepts share one
node id space (both get point embeddings); relations have their own.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple, TextIO

from config import logger
from constants import TYPE_RELATION
from errors import ConfigError, ContractError, ParseError, SchemaError, UnknownSymbolError
import strings as S
from utils import format_table, sub_rng


ENTITY = "entity"
CONCEPT = "concept"
RELATION = "relation"


@dataclass(frozen=True)
class Symbol:
    id: int
    name: str
    kind: str


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class SymbolTable:
    """Name <-> id bijections for nodes (entities, concepts) and relations.

    Append-only: several graphs, an ontology and query files may share one
    table. The reserved relation ``type`` always has relation id 0.
    """

    def __init__(self):
        self._node_names: list[str] = []
        self._node_kinds: list[str] = []
        self._node_ids: dict[str, int] = {}
        self._relation_names: list[str] = []
        self._relation_ids: dict[str, int] = {}
        self.type_id = self.intern_relation(TYPE_RELATION)

    # --- interning ---

    def _intern_node(self, name: str, kind: str) -> int:
        node_id = self._node_ids.get(name)
        if node_id is not None:
            existing = self._node_kinds[node_id]
            if existing != kind:
                if kind == CONCEPT:
                    raise SchemaError(
                        S.ENTITY_AS_CONCEPT.format(name=name, relation=TYPE_RELATION)
                    )
                raise SchemaError(S.CONCEPT_AS_ENTITY.format(name=name))
            return node_id
        node_id = len(self._node_names)
        self._node_names.append(name)
        self._node_kinds.append(kind)
        self._node_ids[name] = node_id
        return node_id

    def intern_entity(self, name: str) -> int:
        return self._intern_node(name, ENTITY)

    def intern_concept(self, name: str) -> int:
        return self._intern_node(name, CONCEPT)

    def intern_relation(self, name: str) -> int:
        rel_id = self._relation_ids.get(name)
        if rel_id is None:
            rel_id = len(self._relation_names)
            self._relation_names.append(name)
            self._relation_ids[name] = rel_id
        return rel_id

    # --- lookup ---

    def node_id(self, name: str | int) -> int:
        if isinstance(name, int):
            if 0 <= name < len(self._node_names):
                return name
            raise UnknownSymbolError(S.UNKNOWN_SYMBOL.format(kind="node id", name=name))
        try:
            return self._node_ids[name]
        except KeyError:
            raise UnknownSymbolError(
                S.UNKNOWN_SYMBOL.format(kind="entity or concept", name=name)
            ) from None

    def entity_id(self, name: str | int) -> int:
        node_id = self.node_id(name)
        if self._node_kinds[node_id] != ENTITY:
            raise SchemaError(S.CONCEPT_AS_ENTITY.format(name=self._node_names[node_id]))
        return node_id

    def concept_id(self, name: str | int) -> int:
        node_id = self.node_id(name)
        if self._node_kinds[node_id] != CONCEPT:
            raise SchemaError(
                S.ENTITY_AS_CONCEPT.format(
                    name=self._node_names[node_id], relation=TYPE_RELATION
                )
            )
        return node_id

    def relation_id(self, name: str | int) -> int:
        if isinstance(name, int):
            if 0 <= name < len(self._relation_names):
                return name
            raise UnknownSymbolError(S.UNKNOWN_SYMBOL.format(kind="relation id", name=name))
        try:
            return self._relation_ids[name]
        except KeyError:
            raise UnknownSymbolError(
                S.UNKNOWN_SYMBOL.format(kind="relation", name=name)
            ) from None

    def has_node(self, name: str) -> bool:
        return name in self._node_ids

    def has_relation(self, name: str) -> bool:
        return name in self._relation_ids

    def node_name(self, node_id: int) -> str:
        return self._node_names[node_id]

    def node_kind(self, node_id: int) -> str:
        return self._node_kinds[node_id]

    def relation_name(self, rel_id: int) -> str:
        return self._relation_names[rel_id]

    def is_concept(self, name: str) -> bool:
        node_id = self._node_ids.get(name)
        return node_id is not None and self._node_kinds[node_id] == CONCEPT

    def is_entity(self, name: str) -> bool:
        node_id = self._node_ids.get(name)
        return node_id is not None and self._node_kinds[node_id] == ENTITY

    @property
    def num_nodes(self) -> int:
        return len(self._node_names)

    @property
    def num_relations(self) -> int:
        return len(self._relation_names)

    def entity_ids(self) -> list[int]:
        return [i for i, k in enumerate(self._node_kinds) if k == ENTITY]

    def concept_ids(self) -> list[int]:
        return [i for i, k in enumerate(self._node_kinds) if k == CONCEPT]

    def relation_names(self) -> list[str]:
        return list(self._relation_names)

    def symbols(self) -> Iterator[Symbol]:
        for i, (name, kind) in enumerate(zip(self._node_names, self._node_kinds)):
            yield Symbol(i, name, kind)
        for i, name in enumerate(self._relation_names):
            yield Symbol(i, name, RELATION)

    # --- persistence (checkpoint vocabularies) ---

    def to_dict(self) -> dict:
        return {
            "nodes": [[n, k] for n, k in zip(self._node_names, self._node_kinds)],
            "relations": list(self._relation_names),
        }

    @classmethod
    def from_dict(cls, data: dict) -> SymbolTable:
        table = cls()
        for name in data["relations"]:
            table.intern_relation(name)
        for name, kind in data["nodes"]:
            table._intern_node(name, kind)
        return table


class KnowledgeGraph:
    """Immutable triple set with subject, object and relation indexes."""

    def __init__(self, symbols: SymbolTable, triples: Iterable[Triple] = ()):
        self.symbols = symbols
        self._triples = frozenset(Triple(*t) for t in triples)

        spo: dict[int, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
        ops: dict[int, dict[int, set[int]]] = defaultdict(lambda: defaultdict(set))
        by_p: dict[int, set[tuple[int, int]]] = defaultdict(set)
        for h, r, t in self._triples:
            spo[h][r].add(t)
            ops[t][r].add(h)
            by_p[r].add((h, t))

        self._spo = {h: {r: frozenset(ts) for r, ts in rs.items()} for h, rs in spo.items()}
        self._ops = {t: {r: frozenset(hs) for r, hs in rs.items()} for t, rs in ops.items()}
        self._p = {r: frozenset(pairs) for r, pairs in by_p.items()}

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self._triples))

    def __contains__(self, triple: object) -> bool:
        return triple in self._triples

    @property
    def triples(self) -> frozenset[Triple]:
        return self._triples

    def successors(self, head: str | int, relation: str | int) -> frozenset[int]:
        h = self.symbols.node_id(head)
        r = self.symbols.relation_id(relation)
        return self._spo.get(h, {}).get(r, frozenset())

    def predecessors(self, tail: str | int, relation: str | int) -> frozenset[int]:
        t = self.symbols.node_id(tail)
        r = self.symbols.relation_id(relation)
        return self._ops.get(t, {}).get(r, frozenset())

    def pairs(self, relation: str | int) -> frozenset[tuple[int, int]]:
        r = self.symbols.relation_id(relation)
        return self._p.get(r, frozenset())

    def out_edges(self, head: int) -> dict[int, frozenset[int]]:
        """relation id -> tails, for one head."""
        return self._spo.get(head, {})

    def in_edges(self, tail: int) -> dict[int, frozenset[int]]:
        """relation id -> heads, for one tail."""
        return self._ops.get(tail, {})

    def relations_used(self) -> set[int]:
        return set(self._p)

    def heads(self) -> set[int]:
        return set(self._spo)

    def tails(self) -> set[int]:
        return set(self._ops)

    def entities(self) -> list[int]:
        """Candidate pool: every entity of the shared symbol table."""
        return self.symbols.entity_ids()

    def union(self, triples: Iterable[Triple]) -> KnowledgeGraph:
        return KnowledgeGraph(self.symbols, self._triples | frozenset(triples))

    def issubset(self, other: KnowledgeGraph) -> bool:
        return self._triples <= other._triples

    def name_triple(self, triple: Triple) -> tuple[str, str, str]:
        h, r, t = triple
        return (
            self.symbols.node_name(h),
            self.symbols.relation_name(r),
            self.symbols.node_name(t),
        )


@dataclass(frozen=True)
class SplitBundle:
    g_train: KnowledgeGraph
    g_valid: KnowledgeGraph
    g_test: KnowledgeGraph

    def is_nested(self) -> bool:
        return self.g_train.issubset(self.g_valid) and self.g_valid.issubset(self.g_test)


@dataclass(frozen=True)
class StatsRecord:
    triples: int
    entities: int
    relations: int
    concepts: int
    axioms: int | None = None
    closure_triples: int | None = None

    def as_dict(self) -> dict[str, int]:
        values = {
            "triples": self.triples,
            "entities": self.entities,
            "relations": self.relations,
            "concepts": self.concepts,
        }
        if self.axioms is not None:
            values["axioms"] = self.axioms
            values["closure_triples"] = self.closure_triples
        return values

    def as_row(self) -> list[int | str]:
        return [
            self.triples,
            self.entities,
            self.relations,
            self.concepts,
            "-" if self.axioms is None else self.axioms,
            "-" if self.closure_triples is None else self.closure_triples,
        ]

    def format_row(self) -> str:
        """The counts as a one-row table under the dataset-statistics headers."""
        return format_table(S.STATS_COLUMNS, [self.as_row()])


def _iter_lines(source: BinaryIO | Iterable[bytes]) -> Iterator[tuple[int, str]]:
    for line_no, raw in enumerate(source, start=1):
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        text = text.rstrip("\r\n")
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        yield line_no, text


def load_triples(
    source: BinaryIO | Iterable[bytes], symbols: SymbolTable | None = None
) -> KnowledgeGraph:
    """
    Load a UTF-8 TSV triple file.

    Args:
        source: Binary stream (or iterable of byte lines) of ``head<TAB>relation<TAB>tail``
        symbols: Existing table to intern into; a new one is created if omitted

    Returns:
        The graph; ``len(graph)`` is the number of distinct triples
    """
    symbols = symbols if symbols is not None else SymbolTable()
    triples: set[Triple] = set()
    for line_no, text in _iter_lines(source):
        fields = text.split("\t")
        if len(fields) != 3:
            raise ParseError(S.TRIPLE_FIELD_COUNT.format(count=len(fields)), line_no)
        head, relation, tail = (f.strip() for f in fields)
        if symbols.is_concept(head):
            raise SchemaError(f"line {line_no}: " + S.CONCEPT_AS_HEAD.format(name=head))
        try:
            h = symbols.intern_entity(head)
            r = symbols.intern_relation(relation)
            if r == symbols.type_id:
                t = symbols.intern_concept(tail)
            else:
                t = symbols.intern_entity(tail)
        except SchemaError as e:
            raise SchemaError(f"line {line_no}: {e}") from None
        triples.add(Triple(h, r, t))

    graph = KnowledgeGraph(symbols, triples)
    logger.debug(f"Loaded {len(graph)} distinct triples")
    return graph


def dump_triples(g: KnowledgeGraph, stream: TextIO) -> int:
    """Write the graph as TSV in id order; returns the number of lines."""
    count = 0
    for triple in g:
        stream.write("\t".join(g.name_triple(triple)) + "\n")
        count += 1
    return count


def _removal_count(n: int, ratio: float) -> int:
    if n <= 1:
        return 0
    return max(1, math.floor(ratio * n + 1e-9))


def split(g: KnowledgeGraph, ratio: float, seed: int) -> SplitBundle:
    """
    Nested train/valid/test split.

    g_test is g itself; g_valid drops floor(ratio * |g|) uniformly chosen
    triples (at least one when |g| > 1); g_train drops a further fraction
    of g_valid.

    Args:
        g: Non-empty graph
        ratio: Fraction in (0, 1) removed at each step
        seed: Run seed

    Returns:
        SplitBundle sharing g's symbol table
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(S.RATIO_RANGE.format(ratio=ratio))
    if len(g) == 0:
        raise ContractError("cannot split an empty graph")

    rng = sub_rng(seed, "split")

    def remove_fraction(triples: list[Triple]) -> list[Triple]:
        count = _removal_count(len(triples), ratio)
        drop = set(rng.choice(len(triples), size=count, replace=False).tolist())
        return [t for i, t in enumerate(triples) if i not in drop]

    test_triples = sorted(g.triples)
    valid_triples = remove_fraction(test_triples)
    train_triples = remove_fraction(valid_triples)
    bundle = SplitBundle(
        g_train=KnowledgeGraph(g.symbols, train_triples),
        g_valid=KnowledgeGraph(g.symbols, valid_triples),
        g_test=g,
    )
    logger.info(
        f"Split {len(g)} triples into train {len(bundle.g_train)}, "
        f"valid {len(bundle.g_valid)}, test {len(bundle.g_test)}"
    )
    return bundle


def stats(g: KnowledgeGraph, ontology=None) -> StatsRecord:
    """Dataset counts; closure size only when an ontology is given."""
    entities: set[int] = set()
    concepts: set[int] = set()
    for h, r, t in g.triples:
        entities.add(h)
        if r == g.symbols.type_id:
            concepts.add(t)
        else:
            entities.add(t)

    axioms = closure_triples = None
    if ontology is not None:
        from ontology import saturate

        axioms = len(ontology)
        closure_triples = len(saturate(g, ontology))

    return StatsRecord(
        triples=len(g),
        entities=len(entities),
        relations=len(g.relations_used()),
        concepts=len(concepts),
        axioms=axioms,
        closure_triples=closure_triples,
    )
