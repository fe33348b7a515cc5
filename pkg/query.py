"""Conjunctive queries: terms, atoms, computation graphs, the nine supported
shapes, answer evaluation and the JSON-lines query file format.

A role atom r(T1, T2) is the computation-graph edge T1 -> T2. A type atom
type(T, A) is the edge A -> T, so concept constants sit at sources just like
entity anchors. Union queries are kept in disjunctive normal form: one branch
per union group, answers are the union over branches.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, TextIO, Union

import networkx as nx
from networkx.algorithms.isomorphism import MultiDiGraphMatcher

from constants import TYPE_RELATION
from errors import (
    ContractError,
    InstantiationError,
    ParseError,
    SchemaError,
    UnsupportedShapeError,
)
from kg import KnowledgeGraph, SymbolTable
import strings as S


# =============================================================================
# TERMS, ATOMS, QUERIES
# =============================================================================


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


@dataclass(frozen=True)
class Const:
    name: str

    def __str__(self) -> str:
        return self.name


Term = Union[Var, Const]


def parse_term(text: str) -> Term:
    return Var(text[1:]) if text.startswith("?") else Const(text)


@dataclass(frozen=True)
class Atom:
    relation: str
    head: Term
    tail: Term

    @property
    def is_type(self) -> bool:
        return self.relation == TYPE_RELATION

    def terms(self) -> tuple[Term, Term]:
        return (self.head, self.tail)

    def variables(self) -> set[Var]:
        return {t for t in self.terms() if isinstance(t, Var)}

    def edge(self) -> tuple[Term, Term]:
        """(source, target) in the computation graph."""
        if self.is_type:
            return (self.tail, self.head)
        return (self.head, self.tail)

    def substitute(self, mapping: Mapping[Term, Term]) -> Atom:
        return Atom(self.relation, mapping.get(self.head, self.head), mapping.get(self.tail, self.tail))

    def __str__(self) -> str:
        return f"{self.relation}({self.head},{self.tail})"


@dataclass(frozen=True)
class ConjunctiveQuery:
    """
    A monadic CQ. ``union_groups`` partitions atom indices into DNF branches;
    None means a single branch holding every atom.
    """

    atoms: tuple[Atom, ...]
    answer_var: Var
    union_groups: tuple[tuple[int, ...], ...] | None = None
    shape: str | None = field(default=None, compare=False)

    @classmethod
    def union_of(cls, branches: Sequence[ConjunctiveQuery], shape: str | None = None) -> ConjunctiveQuery:
        atoms: list[Atom] = []
        groups = []
        for branch in branches:
            start = len(atoms)
            atoms.extend(branch.atoms)
            groups.append(tuple(range(start, len(atoms))))
        return cls(tuple(atoms), branches[0].answer_var, tuple(groups), shape)

    @property
    def is_union(self) -> bool:
        return self.union_groups is not None and len(self.union_groups) > 1

    def branches(self) -> list[ConjunctiveQuery]:
        if not self.is_union:
            return [self]
        return [
            ConjunctiveQuery(tuple(self.atoms[i] for i in group), self.answer_var)
            for group in self.union_groups
        ]

    def variables(self) -> set[Var]:
        found = set()
        for atom in self.atoms:
            found |= atom.variables()
        return found

    def constants(self) -> set[Const]:
        return {t for a in self.atoms for t in a.terms() if isinstance(t, Const)}

    def relations(self) -> set[str]:
        return {a.relation for a in self.atoms}

    def occurrences(self, term: Term) -> int:
        return sum(1 for a in self.atoms for t in a.terms() if t == term)

    def with_atoms(self, atoms: Iterable[Atom]) -> ConjunctiveQuery:
        return ConjunctiveQuery(tuple(atoms), self.answer_var)

    def with_shape(self, shape: str | None) -> ConjunctiveQuery:
        return ConjunctiveQuery(self.atoms, self.answer_var, self.union_groups, shape)

    def fresh_var(self, prefix: str = "Z") -> Var:
        taken = {v.name for v in self.variables()}
        for i in itertools.count():
            name = prefix if i == 0 else f"{prefix}{i}"
            if name not in taken:
                return Var(name)

    def __str__(self) -> str:
        body = " | ".join(" & ".join(str(a) for a in b.atoms) for b in self.branches())
        return f"q({self.answer_var}) <- {body}"


# =============================================================================
# COMPUTATION GRAPH
# =============================================================================


def computation_graph(q: ConjunctiveQuery) -> nx.MultiDiGraph:
    """
    Build the query DAG. Variables are shared nodes; each constant occurrence
    is its own node ``(constant, atom index)`` so repeated anchors stay sources.
    """
    graph = nx.MultiDiGraph()

    def node_for(term: Term, atom_index: int):
        key = term if isinstance(term, Var) else (term, atom_index)
        if key not in graph:
            if isinstance(term, Const):
                role = "anchor"
            elif term == q.answer_var:
                role = "answer"
            else:
                role = "var"
            graph.add_node(key, term=term, role=role)
        return key

    for i, atom in enumerate(q.atoms):
        src, dst = atom.edge()
        graph.add_edge(node_for(src, i), node_for(dst, i), relation=atom.relation, atom=i)
    return graph


def is_in_tree(q: ConjunctiveQuery, graph: nx.MultiDiGraph | None = None) -> bool:
    """True when every path leads to the answer variable and sources are constants."""
    graph = graph if graph is not None else computation_graph(q)
    if q.answer_var not in graph or not nx.is_directed_acyclic_graph(graph):
        return False
    for node, data in graph.nodes(data=True):
        out = graph.out_degree(node)
        if data["role"] == "answer":
            if out != 0:
                return False
        elif out != 1:
            return False
        if data["role"] != "anchor" and graph.in_degree(node) == 0:
            return False
    return True


# =============================================================================
# SHAPES
# =============================================================================


@dataclass(frozen=True)
class QueryShape:
    """Unlabeled query template; ``tied`` lists edge pairs sharing one relation."""

    name: str
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    distinguished: str = "X"
    union_groups: tuple[tuple[int, ...], ...] | None = None
    tied: tuple[tuple[int, int], ...] = ()

    @property
    def anchors(self) -> tuple[str, ...]:
        targets = {d for _, d in self.edges}
        return tuple(n for n in self.nodes if n not in targets)

    @property
    def is_union(self) -> bool:
        return self.union_groups is not None

    def branch_edges(self) -> list[tuple[int, ...]]:
        if self.union_groups is None:
            return [tuple(range(len(self.edges)))]
        return list(self.union_groups)

    def topological_nodes(self) -> list[str]:
        graph = nx.DiGraph()
        graph.add_nodes_from(self.nodes)
        graph.add_edges_from(self.edges)
        return list(nx.lexicographical_topological_sort(graph))

    def topological_edges(self) -> list[int]:
        order = {n: i for i, n in enumerate(self.topological_nodes())}
        return sorted(range(len(self.edges)), key=lambda j: (order[self.edges[j][0]], j))

    def template_graph(self, edge_ids: Sequence[int] | None = None) -> nx.MultiDiGraph:
        edge_ids = range(len(self.edges)) if edge_ids is None else edge_ids
        graph = nx.MultiDiGraph()
        anchors = set(self.anchors)
        for j in edge_ids:
            for node in self.edges[j]:
                if node not in graph:
                    if node in anchors:
                        role = "anchor"
                    elif node == self.distinguished:
                        role = "answer"
                    else:
                        role = "var"
                    graph.add_node(node, role=role)
            graph.add_edge(*self.edges[j], slot=j)
        return graph


SHAPES: dict[str, QueryShape] = {
    shape.name: shape
    for shape in (
        QueryShape("1p", ("a1", "X"), (("a1", "X"),)),
        QueryShape("2p", ("a1", "V1", "X"), (("a1", "V1"), ("V1", "X"))),
        QueryShape("3p", ("a1", "V1", "V2", "X"), (("a1", "V1"), ("V1", "V2"), ("V2", "X"))),
        QueryShape("2i", ("a1", "a2", "X"), (("a1", "X"), ("a2", "X"))),
        QueryShape("3i", ("a1", "a2", "a3", "X"), (("a1", "X"), ("a2", "X"), ("a3", "X"))),
        QueryShape("ip", ("a1", "a2", "V1", "X"), (("a1", "V1"), ("a2", "V1"), ("V1", "X"))),
        QueryShape("pi", ("a1", "a2", "V1", "X"), (("a1", "V1"), ("V1", "X"), ("a2", "X"))),
        QueryShape("2u", ("a1", "a2", "X"), (("a1", "X"), ("a2", "X")), union_groups=((0,), (1,))),
        QueryShape(
            "up",
            ("a1", "a2", "V1", "V2", "X"),
            (("a1", "V1"), ("V1", "X"), ("a2", "V2"), ("V2", "X")),
            union_groups=((0, 1), (2, 3)),
            tied=((1, 3),),
        ),
    )
}


def get_shape(name: str) -> QueryShape:
    try:
        return SHAPES[name]
    except KeyError:
        raise UnsupportedShapeError(S.UNKNOWN_SHAPE.format(shape=name)) from None


@dataclass(frozen=True)
class ShapeMatch:
    """A query bound to a template: node -> term and edge slot -> relation."""

    shape: QueryShape
    nodes: Mapping[str, Term]
    relations: tuple[str, ...]

    @property
    def anchors(self) -> tuple[str, ...]:
        return tuple(self.nodes[n].name for n in self.shape.anchors)


def _match_branch(branch: ConjunctiveQuery, shape: QueryShape, edge_ids: Sequence[int]):
    query_graph = computation_graph(branch)
    template = shape.template_graph(edge_ids)
    if query_graph.number_of_edges() != template.number_of_edges():
        return None
    matcher = MultiDiGraphMatcher(query_graph, template, node_match=lambda a, b: a["role"] == b["role"])
    if not matcher.is_isomorphic():
        return None
    inverse = {t: qn for qn, t in matcher.mapping.items()}
    nodes = {t: query_graph.nodes[qn]["term"] for t, qn in inverse.items()}
    relations = {}
    for j in edge_ids:
        src, dst = shape.edges[j]
        data = query_graph.get_edge_data(inverse[src], inverse[dst])
        relations[j] = next(iter(data.values()))["relation"]
    return nodes, relations


def match_shape(q: ConjunctiveQuery) -> ShapeMatch:
    """
    Identify which supported shape q instantiates.

    Raises:
        UnsupportedShapeError: q matches none of the nine templates
    """
    branches = q.branches()
    candidates = [s for s in SHAPES.values() if s.is_union == q.is_union]
    for shape in candidates:
        groups = shape.branch_edges()
        if len(groups) != len(branches):
            continue
        nodes: dict[str, Term] = {}
        relations: dict[int, str] = {}
        for branch, edge_ids in zip(branches, groups):
            found = _match_branch(branch, shape, edge_ids)
            if found is None:
                break
            nodes.update(found[0])
            relations.update(found[1])
        else:
            if all(relations[i] == relations[j] for i, j in shape.tied):
                return ShapeMatch(shape, nodes, tuple(relations[j] for j in range(len(shape.edges))))
    raise UnsupportedShapeError(S.UNSUPPORTED_SHAPE.format(query=q))


def shape_of(q: ConjunctiveQuery) -> str:
    return match_shape(q).shape.name


def has_supported_shape(q: ConjunctiveQuery, shapes: Iterable[str] | None = None) -> bool:
    try:
        name = shape_of(q)
    except UnsupportedShapeError:
        return False
    return shapes is None or name in shapes


@dataclass(frozen=True)
class LabelingFunction:
    """Assignment of terms to template nodes and relations to template edges."""

    nodes: Mapping[str, Term]
    edges: tuple[str | None, ...]


def instantiate(
    shape: QueryShape | str,
    labeling: LabelingFunction,
    symbols: SymbolTable | None = None,
) -> ConjunctiveQuery:
    """
    Build the CQ a labeled template denotes.

    Anchors must be constants, the distinguished node the answer variable and
    every other node a variable. A ``type`` edge reads its concept from its
    source anchor. With ``symbols`` the constant kinds are checked as well.
    """
    shape = get_shape(shape) if isinstance(shape, str) else shape
    for node in shape.nodes:
        if labeling.nodes.get(node) is None:
            raise InstantiationError(S.LABELING_MISSING.format(what="node", item=node))
    if len(labeling.edges) != len(shape.edges) or any(r is None for r in labeling.edges):
        raise InstantiationError(S.LABELING_MISSING.format(what="edge", item="relation"))

    anchors = set(shape.anchors)
    for node in shape.nodes:
        term = labeling.nodes[node]
        wants_const = node in anchors
        if wants_const != isinstance(term, Const):
            raise InstantiationError(S.LABELING_DOMAIN.format(what="node", item=node, value=term))

    for i, j in shape.tied:
        if labeling.edges[i] != labeling.edges[j]:
            raise InstantiationError(
                S.LABELING_DOMAIN.format(what="edge", item=j, value=labeling.edges[j])
            )

    atoms = []
    for j, (src, dst) in enumerate(shape.edges):
        relation = labeling.edges[j]
        head, tail = labeling.nodes[src], labeling.nodes[dst]
        if relation == TYPE_RELATION:
            if src not in anchors:
                raise InstantiationError(S.LABELING_DOMAIN.format(what="edge", item=j, value=relation))
            atoms.append(Atom(relation, tail, head))
        else:
            atoms.append(Atom(relation, head, tail))
        if symbols is not None and src in anchors:
            try:
                if relation == TYPE_RELATION:
                    symbols.concept_id(head.name)
                else:
                    symbols.entity_id(head.name)
            except SchemaError:
                raise InstantiationError(
                    S.LABELING_DOMAIN.format(what="node", item=src, value=head)
                ) from None

    answer = labeling.nodes[shape.distinguished]
    return ConjunctiveQuery(tuple(atoms), answer, shape.union_groups, shape.name)


# =============================================================================
# ANSWERS
# =============================================================================


def _resolve(atom: Atom, symbols: SymbolTable):
    """(relation id, head, tail) with constants as node ids and vars kept."""

    def term_id(term: Term):
        return term if isinstance(term, Var) else symbols.node_id(term.name)

    return symbols.relation_id(atom.relation), term_id(atom.head), term_id(atom.tail)


def _propagate(q: ConjunctiveQuery, graph: nx.MultiDiGraph, g: KnowledgeGraph) -> set[int]:
    candidates: dict = {}
    for node in nx.topological_sort(graph):
        data = graph.nodes[node]
        if data["role"] == "anchor":
            candidates[node] = {g.symbols.node_id(data["term"].name)}
            continue
        incoming = None
        for src, _, edge in graph.in_edges(node, data=True):
            rel = g.symbols.relation_id(edge["relation"])
            image: set[int] = set()
            if rel == g.symbols.type_id:
                for concept in candidates[src]:
                    image |= g.predecessors(concept, rel)
            else:
                for head in candidates[src]:
                    image |= g.successors(head, rel)
            incoming = image if incoming is None else incoming & image
            if not incoming:
                break
        candidates[node] = incoming or set()
    return candidates[q.answer_var]


def _join(q: ConjunctiveQuery, g: KnowledgeGraph) -> set[int]:
    atoms = [_resolve(a, g.symbols) for a in dict.fromkeys(q.atoms)]
    results: set[int] = set()

    def value(term, env):
        return env.get(term) if isinstance(term, Var) else term

    def solve(remaining: list, env: dict) -> None:
        if not remaining:
            results.add(env[q.answer_var])
            return
        best = max(
            range(len(remaining)),
            key=lambda i: sum(value(t, env) is not None for t in remaining[i][1:]),
        )
        rel, head, tail = remaining[best]
        rest = remaining[:best] + remaining[best + 1 :]
        h, t = value(head, env), value(tail, env)
        if h is not None and t is not None:
            if t in g.successors(h, rel):
                solve(rest, env)
        elif h is not None:
            for t in g.successors(h, rel):
                solve(rest, {**env, tail: t})
        elif t is not None:
            for h in g.predecessors(t, rel):
                solve(rest, {**env, head: h})
        else:
            for h, t in g.pairs(rel):
                if head == tail and h != t:
                    continue
                solve(rest, {**env, head: h, tail: t})

    solve(atoms, {})
    return results


def answers(q: ConjunctiveQuery, g: KnowledgeGraph) -> set[int]:
    """
    Entities a with some match of q in g sending the answer variable to a.

    Raises:
        UnknownSymbolError: a constant or relation is not in g's symbol table
        ContractError: the answer variable occurs in no atom
    """
    result: set[int] = set()
    for branch in q.branches():
        if q.answer_var not in branch.variables():
            raise ContractError(S.ANSWER_VAR_MISSING.format(var=q.answer_var))
        for atom in branch.atoms:
            _resolve(atom, g.symbols)
        graph = computation_graph(branch)
        if is_in_tree(branch, graph):
            result |= _propagate(branch, graph, g)
        else:
            result |= _join(branch, g)
    return result


def certain_answers(q: ConjunctiveQuery, g: KnowledgeGraph, o) -> set[int]:
    from ontology import saturate

    return answers(q, saturate(g, o))


# =============================================================================
# CANONICAL FORM
# =============================================================================


def _branch_form(q: ConjunctiveQuery) -> str:
    atoms = list(dict.fromkeys(q.atoms))

    def mask(term: Term) -> str:
        if isinstance(term, Const):
            return "=" + term.name
        return "?ans" if term == q.answer_var else "?"

    keyed = sorted(atoms, key=lambda a: (a.relation, mask(a.head), mask(a.tail)))
    groups = [
        list(g) for _, g in itertools.groupby(keyed, key=lambda a: (a.relation, mask(a.head), mask(a.tail)))
    ]

    best = None
    for ordering in itertools.product(*(itertools.permutations(g) for g in groups)):
        names: dict[Var, str] = {q.answer_var: "?ans"}
        parts = []
        for atom in itertools.chain.from_iterable(ordering):
            rendered = []
            for term in atom.terms():
                if isinstance(term, Const):
                    rendered.append(term.name)
                else:
                    if term not in names:
                        names[term] = f"?v{len(names) - 1}"
                    rendered.append(names[term])
            parts.append(f"{atom.relation}({rendered[0]},{rendered[1]})")
        text = " & ".join(parts)
        if best is None or text < best:
            best = text
    return best or ""


def canonical_form(q: ConjunctiveQuery) -> str:
    """Deterministic string, equal for queries identical up to renaming and atom order."""
    return " | ".join(sorted(_branch_form(b) for b in q.branches()))


# =============================================================================
# QUERY FILES
# =============================================================================


def query_to_json(q: ConjunctiveQuery) -> dict:
    data = {
        "atoms": [[str(a.head), a.relation, str(a.tail)] for a in q.atoms],
        "answer_var": str(q.answer_var),
    }
    if q.is_union:
        data["groups"] = [list(g) for g in q.union_groups]
    return data


def query_from_json(data: Mapping) -> ConjunctiveQuery:
    try:
        atoms = tuple(Atom(rel, parse_term(h), parse_term(t)) for h, rel, t in data["atoms"])
        answer = parse_term(data["answer_var"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(S.BAD_QUERY_RECORD.format(reason=e)) from None
    if not isinstance(answer, Var):
        raise ParseError(S.BAD_QUERY_RECORD.format(reason="answer_var must be a variable"))
    groups = data.get("groups")
    groups = tuple(tuple(g) for g in groups) if groups else None
    return ConjunctiveQuery(atoms, answer, groups, data.get("shape"))


@dataclass
class QueryRecord:
    """One line of a query file. Answer sets are entity names."""

    id: str
    query: ConjunctiveQuery
    answers: dict[str, list[str]] | None = None
    case: str | None = None
    strategy: str | None = None
    gens: list[ConjunctiveQuery] = field(default_factory=list)
    provenance: list[str] | None = None

    @property
    def shape(self) -> str | None:
        if self.query.shape is not None:
            return self.query.shape
        try:
            return shape_of(self.query)
        except UnsupportedShapeError:
            return None

    def answer_set(self, key: str) -> set[str]:
        return set((self.answers or {}).get(key, ()))

    def full_answers(self) -> set[str]:
        """Certain answers when present, plain ones otherwise."""
        if self.answers and "certain" in self.answers:
            return self.answer_set("certain")
        return self.answer_set("plain")

    def to_json(self) -> dict:
        data = {"id": self.id, "shape": self.shape, **query_to_json(self.query)}
        if self.answers is not None:
            data["answers"] = {k: sorted(v) for k, v in self.answers.items()}
        if self.case is not None:
            data["case"] = self.case
        if self.strategy is not None:
            data["strategy"] = self.strategy
        if self.gens:
            data["gens"] = [query_to_json(g) for g in self.gens]
        if self.provenance is not None:
            data["provenance"] = self.provenance
        return data

    @classmethod
    def from_json(cls, data: Mapping) -> QueryRecord:
        if "id" not in data:
            raise ParseError(S.BAD_QUERY_RECORD.format(reason="missing 'id'"))
        answers = data.get("answers")
        return cls(
            id=str(data["id"]),
            query=query_from_json(data),
            answers={k: list(v) for k, v in answers.items()} if answers else None,
            case=data.get("case"),
            strategy=data.get("strategy"),
            gens=[query_from_json(g) for g in data.get("gens", [])],
            provenance=data.get("provenance"),
        )


def read_queries(stream: TextIO) -> list[QueryRecord]:
    records = []
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(S.BAD_QUERY_RECORD.format(reason=e.msg), line_no) from None
        try:
            records.append(QueryRecord.from_json(data))
        except ParseError as e:
            raise ParseError(str(e), line_no) from None
    return records


def write_queries(records: Iterable[QueryRecord], stream: TextIO) -> int:
    count = 0
    for record in records:
        stream.write(json.dumps(record.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        count += 1
    return count


def iter_branches(queries: Iterable[ConjunctiveQuery]) -> Iterator[ConjunctiveQuery]:
    for q in queries:
        yield from q.branches()
