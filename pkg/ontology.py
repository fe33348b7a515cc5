"""DL-Lite_R ontology: axiom parsing, subsumption closure, derived relation sets
and named-individual saturation.

Role expressions are ``(relation, inverted)`` pairs so that inverse-role
axioms fold into the same hierarchy as plain role inclusions.
"""

from __future__ import annotations

import weakref
from collections import defaultdict, deque
from dataclasses import dataclass
from functools import cached_property
from typing import BinaryIO, Iterable, Iterator, Union

import networkx as nx

from config import logger
from constants import TYPE_RELATION
from errors import ParseError
from kg import KnowledgeGraph, SymbolTable, Triple
import strings as S


RoleExpr = tuple[str, bool]


@dataclass(frozen=True, order=True)
class SubConcept:
    """A ⊑ B"""

    sub: str
    sup: str

    def to_line(self) -> str:
        return f"sub_concept {self.sub} {self.sup}"


@dataclass(frozen=True, order=True)
class ExistsSub:
    """∃p ⊑ A (domain), or ∃p⁻ ⊑ A when ``inverted`` (range)."""

    relation: str
    concept: str
    inverted: bool = False

    def to_line(self) -> str:
        keyword = "range" if self.inverted else "domain"
        return f"{keyword} {self.relation} {self.concept}"


@dataclass(frozen=True, order=True)
class SubExists:
    """A ⊑ ∃p"""

    concept: str
    relation: str

    def to_line(self) -> str:
        return f"exists {self.concept} {self.relation}"


@dataclass(frozen=True, order=True)
class SubExistsTyped:
    """A ⊑ ∃p.B"""

    concept: str
    relation: str
    filler: str

    def to_line(self) -> str:
        return f"exists_typed {self.concept} {self.relation} {self.filler}"


@dataclass(frozen=True, order=True)
class SubRole:
    """p ⊑ s"""

    sub: str
    sup: str

    def to_line(self) -> str:
        return f"sub_role {self.sub} {self.sup}"


@dataclass(frozen=True, order=True)
class InvSubRole:
    """p⁻ ⊑ s"""

    sub: str
    sup: str

    def to_line(self) -> str:
        return f"inv_sub_role {self.sub} {self.sup}"


Axiom = Union[SubConcept, ExistsSub, SubExists, SubExistsTyped, SubRole, InvSubRole]


def format_axiom(axiom: Axiom) -> str:
    return axiom.to_line()


# keyword -> (argument kinds, constructor)
_GRAMMAR = {
    "sub_concept": (("concept", "concept"), lambda a, b: SubConcept(a, b)),
    "sub_role": (("relation", "relation"), lambda p, s: SubRole(p, s)),
    "inv_sub_role": (("relation", "relation"), lambda p, s: InvSubRole(p, s)),
    "domain": (("relation", "concept"), lambda p, a: ExistsSub(p, a, False)),
    "range": (("relation", "concept"), lambda p, a: ExistsSub(p, a, True)),
    "exists": (("concept", "relation"), lambda a, p: SubExists(a, p)),
    "exists_typed": (
        ("concept", "relation", "concept"),
        lambda a, p, b: SubExistsTyped(a, p, b),
    ),
}


class HierarchyClosure:
    """Reflexive-transitive closures of concept and role-expression inclusions."""

    def __init__(self, concept_edges: Iterable[tuple[str, str]], role_edges: Iterable[tuple[RoleExpr, RoleExpr]]):
        self.concept_ancestors = self._ancestors(concept_edges)
        self.role_ancestors = self._ancestors(role_edges)

    @staticmethod
    def _ancestors(edges) -> dict:
        graph = nx.DiGraph()
        graph.add_edges_from(edges)
        return {node: frozenset(nx.descendants(graph, node)) | {node} for node in graph.nodes}

    def concept_leq(self, a: str, b: str) -> bool:
        return a == b or b in self.concept_ancestors.get(a, ())

    def role_leq(self, r: RoleExpr, s: RoleExpr) -> bool:
        return r == s or s in self.role_ancestors.get(r, ())

    def concept_supers(self, a: str) -> frozenset[str]:
        return self.concept_ancestors.get(a, frozenset({a}))

    def role_supers(self, r: RoleExpr) -> frozenset[RoleExpr]:
        return self.role_ancestors.get(r, frozenset({r}))

    def concept_pairs(self) -> set[tuple[str, str]]:
        return {(a, b) for a, ups in self.concept_ancestors.items() for b in ups}

    def role_pairs(self) -> set[tuple[RoleExpr, RoleExpr]]:
        return {(r, s) for r, ups in self.role_ancestors.items() for s in ups}


class DerivedSets:
    """Per-relation sets used to decide which labelings make sense."""

    NAMES = ("inv", "dom", "range", "follows", "inter_r", "inter_d", "head_types", "tail_types")

    def __init__(self, sets: dict[str, dict[str, frozenset[str]]]):
        self._sets = sets

    def get(self, name: str, relation: str) -> frozenset[str]:
        return self._sets[name].get(relation, frozenset())

    def inv(self, p: str) -> frozenset[str]:
        return self.get("inv", p)

    def dom(self, p: str) -> frozenset[str]:
        return self.get("dom", p)

    def range(self, p: str) -> frozenset[str]:
        return self.get("range", p)

    def follows(self, p: str) -> frozenset[str]:
        return self.get("follows", p)

    def inter_r(self, p: str) -> frozenset[str]:
        return self.get("inter_r", p)

    def inter_d(self, p: str) -> frozenset[str]:
        return self.get("inter_d", p)

    def head_types(self, p: str) -> frozenset[str]:
        return self.get("head_types", p)

    def tail_types(self, p: str) -> frozenset[str]:
        return self.get("tail_types", p)


class Ontology:
    """Duplicate-free axiom set with lazily computed closure and derived sets."""

    def __init__(self, axioms: Iterable[Axiom] = ()):
        self.axioms = frozenset(axioms)
        self._saturations: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def __len__(self) -> int:
        return len(self.axioms)

    def __iter__(self) -> Iterator[Axiom]:
        return iter(sorted(self.axioms, key=format_axiom))

    def __contains__(self, axiom: object) -> bool:
        return axiom in self.axioms

    def of_type(self, kind: type) -> list:
        return [a for a in self if isinstance(a, kind)]

    def relations(self) -> set[str]:
        names = set()
        for a in self.axioms:
            if isinstance(a, (SubRole, InvSubRole)):
                names.update((a.sub, a.sup))
            elif isinstance(a, (ExistsSub, SubExists, SubExistsTyped)):
                names.add(a.relation)
        return names

    def concepts(self) -> set[str]:
        names = set()
        for a in self.axioms:
            if isinstance(a, SubConcept):
                names.update((a.sub, a.sup))
            elif isinstance(a, (ExistsSub, SubExists)):
                names.add(a.concept)
            elif isinstance(a, SubExistsTyped):
                names.update((a.concept, a.filler))
        return names

    @cached_property
    def closure(self) -> HierarchyClosure:
        return subsumption_closure(self)

    @cached_property
    def derived(self) -> DerivedSets:
        return derived_sets(self)


def load_ontology(source: BinaryIO | Iterable[bytes], symbols: SymbolTable | None = None) -> Ontology:
    """
    Parse an ontology file, one axiom per line.

    Args:
        source: Binary stream (or iterable of byte lines)
        symbols: Table to intern concept and relation names into

    Returns:
        The ontology (duplicates collapse)
    """
    axioms: set[Axiom] = set()
    for line_no, raw in enumerate(source, start=1):
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        text = text.split("#", 1)[0].strip()
        if not text:
            continue
        keyword, *args = text.split()
        if keyword not in _GRAMMAR:
            raise ParseError(S.UNKNOWN_KEYWORD.format(keyword=keyword), line_no)
        kinds, build = _GRAMMAR[keyword]
        if len(args) != len(kinds):
            raise ParseError(
                S.WRONG_ARITY.format(keyword=keyword, expected=len(kinds), found=len(args)),
                line_no,
            )
        for kind, name in zip(kinds, args):
            if kind == "relation" and name == TYPE_RELATION:
                raise ParseError(S.TYPE_IN_AXIOM, line_no)
            if symbols is not None:
                if kind == "relation":
                    symbols.intern_relation(name)
                else:
                    symbols.intern_concept(name)
        axioms.add(build(*args))

    ontology = Ontology(axioms)
    logger.debug(f"Loaded ontology with {len(ontology)} axioms")
    return ontology


def subsumption_closure(o: Ontology) -> HierarchyClosure:
    concept_edges = [(a.sub, a.sup) for a in o.of_type(SubConcept)]
    role_edges: list[tuple[RoleExpr, RoleExpr]] = []
    for a in o.of_type(SubRole):
        role_edges.append(((a.sub, False), (a.sup, False)))
        role_edges.append(((a.sub, True), (a.sup, True)))
    for a in o.of_type(InvSubRole):
        role_edges.append(((a.sub, True), (a.sup, False)))
        role_edges.append(((a.sub, False), (a.sup, True)))
    return HierarchyClosure(concept_edges, role_edges)


def derived_sets(o: Ontology) -> DerivedSets:
    """
    Compute inv, dom, range, follows, inter_r, inter_d for every relation
    named in the ontology, plus the head/tail type sets (dom/range widened
    through inverses).
    """
    closure = o.closure
    relations = sorted(o.relations())
    concepts = sorted(o.concepts())

    exist_types: dict[RoleExpr, set[str]] = defaultdict(set)
    for a in o.of_type(ExistsSub):
        exist_types[(a.relation, a.inverted)].add(a.concept)

    def related_types(role: RoleExpr) -> frozenset[str]:
        declared = set()
        for up in closure.role_supers(role):
            declared |= exist_types.get(up, set())
        return frozenset(
            c
            for c in concepts
            if any(closure.concept_leq(c, d) or closure.concept_leq(d, c) for d in declared)
        )

    inv: dict[str, set[str]] = defaultdict(set)
    for a in o.of_type(InvSubRole):
        inv[a.sub].add(a.sup)

    dom = {p: related_types((p, False)) for p in relations}
    rng = {p: related_types((p, True)) for p in relations}

    def crossing(p: str, q: str, own: dict, through_inverse: dict) -> bool:
        if own[p] & own[q]:
            return True
        return any(through_inverse[p1] & through_inverse[p2] for p1 in inv[p] for p2 in inv[q])

    follows = {p: frozenset(q for q in relations if rng[p] & dom[q]) for p in relations}
    inter_r = {p: frozenset(q for q in relations if crossing(p, q, rng, dom)) for p in relations}
    inter_d = {p: frozenset(q for q in relations if crossing(p, q, dom, rng)) for p in relations}

    head_types = {}
    tail_types = {}
    for p in relations:
        heads = set(dom[p])
        tails = set(rng[p])
        for q in inv[p]:
            heads |= rng[q]
            tails |= dom[q]
        head_types[p] = frozenset(heads)
        tail_types[p] = frozenset(tails)

    return DerivedSets(
        {
            "inv": {p: frozenset(inv[p]) for p in relations},
            "dom": dom,
            "range": rng,
            "follows": follows,
            "inter_r": inter_r,
            "inter_d": inter_d,
            "head_types": head_types,
            "tail_types": tail_types,
        }
    )


class _FactRules:
    """One-step inference rules compiled to the ids of one symbol table."""

    def __init__(self, o: Ontology, symbols: SymbolTable):
        self.type_id = symbols.type_id
        self.concept_up: dict[int, list[int]] = defaultdict(list)
        self.role_up: dict[int, list[tuple[int, bool]]] = defaultdict(list)
        self.head_type: dict[int, list[int]] = defaultdict(list)
        self.tail_type: dict[int, list[int]] = defaultdict(list)

        for a in o.of_type(SubConcept):
            self.concept_up[symbols.intern_concept(a.sub)].append(symbols.intern_concept(a.sup))
        for a in o.of_type(SubRole):
            self.role_up[symbols.intern_relation(a.sub)].append((symbols.intern_relation(a.sup), False))
        for a in o.of_type(InvSubRole):
            self.role_up[symbols.intern_relation(a.sub)].append((symbols.intern_relation(a.sup), True))
        for a in o.of_type(ExistsSub):
            target = self.tail_type if a.inverted else self.head_type
            target[symbols.intern_relation(a.relation)].append(symbols.intern_concept(a.concept))

    def consequences(self, fact: Triple) -> Iterator[Triple]:
        h, r, t = fact
        if r == self.type_id:
            for sup in self.concept_up.get(t, ()):
                yield Triple(h, r, sup)
            return
        for sup, swapped in self.role_up.get(r, ()):
            yield Triple(t, sup, h) if swapped else Triple(h, sup, t)
        for concept in self.head_type.get(r, ()):
            yield Triple(h, self.type_id, concept)
        for concept in self.tail_type.get(r, ()):
            yield Triple(t, self.type_id, concept)


def saturate(g: KnowledgeGraph, o: Ontology) -> KnowledgeGraph:
    """
    Materialize every fact over named individuals derivable from g and o.

    Existential right-hand sides (A ⊑ ∃p, A ⊑ ∃p.B) invent no individuals
    and so contribute no facts. Results are cached per (graph, ontology).

    Args:
        g: Input graph
        o: Ontology over g's symbol table

    Returns:
        The closure, a superset of g sharing its symbols
    """
    cached = o._saturations.get(g)
    if cached is not None:
        return cached

    rules = _FactRules(o, g.symbols)
    known = set(g.triples)
    frontier = deque(known)
    while frontier:
        fact = frontier.popleft()
        for derived in rules.consequences(fact):
            if derived not in known:
                known.add(derived)
                frontier.append(derived)

    closed = KnowledgeGraph(g.symbols, known) if len(known) > len(g) else g
    logger.debug(f"Saturated {len(g)} triples to {len(closed)}")
    o._saturations[g] = closed
    return closed
