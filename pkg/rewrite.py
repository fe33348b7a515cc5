"""Specialization and generalization of conjunctive queries under a DL-Lite_R
ontology, and the bounded closures built from single rewriting steps.

Each step rewrites one atom (two for the unifying specialization) of one
union branch. Every rewriting keeps the answer variable. In strict mode (the
default for generalizations) it must also stay a DAG with no more structural
defects than its parent (see ``_defects``).
"""

from __future__ import annotations

import itertools
import weakref
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import networkx as nx

from config import logger
from constants import REWRITE_DEFAULTS, TYPE_RELATION
from errors import ContractError
from ontology import (
    Axiom,
    ExistsSub,
    InvSubRole,
    Ontology,
    SubConcept,
    SubExists,
    SubExistsTyped,
    SubRole,
)
from query import (
    Atom,
    ConjunctiveQuery,
    Const,
    Term,
    Var,
    canonical_form,
    computation_graph,
    has_supported_shape,
)


GEN = "gen"
SPEC = "spec"


@dataclass(frozen=True)
class RewriteStep:
    rule: str
    direction: str
    axiom: Axiom | None = None
    substitution: tuple[tuple[str, str], ...] | None = None

    def describe(self) -> str:
        text = f"{self.direction}:{self.rule}"
        if self.axiom is not None:
            text += f" [{self.axiom.to_line()}]"
        if self.substitution:
            text += " {" + ", ".join(f"{a}->{b}" for a, b in self.substitution) + "}"
        return text


@dataclass
class RewriteSet:
    """Closure members keyed by canonical form, each with its rule trace."""

    origin: ConjunctiveQuery
    depth: int | None
    members: dict[str, ConjunctiveQuery] = field(default_factory=dict)
    traces: dict[str, tuple[RewriteStep, ...]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[ConjunctiveQuery]:
        return iter(self.members[k] for k in sorted(self.members))

    def __contains__(self, q: object) -> bool:
        return isinstance(q, ConjunctiveQuery) and canonical_form(q) in self.members

    def add(self, q: ConjunctiveQuery, trace: tuple[RewriteStep, ...]) -> bool:
        key = canonical_form(q)
        if key in self.members:
            return False
        self.members[key] = q
        self.traces[key] = trace
        return True

    def trace_of(self, q: ConjunctiveQuery) -> tuple[RewriteStep, ...]:
        return self.traces[canonical_form(q)]

    def proper_members(self) -> list[ConjunctiveQuery]:
        """Members other than the origin."""
        origin = canonical_form(self.origin)
        return [self.members[k] for k in sorted(self.members) if k != origin]

    def filtered(self, keep: Callable[[ConjunctiveQuery], bool]) -> RewriteSet:
        result = RewriteSet(self.origin, self.depth)
        for key in sorted(self.members):
            q = self.members[key]
            if key == canonical_form(self.origin) or keep(q):
                result.members[key] = q
                result.traces[key] = self.traces[key]
        return result


class _RuleIndex:
    """Axioms indexed by the symbol a rule premise looks up."""

    def __init__(self, o: Ontology):
        self.concept_up = defaultdict(list)
        self.concept_down = defaultdict(list)
        self.exists_sub = defaultdict(list)
        self.exists_sub_by_concept = defaultdict(list)
        self.sub_exists = defaultdict(list)
        self.sub_exists_by_relation = defaultdict(list)
        self.typed = defaultdict(list)
        self.typed_by_relation = defaultdict(list)
        self.role_up = defaultdict(list)
        self.role_down = defaultdict(list)
        self.inv_up = defaultdict(list)
        self.inv_down = defaultdict(list)

        for a in o:
            if isinstance(a, SubConcept):
                self.concept_up[a.sub].append(a)
                self.concept_down[a.sup].append(a)
            elif isinstance(a, ExistsSub):
                self.exists_sub[(a.relation, a.inverted)].append(a)
                self.exists_sub_by_concept[a.concept].append(a)
            elif isinstance(a, SubExists):
                self.sub_exists[a.concept].append(a)
                self.sub_exists_by_relation[a.relation].append(a)
            elif isinstance(a, SubExistsTyped):
                self.typed[a.concept].append(a)
                self.typed_by_relation[a.relation].append(a)
            elif isinstance(a, SubRole):
                self.role_up[a.sub].append(a)
                self.role_down[a.sup].append(a)
            elif isinstance(a, InvSubRole):
                self.inv_up[a.sub].append(a)
                self.inv_down[a.sup].append(a)


_INDEXES: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()


def _index(o: Ontology) -> _RuleIndex:
    index = _INDEXES.get(o)
    if index is None:
        index = _INDEXES[o] = _RuleIndex(o)
    return index


# =============================================================================
# WELL-FORMEDNESS
# =============================================================================


def _entity_constant_positions(q: ConjunctiveQuery) -> list[tuple[int, int]]:
    """(atom index, term position) of entity constants; concepts only sit in type tails."""
    found = []
    for i, atom in enumerate(q.atoms):
        for pos, term in enumerate(atom.terms()):
            if isinstance(term, Const) and not (atom.is_type and pos == 1):
                found.append((i, pos))
    return found


def _defects(q: ConjunctiveQuery, graph: nx.MultiDiGraph) -> int:
    defects = 0
    for node, data in graph.nodes(data=True):
        sink = graph.out_degree(node) == 0
        if data["role"] == "answer" and not sink:
            defects += 1
        elif data["role"] == "var" and sink:
            defects += 1
        elif data["role"] == "anchor" and graph.in_degree(node) > 0:
            defects += 1
    return defects


def _well_formed(child: ConjunctiveQuery, parent_defects: int, strict: bool = True) -> bool:
    if not child.atoms or child.answer_var not in child.variables():
        return False
    if not strict:
        return True
    graph = computation_graph(child)
    if not nx.is_directed_acyclic_graph(graph):
        return False
    return _defects(child, graph) <= parent_defects


def _unshared_var(q: ConjunctiveQuery, term: Term, allowed: int = 1) -> bool:
    return isinstance(term, Var) and term != q.answer_var and q.occurrences(term) <= allowed


def _replace(q: ConjunctiveQuery, i: int, new: Sequence[Atom]) -> ConjunctiveQuery:
    atoms = list(q.atoms[:i]) + list(new) + list(q.atoms[i + 1 :])
    return q.with_atoms(dict.fromkeys(atoms))


# =============================================================================
# SINGLE-BRANCH MOVES
# =============================================================================


def _gen_moves(
    q: ConjunctiveQuery, o: Ontology, enable_r8: bool, atom_budget: int | None
) -> Iterator[tuple[ConjunctiveQuery, RewriteStep]]:
    index = _index(o)
    prefix = REWRITE_DEFAULTS.FRESH_PREFIX
    for i, atom in enumerate(q.atoms):
        if atom.is_type:
            t, concept = atom.head, atom.tail.name
            for ax in index.concept_up.get(concept, ()):
                yield _replace(q, i, [Atom(TYPE_RELATION, t, Const(ax.sup))]), RewriteStep("R1", GEN, ax)
            for ax in index.sub_exists.get(concept, ()):
                z = q.fresh_var(prefix)
                yield _replace(q, i, [Atom(ax.relation, t, z)]), RewriteStep("R3", GEN, ax)
            for ax in index.typed.get(concept, ()):
                z = q.fresh_var(prefix)
                if atom_budget is not None and len(q.atoms) + 1 > atom_budget:
                    new = [Atom(ax.relation, t, z)]
                else:
                    new = [Atom(ax.relation, t, z), Atom(TYPE_RELATION, z, Const(ax.filler))]
                yield _replace(q, i, new), RewriteStep("R5", GEN, ax)
            continue

        p, t1, t2 = atom.relation, atom.head, atom.tail
        if _unshared_var(q, t2):
            for ax in index.exists_sub.get((p, False), ()):
                yield _replace(q, i, [Atom(TYPE_RELATION, t1, Const(ax.concept))]), RewriteStep("R2", GEN, ax)
        if _unshared_var(q, t1):
            for ax in index.exists_sub.get((p, True), ()):
                yield _replace(q, i, [Atom(TYPE_RELATION, t2, Const(ax.concept))]), RewriteStep("R4", GEN, ax)
        for ax in index.role_up.get(p, ()):
            yield _replace(q, i, [Atom(ax.sup, t1, t2)]), RewriteStep("R6", GEN, ax)
        for ax in index.inv_up.get(p, ()):
            yield _replace(q, i, [Atom(ax.sup, t2, t1)]), RewriteStep("R7", GEN, ax)

    if enable_r8:
        for i, pos in _entity_constant_positions(q):
            atom = q.atoms[i]
            z = q.fresh_var(prefix)
            terms = list(atom.terms())
            old = terms[pos]
            terms[pos] = z
            child = _replace(q, i, [Atom(atom.relation, terms[0], terms[1])])
            if _entity_constant_positions(child):
                yield child, RewriteStep("R8", GEN, None, ((old.name, str(z)),))


def _unify(q: ConjunctiveQuery, a: Atom, b: Atom) -> dict[Term, Term] | None:
    """Most general θ with aθ = bθ; the answer variable only maps to itself."""
    parent: dict[Term, Term] = {}

    def find(t: Term) -> Term:
        while parent.get(t, t) != t:
            t = parent[t]
        return t

    def rank(t: Term) -> tuple:
        if isinstance(t, Const):
            return (0, t.name)
        if t == q.answer_var:
            return (1, t.name)
        return (2, t.name)

    for x, y in zip(a.terms(), b.terms()):
        rx, ry = find(x), find(y)
        if rx == ry:
            continue
        if isinstance(rx, Const) and isinstance(ry, Const):
            return None
        keep, drop = sorted((rx, ry), key=rank)
        if drop == q.answer_var and keep != drop:
            return None
        parent[drop] = keep
    return {t: find(t) for t in parent}


def _spec_moves(
    q: ConjunctiveQuery, o: Ontology
) -> Iterator[tuple[ConjunctiveQuery, RewriteStep]]:
    index = _index(o)
    prefix = REWRITE_DEFAULTS.FRESH_PREFIX
    for i, atom in enumerate(q.atoms):
        if atom.is_type:
            t, concept = atom.head, atom.tail.name
            for ax in index.concept_down.get(concept, ()):
                yield _replace(q, i, [Atom(TYPE_RELATION, t, Const(ax.sub))]), RewriteStep("R1", SPEC, ax)
            for ax in index.exists_sub_by_concept.get(concept, ()):
                z = q.fresh_var(prefix)
                if ax.inverted:
                    yield _replace(q, i, [Atom(ax.relation, z, t)]), RewriteStep("R4", SPEC, ax)
                else:
                    yield _replace(q, i, [Atom(ax.relation, t, z)]), RewriteStep("R2", SPEC, ax)
            continue

        p, t1, t2 = atom.relation, atom.head, atom.tail
        if _unshared_var(q, t2):
            for ax in index.sub_exists_by_relation.get(p, ()):
                yield _replace(q, i, [Atom(TYPE_RELATION, t1, Const(ax.concept))]), RewriteStep("R3", SPEC, ax)
        if _unshared_var(q, t2, allowed=2):
            for ax in index.typed_by_relation.get(p, ()):
                filler = Atom(TYPE_RELATION, t2, Const(ax.filler))
                if filler in q.atoms:
                    atoms = [a for a in q.atoms if a != filler]
                    j = atoms.index(atom)
                    reduced = q.with_atoms(atoms)
                    yield _replace(reduced, j, [Atom(TYPE_RELATION, t1, Const(ax.concept))]), RewriteStep("R5", SPEC, ax)
        for ax in index.role_down.get(p, ()):
            yield _replace(q, i, [Atom(ax.sub, t1, t2)]), RewriteStep("R6", SPEC, ax)
        for ax in index.inv_down.get(p, ()):
            yield _replace(q, i, [Atom(ax.sub, t2, t1)]), RewriteStep("R7", SPEC, ax)

    for i, j in itertools.combinations(range(len(q.atoms)), 2):
        a, b = q.atoms[i], q.atoms[j]
        if a.relation != b.relation:
            continue
        theta = _unify(q, a, b)
        if not theta:
            continue
        child = q.with_atoms(dict.fromkeys(x.substitute(theta) for x in q.atoms))
        pairs = tuple(sorted((str(k), str(v)) for k, v in theta.items()))
        yield child, RewriteStep("R8", SPEC, None, pairs)


# =============================================================================
# STEPS OVER UNION BRANCHES
# =============================================================================


def _separate_variables(branches: list[ConjunctiveQuery]) -> list[ConjunctiveQuery]:
    """Rename non-answer variables so no two branches share one."""
    seen: set[str] = set()
    result = []
    for k, branch in enumerate(branches):
        mapping = {}
        for v in sorted(branch.variables(), key=lambda v: v.name):
            if v == branch.answer_var:
                continue
            if v.name in seen:
                name = v.name
                while name in seen:
                    name = f"{name}_{k}"
                mapping[v] = Var(name)
            seen.add(mapping.get(v, v).name)
        result.append(branch.with_atoms(a.substitute(mapping) for a in branch.atoms) if mapping else branch)
    return result


def _steps(
    q: ConjunctiveQuery,
    moves: Callable[[ConjunctiveQuery, int], Iterable[tuple[ConjunctiveQuery, RewriteStep]]],
    strict: bool = True,
    keep_shared: bool = False,
) -> Iterator[tuple[ConjunctiveQuery, RewriteStep]]:
    branches = q.branches()
    for k, branch in enumerate(branches):
        parent_defects = _defects(branch, computation_graph(branch)) if strict else 0
        shared = {v for v in branch.variables() if branch.occurrences(v) > 1}
        for child, step in moves(branch, k):
            if not _well_formed(child, parent_defects, strict):
                continue
            if keep_shared and not shared <= child.variables():
                continue
            if not q.is_union:
                yield child, step
                continue
            rebuilt = branches[:k] + [child] + branches[k + 1 :]
            yield ConjunctiveQuery.union_of(_separate_variables(rebuilt)), step


def generalize_step(
    q: ConjunctiveQuery, o: Ontology, enable_r8: bool = True, strict: bool = True
) -> list[ConjunctiveQuery]:
    """All well-formed queries one generalization rule away from q."""
    return _dedupe(
        c for c, _ in _steps(q, lambda b, k: _gen_moves(b, o, enable_r8, None), strict)
    )


def specialize_step(q: ConjunctiveQuery, o: Ontology, strict: bool = False) -> list[ConjunctiveQuery]:
    """
    All queries one specialization rule away from q.

    Specializations only need to keep the answer variable unless ``strict``
    also demands the structural checks generalizations go through.
    """
    return _dedupe(c for c, _ in _steps(q, lambda b, k: _spec_moves(b, o), strict))


def _dedupe(queries: Iterable[ConjunctiveQuery]) -> list[ConjunctiveQuery]:
    found: dict[str, ConjunctiveQuery] = {}
    for q in queries:
        found.setdefault(canonical_form(q), q)
    return [found[k] for k in sorted(found)]


# =============================================================================
# CLOSURES
# =============================================================================


def _closure(q: ConjunctiveQuery, steps, depth: int | None) -> RewriteSet:
    if depth is not None and depth < 0:
        raise ContractError(f"depth must be non-negative, got {depth}")
    result = RewriteSet(q, depth)
    result.add(q, ())
    frontier = [q]
    level = 0
    while frontier and (depth is None or level < depth):
        next_frontier = []
        for parent in frontier:
            trace = result.trace_of(parent)
            for child, step in steps(parent):
                if result.add(child, trace + (step,)):
                    next_frontier.append(child)
        frontier = next_frontier
        level += 1
    logger.debug(f"Closure of depth {depth} reached {len(result)} members after {level} levels")
    return result


def gen_closure(
    q: ConjunctiveQuery,
    o: Ontology,
    depth: int | None = REWRITE_DEFAULTS.GEN_DEPTH,
    enable_r8: bool = True,
    strict: bool = True,
) -> RewriteSet:
    """
    Generalizations of q reachable in at most ``depth`` steps (None: fixpoint).

    At fixpoint, rewritings never grow a branch beyond its original atom
    count; typed existentials then contribute their untyped consequence.
    """
    budgets = [len(b.atoms) for b in q.branches()] if depth is None else None

    def steps(parent):
        return _steps(
            parent,
            lambda b, k: _gen_moves(b, o, enable_r8, budgets[k] if budgets else None),
            strict,
        )

    return _closure(q, steps, depth)


def spec_closure(
    q: ConjunctiveQuery,
    o: Ontology,
    depth: int | None = REWRITE_DEFAULTS.SPEC_DEPTH,
    strict: bool = False,
) -> RewriteSet:
    """Specializations of q reachable in at most ``depth`` steps (None: fixpoint)."""
    return _closure(
        q, lambda parent: _steps(parent, lambda b, k: _spec_moves(b, o), strict), depth
    )


def _same_structure(a: ConjunctiveQuery, b: ConjunctiveQuery) -> bool:
    if len(a.branches()) != len(b.branches()):
        return False
    return all(
        nx.is_isomorphic(
            computation_graph(x),
            computation_graph(y),
            node_match=lambda u, v: u["role"] == v["role"],
        )
        for x, y in zip(a.branches(), b.branches())
    )


def rew(
    q: ConjunctiveQuery,
    o: Ontology,
    supported_shapes: Iterable[str] | None = None,
    depth: int | None = REWRITE_DEFAULTS.SPEC_DEPTH,
) -> RewriteSet:
    """
    Specializations used by the rewriting baseline.

    Steps may not drop a variable that occurs in more than one atom; members
    are kept when they have a supported shape or the origin's structure.
    """
    shapes = set(supported_shapes) if supported_shapes is not None else None
    closure = _closure(
        q,
        lambda parent: _steps(parent, lambda b, k: _spec_moves(b, o), strict=False, keep_shared=True),
        depth,
    )
    return closure.filtered(lambda m: has_supported_shape(m, shapes) or _same_structure(m, q))
