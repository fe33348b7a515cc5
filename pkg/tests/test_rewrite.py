"""Tests for the generalization/specialization rules and their closures."""

from __future__ import annotations

import numpy as np
import pytest

from conftest import cq, graph_from, ontology_from, trial_counts
from constants import ALL_SHAPES
from errors import ContractError
from kg import SymbolTable
from ontology import Ontology, SubRole
from query import (
    SHAPES,
    Const,
    LabelingFunction,
    Var,
    answers,
    canonical_form,
    certain_answers,
    instantiate,
)
from rewrite import RewriteStep, gen_closure, generalize_step, rew, spec_closure, specialize_step


ALUMNUS_TEACHES = cq(
    ("mit", "hasAlumnus", "?X"), ("?X", "type", "AProfessor"), ("?X", "teachesAt", "?Y"), answer="Y"
)


def _forms(queries) -> set[str]:
    return {canonical_form(q) for q in queries}


# --- single steps ---


def test_gen_step_lifts_concept():
    o = ontology_from(["sub_concept AProfessor Professor"])
    q = cq(("?X", "type", "AProfessor"), ("?X", "worksFor", "?Y"))
    expected = cq(("?X", "type", "Professor"), ("?X", "worksFor", "?Y"))
    assert canonical_form(expected) in _forms(generalize_step(q, o))


def test_gen_step_lifts_role():
    o = ontology_from(["sub_role teachesAt worksFor"])
    q = cq(("bob", "teachesAt", "?X"))
    assert _forms(generalize_step(q, o)) == _forms([cq(("bob", "worksFor", "?X"))])


def test_gen_step_with_empty_ontology_only_abstracts_anchors():
    q = cq(("a", "r", "?X"), ("b", "s", "?X"))
    steps = generalize_step(q, Ontology())
    assert _forms(steps) == _forms([cq(("?Z", "r", "?X"), ("b", "s", "?X")), cq(("a", "r", "?X"), ("?Z", "s", "?X"))])
    assert generalize_step(q, Ontology(), enable_r8=False) == []


def test_gen_step_keeps_one_anchor():
    assert generalize_step(cq(("a", "r", "?X")), Ontology()) == []


def test_gen_domain_requires_unshared_variable():
    o = ontology_from(["domain worksFor Person"])
    unshared = cq(("?X", "type", "Professor"), ("?X", "worksFor", "?Y"))
    assert canonical_form(cq(("?X", "type", "Professor"), ("?X", "type", "Person"))) in _forms(
        generalize_step(unshared, o)
    )
    shared = cq(("bob", "worksFor", "?X"), ("?X", "type", "University"))
    assert generalize_step(shared, o, enable_r8=False) == []


def test_spec_step_range_introduces_fresh_variable():
    o = ontology_from(["range teachesAt University"])
    q = cq(("?X", "type", "University"), ("?X", "hasAlumnus", "?Y"))
    expected = cq(("?Z", "teachesAt", "?X"), ("?X", "hasAlumnus", "?Y"))
    assert canonical_form(expected) in _forms(specialize_step(q, o))


def test_spec_step_inverse_role():
    o = ontology_from(["inv_sub_role degreeFrom hasAlumnus", "inv_sub_role hasAlumnus degreeFrom"])
    q = cq(("?Z", "teachesAt", "?X"), ("?X", "hasAlumnus", "?Y"))
    expected = cq(("?Z", "teachesAt", "?X"), ("?Y", "degreeFrom", "?X"))
    assert canonical_form(expected) in _forms(specialize_step(q, o))


def test_spec_step_lowers_concept():
    o = ontology_from(["sub_concept AProfessor Professor"])
    q = cq(("?X", "type", "Professor"), ("?X", "degreeFrom", "mit"))
    expected = cq(("?X", "type", "AProfessor"), ("?X", "degreeFrom", "mit"))
    assert canonical_form(expected) in _forms(specialize_step(q, o))


def test_spec_step_unifies_atoms_with_same_relation():
    q = cq(("a", "r", "?V"), ("b", "r", "?W"), ("?V", "s", "?X"), ("?W", "s", "?X"))
    children = specialize_step(q, Ontology())
    assert all(len(c.atoms) < len(q.atoms) for c in children)
    assert canonical_form(cq(("a", "r", "?V"), ("b", "r", "?V"), ("?V", "s", "?X"))) in _forms(children)


def test_step_description():
    step = RewriteStep("R6", "gen", SubRole("teachesAt", "worksFor"))
    assert step.describe() == "gen:R6 [sub_role teachesAt worksFor]"


# --- closures ---


def test_generalizations_of_running_example(campus_onto):
    members = gen_closure(ALUMNUS_TEACHES, campus_onto, depth=2)
    q1 = cq(("mit", "hasAlumnus", "?X"), ("?X", "type", "AProfessor"), ("?X", "worksFor", "?Y"), answer="Y")
    q2 = cq(("mit", "hasAlumnus", "?X"), ("?X", "type", "Professor"), ("?X", "teachesAt", "?Y"), answer="Y")
    q3 = cq(("mit", "hasAlumnus", "?X"), ("?X", "type", "Professor"), ("?X", "worksFor", "?Y"), answer="Y")
    assert _forms(members) == _forms([ALUMNUS_TEACHES, q1, q2, q3])
    assert _forms(members.proper_members()) == _forms([q1, q2, q3])
    assert {s.rule for s in members.trace_of(q3)} == {"R1", "R6"}
    assert members.trace_of(ALUMNUS_TEACHES) == ()


def test_running_example_answers(campus):
    g, o = campus
    assert {g.symbols.node_name(i) for i in certain_answers(ALUMNUS_TEACHES, g, o)} == {"mit"}


def test_depth_zero_is_origin_only(campus_onto):
    members = gen_closure(ALUMNUS_TEACHES, campus_onto, depth=0)
    assert list(members) == [ALUMNUS_TEACHES]
    assert len(spec_closure(ALUMNUS_TEACHES, campus_onto, depth=0)) == 1


def test_negative_depth_rejected(campus_onto):
    with pytest.raises(ContractError):
        gen_closure(ALUMNUS_TEACHES, campus_onto, depth=-1)


def test_rewriting_set_keeps_original_and_specialization():
    o = ontology_from(["sub_concept AProfessor Professor"])
    q = cq(("?X", "type", "Professor"), ("?X", "degreeFrom", "mit"))
    special = cq(("?X", "type", "AProfessor"), ("?X", "degreeFrom", "mit"))
    assert _forms([q, special]) <= _forms(rew(q, o, ALL_SHAPES))


def test_rewriting_set_without_applicable_axioms():
    o = ontology_from(["sub_concept AProfessor Professor"])
    q = cq(("mit", "hasAlumnus", "?X"))
    assert _forms(rew(q, o, ALL_SHAPES)) == _forms([q])


def test_closure_members_are_unique(campus_onto):
    for members in (gen_closure(ALUMNUS_TEACHES, campus_onto, None), spec_closure(ALUMNUS_TEACHES, campus_onto, 3)):
        forms = [canonical_form(q) for q in members]
        assert len(forms) == len(set(forms))


# --- random instances ---

_SAFE_KEYWORDS = ("sub_concept", "sub_role", "inv_sub_role", "domain", "range")
_ALL_KEYWORDS = _SAFE_KEYWORDS + ("exists", "exists_typed")


def _random_case(seed: int, keywords=_SAFE_KEYWORDS, n_axioms: int = 5):
    """Graph, ontology and a shaped query over one symbol table."""
    rng = np.random.default_rng(seed)
    relations = ["r0", "r1", "r2"]
    concepts = ["C0", "C1", "C2"]

    def pick(items):
        return items[int(rng.integers(len(items)))]

    lines = []
    for _ in range(int(rng.integers(1, n_axioms + 1))):
        kw = pick(keywords)
        if kw == "sub_concept":
            lines.append(f"{kw} {pick(concepts)} {pick(concepts)}")
        elif kw in ("sub_role", "inv_sub_role"):
            lines.append(f"{kw} {pick(relations)} {pick(relations)}")
        elif kw in ("domain", "range"):
            lines.append(f"{kw} {pick(relations)} {pick(concepts)}")
        elif kw == "exists":
            lines.append(f"{kw} {pick(concepts)} {pick(relations)}")
        else:
            lines.append(f"{kw} {pick(concepts)} {pick(relations)} {pick(concepts)}")

    facts = set()
    for _ in range(int(rng.integers(4, 25))):
        h = f"e{rng.integers(6)}"
        if rng.random() < 0.3:
            facts.add(f"{h} type {pick(concepts)}")
        else:
            facts.add(f"{h} {pick(relations)} e{rng.integers(6)}")
    symbols = SymbolTable()
    for name in concepts:
        symbols.intern_concept(name)
    for i in range(6):
        symbols.intern_entity(f"e{i}")
    for name in relations:
        symbols.intern_relation(name)
    g = graph_from(sorted(facts), symbols)
    o = ontology_from(lines, symbols)

    shape = SHAPES[pick(["1p", "2p", "2i", "pi", "ip"])]
    nodes, edges = {}, []
    for node in shape.nodes:
        nodes[node] = Const(f"e{rng.integers(6)}") if node in shape.anchors else Var(node)
    for src, _ in shape.edges:
        if src in shape.anchors and rng.random() < 0.3:
            nodes[src] = Const(pick(concepts))
            edges.append("type")
        else:
            edges.append(pick(relations))
    return g, o, instantiate(shape, LabelingFunction(nodes, tuple(edges)))


@pytest.mark.parametrize("runs", trial_counts(60, 500))
def test_generalizations_are_sound(runs):
    for seed in range(runs):
        g, o, q = _random_case(seed)
        base = certain_answers(q, g, o)
        for member in gen_closure(q, o, depth=2):
            assert base <= certain_answers(member, g, o), f"seed {seed}: {member}"


@pytest.mark.parametrize("runs", trial_counts(60, 500))
def test_specializations_are_sound(runs):
    for seed in range(runs):
        g, o, q = _random_case(seed)
        base = certain_answers(q, g, o)
        for member in spec_closure(q, o, depth=2):
            assert certain_answers(member, g, o) <= base, f"seed {seed}: {member}"


@pytest.mark.parametrize("runs", trial_counts(60, 500))
def test_rewriting_set_answers_are_certain(runs):
    for seed in range(runs):
        g, o, q = _random_case(seed)
        found = set()
        for member in rew(q, o, ALL_SHAPES, depth=2):
            found |= answers(member, g)
        assert found <= certain_answers(q, g, o), f"seed {seed}"


@pytest.mark.parametrize("runs", trial_counts(40, 200))
def test_specialization_fixpoint_is_complete_for_hierarchies(runs):
    for seed in range(runs):
        g, o, q = _random_case(seed, keywords=("sub_concept", "sub_role", "inv_sub_role"), n_axioms=3)
        found = set()
        for member in spec_closure(q, o, depth=None):
            found |= answers(member, g)
        assert found == certain_answers(q, g, o), f"seed {seed}"


@pytest.mark.parametrize("runs", trial_counts(100, 1000))
def test_generalization_fixpoint_terminates(runs):
    for seed in range(runs):
        _, o, q = _random_case(seed, keywords=_ALL_KEYWORDS, n_axioms=6)
        members = gen_closure(q, o, depth=None)
        per_atom = 3 * (len(o.concepts()) + 1) + 9 * (len(o.relations()) + 1)
        assert 1 <= len(members) <= (per_atom + 1) ** len(q.atoms)
        assert all(len(m.atoms) <= len(q.atoms) for m in members)


@pytest.mark.parametrize("runs", trial_counts(100, 1000))
def test_specialization_fixpoint_terminates(runs):
    for seed in range(runs):
        _, o, q = _random_case(seed, keywords=_ALL_KEYWORDS, n_axioms=6)
        members = spec_closure(q, o, depth=None)
        assert q in members
