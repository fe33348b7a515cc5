"""Tests for ranking, metrics, rank files and the rewriting baseline."""

from __future__ import annotations

import io

import numpy as np
import pytest
import torch

from conftest import cq, trial_counts
from errors import ContractError, ParseError
from evaluation import (
    RankRecord,
    compute_rank,
    containment_pairs,
    dump_ranks,
    evaluate,
    evaluate_records,
    evaluate_rewriting_baseline,
    load_ranks,
    metrics_from_records,
    metrics_summary,
    rank_answer,
    rank_samples,
    rewriting_distances,
)
from kg import SymbolTable
from model import BoxModel, score_all
from ontology import Ontology
from sampler import EvalSample


ALUMNI = cq(("mit", "hasAlumnus", "?X"))
ALUMNI_EMPLOYERS = cq(("mit", "hasAlumnus", "?X"), ("?X", "worksFor", "?Y"), answer="Y")


def _records(*ranks: int, case: str = "A", shape: str = "1p") -> list[RankRecord]:
    return [RankRecord(f"q{i}", f"e{i}", r, case, shape) for i, r in enumerate(ranks)]


@pytest.fixture()
def placed_model(campus_graph):
    """2-d model whose alumni query box sits at (10, 0) with entities at known distances."""
    symbols = campus_graph.symbols
    model = BoxModel(symbols, 2, 4.0, "q2b", 0)
    rows = {
        "mit": [0.0, 0.0],
        "mat": [10.5, 0.0],
        "bob": [11.0, 1.0],
        "anna": [13.0, 0.0],
        "bosch": [12.0, 2.0],
        "ucl": [10.0, 5.0],
    }
    with torch.no_grad():
        for name, row in rows.items():
            model.entity_embedding[symbols.entity_id(name)] = torch.tensor(row)
        model.relation_center[symbols.relation_id("hasAlumnus")] = torch.tensor([10.0, 0.0])
    return model


# --- ranks ---


def test_rank_of_closest_answer():
    assert compute_rank(np.array([0.1, 0.5, 0.9]), 0, np.array([0, 1, 2])) == 1


def test_rank_behind_three_closer_candidates():
    distances = np.array([4.0, 1.0, 2.0, 3.0, 5.0])
    assert compute_rank(distances, 0, np.arange(5)) == 4


def test_ties_count_against_the_answer():
    assert compute_rank(np.array([1.0, 1.0, 2.0]), 0, np.arange(3)) == 2


def test_rank_answer_on_placed_points(placed_model):
    ids = placed_model.symbols.entity_id
    mat, bob, bosch = ids("mat"), ids("bob"), ids("bosch")
    assert rank_answer(placed_model, ALUMNI, mat, {mat}).rank == 1
    assert rank_answer(placed_model, ALUMNI, bob, {mat, bob}).rank == 1
    record = rank_answer(placed_model, ALUMNI, bosch, {bosch}, case="B", query_id="B-test-1p-0")
    assert record.rank == 4
    assert (record.answer, record.case, record.query_id) == ("bosch", "B", "B-test-1p-0")


def test_easy_answer_cannot_be_ranked(placed_model):
    ids = placed_model.symbols.entity_id
    with pytest.raises(ContractError):
        rank_answer(placed_model, ALUMNI, ids("bob"), {ids("mat"), ids("bob")}, hard_answers={ids("mat")})


def _sorted_rank(distances, answer, candidates) -> int:
    order = sorted(candidates, key=lambda c: (distances[c], c == answer))
    return order.index(answer) + 1


@pytest.mark.parametrize("runs", trial_counts(500, 10_000))
def test_ranks_match_sorting_oracle(runs):
    symbols = SymbolTable()
    for i in range(300):
        symbols.intern_entity(f"e{i}")
    model = BoxModel(symbols, 1, 1.0)
    rng = np.random.default_rng(0)
    for trial in range(runs):
        distances = rng.integers(0, 20, size=(1, symbols.num_nodes)).astype(float)
        ids = rng.choice(symbols.num_nodes, size=6, replace=False)
        easy, hard = frozenset(int(i) for i in ids[:2]), frozenset(int(i) for i in ids[2:])
        sample = EvalSample(ALUMNI, easy, hard, "A", f"A-test-1p-{trial}")
        ranks = {r.answer: r.rank for r in rank_samples(distances, [sample], model)}
        candidates = [e for e in range(symbols.num_nodes) if e not in easy | hard]
        for a in hard:
            expected = _sorted_rank(distances[0], a, candidates + [a])
            assert ranks[symbols.node_name(a)] == expected
            assert compute_rank(distances[0], a, np.array(candidates + [a])) == expected


# --- metrics ---


def test_perfect_ranks():
    table = metrics_from_records(_records(1, 1, 1))
    assert table.overall.mrr == 1.0
    assert all(v == 1.0 for v in table.overall.hits.values())


def test_mixed_ranks():
    table = metrics_from_records(_records(1, 4))
    assert table.overall.mrr == pytest.approx(0.625)
    assert table.overall.hits == {1: 0.5, 3: 0.5, 10: 1.0}
    assert table.hits3() == 0.5


def test_metrics_grouped_by_case_and_shape():
    table = metrics_from_records(_records(1, 2, case="A", shape="1p") + _records(10, case="B", shape="2p"))
    assert table.rows[("A", "1p")].answers == 2
    assert table.totals["B"].hits[3] == 0.0
    assert table.overall.answers == 3
    assert table.key_values()["A.1p.mrr"] == "0.7500"
    assert "per hard answer" in table.to_text()


def test_rank_must_be_positive():
    with pytest.raises(ContractError):
        metrics_from_records(_records(0))


def test_metrics_summary_rows():
    tables = {"plain": metrics_from_records(_records(1, 4, case="B"))}
    assert metrics_summary(tables, "B") == [["plain", "B", 0.5, 0.5, 1.0, 0.625]]
    assert metrics_summary(tables, "A") == []


# --- rank files ---


def test_metrics_recomputed_from_rank_file():
    records = _records(1, 3, 7, case="C", shape="2i")
    buf = io.StringIO()
    assert dump_ranks(records, buf) == 3
    loaded = load_ranks(io.StringIO(buf.getvalue()))
    assert loaded == records
    assert metrics_from_records(loaded) == metrics_from_records(records)


def test_rank_file_header_checked():
    with pytest.raises(ParseError, match="line 1"):
        load_ranks(io.StringIO("id\tanswer\n"))


def test_rank_file_bad_rank():
    text = "query_id\tanswer\trank\tcase\tshape\nq\tbob\tfirst\tA\t1p\n"
    with pytest.raises(ParseError, match="line 2"):
        load_ranks(io.StringIO(text))


# --- evaluation ---


def _eval_set(g):
    ids = g.symbols.entity_id
    return [
        EvalSample(ALUMNI, frozenset(), frozenset({ids("mat")}), "A", "A-test-1p-0"),
        EvalSample(ALUMNI_EMPLOYERS, frozenset({ids("bosch")}), frozenset({ids("ucl"), ids("mit")}), "A", "A-test-2p-0"),
    ]


def test_evaluate_counts_hard_answers(campus_graph):
    model = BoxModel(campus_graph.symbols, 4, 4.0)
    table = evaluate(model, _eval_set(campus_graph))
    assert table.overall.answers == 3
    assert set(table.rows) == {("A", "1p"), ("A", "2p")}
    for value in table.overall.hits.values():
        assert 0.0 <= value <= 1.0


def test_evaluate_ignores_query_order(campus_graph):
    model = BoxModel(campus_graph.symbols, 4, 4.0)
    samples = _eval_set(campus_graph)
    assert evaluate(model, samples).key_values() == evaluate(model, samples[::-1]).key_values()


def test_evaluate_needs_queries(campus_graph):
    with pytest.raises(ContractError):
        evaluate(BoxModel(campus_graph.symbols, 4, 4.0), [])


def test_baseline_without_ontology_is_plain(campus_graph):
    model = BoxModel(campus_graph.symbols, 4, 4.0)
    samples = _eval_set(campus_graph)
    baseline = evaluate_rewriting_baseline(model, samples, Ontology())
    assert baseline.key_values() == evaluate(model, samples).key_values()


def test_rewritings_only_lower_distances(campus):
    g, o = campus
    model = BoxModel(g.symbols, 4, 4.0)
    samples = [EvalSample(cq(("bob", "worksFor", "?X")), frozenset(), frozenset({g.symbols.entity_id("mit")}), "B")]
    plain = score_all(model, [s.query for s in samples])
    rewritten = rewriting_distances(model, samples, o)
    assert (rewritten <= plain + 1e-9).all()
    assert len(evaluate_records(model, samples)) == 1


# --- containment ---


def test_containment_pairs_follow_role_inclusions(campus):
    g, o = campus
    pairs, answer_sets = containment_pairs(g, o)
    by_relations = {(sub.atoms[0].relation, sup.atoms[0].relation) for sub, sup in pairs}
    assert ("teachesAt", "worksFor") in by_relations
    assert ("managerAt", "worksFor") in by_relations
    for (sub, _), found in zip(pairs, answer_sets):
        anchor = g.symbols.node_id(sub.atoms[0].head.name)
        assert found == g.successors(anchor, sub.atoms[0].relation)
