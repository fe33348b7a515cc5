"""Tests for the box operators, the loss, gradients and checkpoints."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from conftest import cq, trial_counts
from errors import ArityError, CheckpointError, ConfigError, NumericError, UnsupportedShapeError
from model import (
    BatchItem,
    Box,
    BoxModel,
    Gradients,
    QueryEmbedding,
    backward,
    batch_loss,
    containment_gap,
    distance,
    embed_entity,
    embed_query,
    intersect,
    load,
    loss,
    prob,
    project,
    save,
    score_all,
    sgd_step,
)
from query import ConjunctiveQuery


ALUMNI = cq(("mit", "hasAlumnus", "?X"))
ALUMNI_EMPLOYERS = cq(("mit", "hasAlumnus", "?X"), ("?X", "worksFor", "?Y"), answer="Y")
RUNNING = cq(("mit", "hasAlumnus", "?X"), ("?X", "type", "AProfessor"), ("?X", "teachesAt", "?Y"), answer="Y")
RUNNING_GENS = [
    cq(("mit", "hasAlumnus", "?X"), ("?X", "type", "AProfessor"), ("?X", "worksFor", "?Y"), answer="Y"),
    cq(("mit", "hasAlumnus", "?X"), ("?X", "type", "Professor"), ("?X", "teachesAt", "?Y"), answer="Y"),
    cq(("mit", "hasAlumnus", "?X"), ("?X", "type", "Professor"), ("?X", "worksFor", "?Y"), answer="Y"),
]


@pytest.fixture()
def symbols(campus_graph):
    return campus_graph.symbols


def _model(symbols, dim=2, gamma=4.0, variant="o2b", seed=0) -> BoxModel:
    return BoxModel(symbols, dim, gamma, variant, seed)


def _set_row(param: torch.nn.Parameter, row: int, values) -> None:
    with torch.no_grad():
        param[row] = torch.tensor(values, dtype=param.dtype)


# --- operators ---


def test_entity_box_is_a_point(symbols):
    model = _model(symbols)
    bob = symbols.entity_id("bob")
    _set_row(model.entity_embedding, bob, [1.5, -0.5])
    box = embed_entity(model, "bob")
    assert torch.equal(box.center, torch.tensor([1.5, -0.5]))
    assert torch.equal(box.offset, torch.zeros(2))


def test_entity_rows_are_independent(symbols):
    model = _model(symbols)
    before = embed_entity(model, "mat").center.detach().clone()
    _set_row(model.entity_embedding, symbols.entity_id("bob"), [9.0, 9.0])
    assert torch.equal(embed_entity(model, "mat").center, before)


def test_unknown_entity(symbols):
    with pytest.raises(LookupError):
        embed_entity(_model(symbols), "nobody")


def test_projection_translates_and_widens(symbols):
    model = _model(symbols)
    r = symbols.relation_id("worksFor")
    _set_row(model.relation_center, r, [1.0, 2.0])
    _set_row(model.relation_offset, r, [0.5, 0.5])
    box = project(Box(torch.zeros(2), torch.zeros(2)), "worksFor", model)
    assert torch.allclose(box.center, torch.tensor([1.0, 2.0]))
    assert torch.allclose(box.offset, torch.tensor([0.5, 0.5]))


def test_zero_relation_is_identity(symbols):
    model = _model(symbols)
    r = symbols.relation_id("managerAt")
    _set_row(model.relation_center, r, [0.0, 0.0])
    _set_row(model.relation_offset, r, [0.0, 0.0])
    box = Box(torch.tensor([0.3, -0.2]), torch.tensor([0.1, 0.4]))
    out = project(box, r, model)
    assert torch.equal(out.center, box.center)
    assert torch.equal(out.offset, box.offset)


def test_projections_commute(symbols):
    model = _model(symbols, dim=4)
    box = embed_entity(model, "mit")
    a = project(project(box, "hasAlumnus", model), "worksFor", model)
    b = project(project(box, "worksFor", model), "hasAlumnus", model)
    assert torch.allclose(a.center, b.center)
    assert torch.allclose(a.offset, b.offset)


def test_intersection_of_equal_boxes_keeps_center(symbols):
    model = _model(symbols, dim=4)
    box = Box(torch.tensor([0.2, -0.1, 0.7, 0.0]), torch.tensor([0.3, 0.1, 0.2, 0.5]))
    out = intersect([box, box, box], model)
    assert torch.allclose(out.center, box.center, atol=1e-6)


def test_intersection_needs_two_boxes(symbols):
    with pytest.raises(ArityError):
        intersect([Box(torch.zeros(2), torch.zeros(2))], _model(symbols))


@pytest.mark.parametrize("runs", trial_counts(200, 10_000))
def test_intersection_stays_inside_inputs(symbols, runs):
    generator = torch.Generator().manual_seed(0)
    for seed in range(runs):
        model = _model(symbols, dim=8, seed=seed)
        n = 2 + seed % 3
        centers = torch.randn(n, 8, generator=generator)
        offsets = torch.rand(n, 8, generator=generator) + 0.01
        with torch.no_grad():
            out = intersect([Box(c, o) for c, o in zip(centers, offsets)], model)
        assert (out.center >= centers.min(dim=0).values - 1e-6).all()
        assert (out.center <= centers.max(dim=0).values + 1e-6).all()
        assert (out.offset < offsets.min(dim=0).values).all()


# --- query embedding ---


def test_single_projection_query(symbols):
    model = _model(symbols, dim=4)
    (branch,) = embed_query(model, ALUMNI).branches
    expected = project(embed_entity(model, "mit"), "hasAlumnus", model)
    assert torch.allclose(branch.center, expected.center)
    assert torch.allclose(branch.offset, expected.offset)


def test_chain_query_is_nested_projection(symbols):
    model = _model(symbols, dim=4)
    (branch,) = embed_query(model, ALUMNI_EMPLOYERS).branches
    expected = project(project(embed_entity(model, "mit"), "hasAlumnus", model), "worksFor", model)
    assert torch.allclose(branch.center, expected.center)


def test_union_query_has_one_box_per_branch(symbols):
    model = _model(symbols, dim=4)
    left, right = cq(("mit", "hasAlumnus", "?X")), cq(("anna", "managerAt", "?X"))
    embedding = embed_query(model, ConjunctiveQuery.union_of([left, right]))
    assert len(embedding.branches) == 2
    for single in (left, right):
        center = embed_query(model, single).branches[0].center
        assert any(torch.allclose(branch.center, center) for branch in embedding.branches)


def test_unsupported_query_cannot_be_embedded(symbols):
    with pytest.raises(UnsupportedShapeError):
        embed_query(_model(symbols), cq(("?X", "type", "Professor"), ("?X", "degreeFrom", "mit")))


# --- distance and probability ---


def test_distance_examples():
    at = Box(torch.tensor([1.0, 2.0]), torch.zeros(2))
    origin = Box(torch.zeros(2), torch.zeros(2))

    assert float(distance(QueryEmbedding((at,)), torch.tensor([1.0, 2.0]))) == 0.0
    assert float(distance(QueryEmbedding((origin,)), torch.tensor([3.0, -4.0]))) == 7.0
    far = Box(torch.tensor([5.0, 0.0]), torch.zeros(2))
    near = Box(torch.tensor([2.0, 0.0]), torch.zeros(2))
    assert float(distance(QueryEmbedding((far, near)), torch.zeros(2))) == 2.0


def test_probability():
    assert float(prob(4.0, 4.0)) == pytest.approx(0.5)
    assert float(prob(1e6, 4.0)) == pytest.approx(0.0, abs=1e-12)
    for d in (0.0, 2.5, 9.0):
        dist = torch.tensor(d, dtype=torch.float64)
        assert 1 - float(prob(dist, 4.0)) == pytest.approx(float(torch.sigmoid(dist - 4.0)), rel=1e-9)


# --- loss ---


def _place_at_margin(model, symbols):
    """Query box at the origin, answer and negative both at L1 distance gamma."""
    _set_row(model.entity_embedding, symbols.entity_id("mit"), [0.0, 0.0])
    _set_row(model.relation_center, symbols.relation_id("hasAlumnus"), [0.0, 0.0])
    _set_row(model.entity_embedding, symbols.entity_id("bob"), [1.0, 3.0])
    _set_row(model.entity_embedding, symbols.entity_id("anna"), [-4.0, 0.0])


@pytest.mark.parametrize("variant", ["q2b", "o2b"])
def test_loss_at_margin_is_two_ln_two(symbols, variant):
    model = _model(symbols, variant=variant)
    _place_at_margin(model, symbols)
    value = loss(model, ALUMNI, symbols.entity_id("bob"), [symbols.entity_id("anna")])
    assert float(value) == pytest.approx(2 * math.log(2), abs=1e-6)


def test_generalizations_including_the_query_change_nothing(symbols):
    model = _model(symbols, dim=4)
    bob, anna = symbols.entity_id("bob"), symbols.entity_id("anna")
    assert float(loss(model, RUNNING, bob, [anna])) == float(loss(model, RUNNING, bob, [anna], [RUNNING]))


def test_generalization_weighted_loss(symbols):
    model = _model(symbols, dim=4)
    bob, anna = symbols.entity_id("bob"), symbols.entity_id("anna")
    point = model.entity_embedding[torch.tensor([bob, anna])]
    with torch.no_grad():
        positives = [distance(embed_query(model, q), point[0]) for q in [RUNNING, *RUNNING_GENS]]
        negative = distance(embed_query(model, RUNNING), point[1])
        expected = -sum(float(torch.nn.functional.logsigmoid(model.gamma - d)) for d in positives) / 4
        expected -= float(torch.nn.functional.logsigmoid(negative - model.gamma))
        value = loss(model, RUNNING, bob, [anna], RUNNING_GENS)
    assert float(value) == pytest.approx(expected, rel=1e-5)
    assert float(value) >= 0


def test_plain_variant_ignores_generalizations(symbols):
    model = _model(symbols, dim=4, variant="q2b")
    bob, anna = symbols.entity_id("bob"), symbols.entity_id("anna")
    assert float(loss(model, RUNNING, bob, [anna], RUNNING_GENS)) == float(loss(model, RUNNING, bob, [anna]))


def test_positive_weight_is_linear(symbols):
    model = _model(symbols, dim=4)
    batch = [BatchItem(RUNNING, symbols.entity_id("bob"), (symbols.entity_id("anna"),), tuple(RUNNING_GENS))]
    with torch.no_grad():
        values = [float(batch_loss(model, batch, w)) for w in (0.0, 1.0, 2.0)]
    assert values[2] - values[1] == pytest.approx(values[1] - values[0], rel=1e-5)


def test_negatives_are_required(symbols):
    with pytest.raises(ConfigError):
        loss(_model(symbols), ALUMNI, symbols.entity_id("bob"), [])


# --- gradients ---


def test_unused_parameters_get_zero_gradient(symbols):
    model = _model(symbols, dim=4)
    batch = [BatchItem(ALUMNI, symbols.entity_id("bob"), (symbols.entity_id("anna"),))]
    _, grads = backward(model, batch)
    for name, grad in grads.tensors.items():
        if name.startswith(("center_net", "offset_net")):
            assert torch.count_nonzero(grad) == 0
    assert torch.count_nonzero(grads["relation_center"][symbols.relation_id("managerAt")]) == 0
    assert torch.count_nonzero(grads["relation_center"][symbols.relation_id("hasAlumnus")]) > 0


@pytest.mark.parametrize("runs", trial_counts(10, 100))
def test_gradients_match_finite_differences(symbols, runs):
    rng = np.random.default_rng(0)
    entities = symbols.entity_ids()
    h = 1e-6
    for seed in range(runs):
        model = _model(symbols, dim=4, seed=seed).double()
        query = [ALUMNI, ALUMNI_EMPLOYERS, RUNNING][seed % 3]
        batch = [
            BatchItem(query, int(rng.choice(entities)), tuple(int(e) for e in rng.choice(entities, 2)), tuple(RUNNING_GENS if query is RUNNING else ()))
        ]
        _, grads = backward(model, batch)
        for name, param in model.named_parameters():
            flat = param.data.view(-1)
            for idx in (int(i) for i in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False)):
                original = float(flat[idx])
                with torch.no_grad():
                    flat[idx] = original + h
                    up = float(batch_loss(model, batch))
                    flat[idx] = original - h
                    down = float(batch_loss(model, batch))
                    flat[idx] = original
                numeric = (up - down) / (2 * h)
                analytic = float(grads[name].view(-1)[idx])
                assert numeric == pytest.approx(analytic, rel=1e-4, abs=1e-7), f"{name}[{idx}] seed {seed}"


def test_non_finite_parameter_is_reported(symbols):
    model = _model(symbols)
    _set_row(model.entity_embedding, symbols.entity_id("mit"), [float("nan"), 0.0])
    with pytest.raises(NumericError):
        backward(model, [BatchItem(ALUMNI, symbols.entity_id("bob"), (symbols.entity_id("anna"),))])


def test_sgd_step_keeps_offsets_non_negative(symbols):
    model = _model(symbols)
    grads = Gradients({name: torch.zeros_like(p) for name, p in model.named_parameters()})
    grads.tensors["relation_offset"] = torch.full_like(model.relation_offset, 100.0)
    sgd_step(model, grads, lr=1.0)
    assert (model.relation_offset >= 0).all()


# --- scoring ---


def test_score_all_matches_distance(symbols):
    model = _model(symbols, dim=4)
    scores = score_all(model, [ALUMNI, ALUMNI_EMPLOYERS])
    assert scores.shape == (2, symbols.num_nodes)
    with torch.no_grad():
        expected = distance(embed_query(model, ALUMNI_EMPLOYERS), model.entity_embedding)
    assert np.allclose(scores[1], expected.double().numpy(), atol=1e-5)


def test_containment_gap_of_identical_queries(symbols):
    model = _model(symbols, dim=4)
    assert containment_gap(model, [(ALUMNI, ALUMNI)], [[symbols.entity_id("bob")]]) == 0.0


# --- checkpoints ---


def test_checkpoint_round_trip(symbols, tmp_path):
    model = _model(symbols, dim=4, gamma=3.0, variant="q2b", seed=7)
    path = save(model, tmp_path / "model.ckpt", extra={"step": 5})
    restored = load(path)
    assert (restored.dim, restored.gamma, restored.variant) == (4, 3.0, "q2b")
    assert restored.symbols.to_dict() == symbols.to_dict()
    for name, tensor in model.state_dict().items():
        assert torch.equal(tensor, restored.state_dict()[name])


def test_corrupted_magic(symbols, tmp_path):
    path = save(_model(symbols), tmp_path / "model.ckpt")
    data = bytearray(path.read_bytes())
    data[0] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load(path)


def test_truncated_checkpoint(symbols, tmp_path):
    path = save(_model(symbols), tmp_path / "model.ckpt")
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointError):
        load(path)


def test_model_arguments_are_checked(symbols):
    with pytest.raises(ConfigError):
        BoxModel(symbols, 0, 4.0)
    with pytest.raises(ConfigError):
        BoxModel(symbols, 4, 4.0, variant="betae")
