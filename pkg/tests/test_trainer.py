"""Tests for training configuration, batch assembly and the training loop."""

from __future__ import annotations

import pytest
import torch

from conftest import cq
from errors import ConfigError
from model import BatchItem, BoxModel, backward, batch_loss, distance, embed_query, prob, sgd_step
from sampler import EvalSample, TrainSample
from trainer import RunManifest, TrainConfig, desk_preset, make_batches, train


ALUMNI = cq(("mit", "hasAlumnus", "?X"))
ALUMNI_EMPLOYERS = cq(("mit", "hasAlumnus", "?X"), ("?X", "worksFor", "?Y"), answer="Y")


def _samples(g):
    ids = g.symbols.entity_id
    return [
        TrainSample(ALUMNI, frozenset({ids("mat")}), "plain", id="plain-1p-0"),
        TrainSample(ALUMNI_EMPLOYERS, frozenset({ids("bosch")}), "plain", id="plain-2p-0"),
        TrainSample(cq(("bob", "teachesAt", "?X")), frozenset({ids("mit")}), "plain", id="plain-1p-1"),
    ]


def _valid(g):
    return [EvalSample(ALUMNI, frozenset(), frozenset({g.symbols.entity_id("mat")}), "A", "A-valid-1p-0")]


# --- configuration ---


def test_defaults():
    config = TrainConfig()
    assert (config.dim, config.batch_size, config.k_negatives, config.patience) == (400, 512, 32, 5)
    assert config.learning_rate == 1e-4


def test_build_coerces_strings():
    config = TrainConfig.build({"dim": "8", "gamma": "2.5", "deterministic": "yes"})
    assert (config.dim, config.gamma, config.deterministic) == (8, 2.5, True)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="momentum"):
        TrainConfig.build({"momentum": "0.9"})


@pytest.mark.parametrize(
    "values",
    [{"dim": 0}, {"learning_rate": -1.0}, {"patience": -1}, {"variant": "betae"}, {"strategy": "random"}, {"dim": "x"}],
)
def test_bad_values_rejected(values):
    with pytest.raises(ConfigError):
        TrainConfig.build(values)


def test_desk_preset_yields_to_explicit_values():
    config = TrainConfig.build({"desk_scale": "true", "dim": "16"})
    assert config.dim == 16
    assert config.max_steps == desk_preset()["max_steps"] == 20_000
    assert config.batch_size == 128


def test_desk_preset_also_sets_learning_rate_and_gamma():
    config = TrainConfig.build({"desk_scale": "true"})
    assert (config.learning_rate, config.gamma) == (0.25, 4.0)
    config = TrainConfig.build({"desk_scale": "true", "learning_rate": "0.01", "gamma": "2.0"})
    assert (config.learning_rate, config.gamma) == (0.01, 2.0)
    assert config.as_dict()["desk_scale"] is True


def test_config_file_with_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# desk run\ndim = 16\nlearning-rate = 0.01\nseed = 3\n", encoding="utf-8")
    config = TrainConfig.from_file(path, {"seed": 9, "variant": None})
    assert (config.dim, config.learning_rate, config.seed, config.variant) == (16, 0.01, 9, "q2b")


def test_manifest_file_round_trip(tmp_path):
    manifest = RunManifest(config=TrainConfig().as_dict(), history=[{"step": 5, "hits@3": 0.5}], best_step=5)
    restored = RunManifest.read(manifest.write(tmp_path / "manifest.json"))
    assert restored == manifest


# --- batches ---


def test_batch_sizes(campus_graph):
    config = TrainConfig.build({"batch_size": 2, "k_negatives": 3})
    batches = list(make_batches(_samples(campus_graph), config, 0, campus_graph.entities(), epochs=3))
    assert [len(b) for b in batches] == [2, 2, 2, 2, 1]
    assert all(len(item.negatives) == 3 for b in batches for item in b)


def test_batch_members_are_answers_and_non_answers(campus_graph):
    samples = _samples(campus_graph)
    positives = {s.query: s.positives for s in samples}
    config = TrainConfig.build({"batch_size": 1, "k_negatives": 4})
    for (item,) in make_batches(samples, config, 1, campus_graph.entities(), epochs=1):
        assert item.positive in positives[item.query]
        assert not set(item.negatives) & positives[item.query]


def test_epochs_are_reshuffled(campus_graph):
    g = campus_graph
    samples = [
        TrainSample(cq((g.symbols.node_name(e), "worksFor", "?X")), frozenset({e}), "plain") for e in g.entities()
    ]
    config = TrainConfig.build({"batch_size": len(samples), "k_negatives": 1})
    first, second = make_batches(samples, config, 4, g.entities(), epochs=2)
    assert [i.query for i in first] != [i.query for i in second]
    assert {i.query for i in first} == {i.query for i in second}


def test_batches_are_deterministic(campus_graph):
    config = TrainConfig.build({"batch_size": 2, "k_negatives": 2})
    runs = [list(make_batches(_samples(campus_graph), config, 7, campus_graph.entities(), epochs=2)) for _ in range(2)]
    assert runs[0] == runs[1]


def test_no_samples():
    with pytest.raises(ConfigError):
        next(make_batches([], TrainConfig(), 0, [0, 1]))


# --- optimization ---


def test_small_sgd_step_reduces_loss(campus_graph):
    g = campus_graph
    ids = g.symbols.entity_id
    batch = [
        BatchItem(ALUMNI, ids("mat"), (ids("anna"), ids("ucl"))),
        BatchItem(ALUMNI_EMPLOYERS, ids("bosch"), (ids("bob"), ids("mit"))),
    ]
    for seed in range(20):
        model = BoxModel(g.symbols, 8, 4.0, "q2b", seed).double()
        before, grads = backward(model, batch)
        sgd_step(model, grads, 1e-3)
        with torch.no_grad():
            assert float(batch_loss(model, batch)) < before, f"seed {seed}"


def _tiny_config(**values) -> TrainConfig:
    base = {
        "dim": 8,
        "gamma": 4.0,
        "learning_rate": 0.05,
        "batch_size": 1,
        "k_negatives": 4,
        "max_steps": 500,
        "eval_every": 500,
        "deterministic": True,
    }
    base.update(values)
    return TrainConfig.build(base)


def test_single_query_overfits(campus_graph):
    g = campus_graph
    mat = g.symbols.entity_id("mat")
    sample = TrainSample(ALUMNI, frozenset({mat}), "plain")
    model, manifest = train(_tiny_config(), [sample], _valid(g), g.symbols, g.entities())
    assert manifest.steps_run == 500
    with torch.no_grad():
        embedding = embed_query(model, ALUMNI)
        assert float(prob(distance(embedding, model.entity_embedding[mat]), model.gamma)) > 0.9
        for e in g.entities():
            if e != mat:
                assert float(prob(distance(embedding, model.entity_embedding[e]), model.gamma)) < 0.5


def test_zero_patience_stops_after_first_evaluation(campus_graph):
    config = _tiny_config(max_steps=50, eval_every=5, patience=0)
    _, manifest = train(config, _samples(campus_graph), _valid(campus_graph), campus_graph.symbols)
    assert len(manifest.history) == 1
    assert manifest.best_step == 5
    assert manifest.stopped_early


def test_training_writes_checkpoint_and_manifest(campus_graph, tmp_path):
    config = _tiny_config(max_steps=20, eval_every=10)
    model, manifest = train(config, _samples(campus_graph), _valid(campus_graph), campus_graph.symbols, out_dir=tmp_path)
    assert (tmp_path / manifest.best_checkpoint).exists()
    assert RunManifest.read(tmp_path / "manifest.json") == manifest
    assert [h["step"] for h in manifest.history] == [10, 20]
    best = max(h["hits@3"] for h in manifest.history)
    assert manifest.best_hits3 == best


def test_training_is_reproducible(campus_graph):
    config = _tiny_config(max_steps=30, eval_every=10, variant="o2b")
    runs = [train(config, _samples(campus_graph), _valid(campus_graph), campus_graph.symbols) for _ in range(2)]
    (first, first_manifest), (second, second_manifest) = runs
    assert first_manifest == second_manifest
    for name, tensor in first.state_dict().items():
        assert torch.equal(tensor, second.state_dict()[name])


def test_training_needs_validation(campus_graph):
    with pytest.raises(ConfigError):
        train(_tiny_config(), _samples(campus_graph), [], campus_graph.symbols)
