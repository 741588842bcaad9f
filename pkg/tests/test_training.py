import json

import numpy as np
import pytest

from castgraph.features import EmbeddingSource, FeatureConfig
from castgraph.graph import WindowConfig
from castgraph.model import GatModel, ModelConfig
from castgraph.pipeline import evaluate_partition, fit, prepare
from castgraph.synth import SynthConfig, generate
from castgraph.training import (
    CheckpointError,
    PairSet,
    TrainingConfigError,
    load_checkpoint,
    predict_links,
    save_checkpoint,
    score_pairs,
    train,
)


@pytest.fixture(scope="module")
def prep():
    corpus = generate(SynthConfig(n_tweets=240, dim=16, seed=3))
    src = EmbeddingSource(16, corpus.embeddings)
    return prepare(corpus.records, src, FeatureConfig(dim=16), WindowConfig())


def quick(**kw):
    return ModelConfig(**{"d_model": 8, "heads": 2, "max_epochs": 4, "patience": 2, "seed": 1, **kw})


def test_pair_sets_disjoint_by_tweet(prep):
    seen = {}
    for name, ps in prep.pairs.items():
        for gi, a, _, _ in ps.rows:
            tid = prep.graphs[gi].nodes[a].tweet_id
            assert seen.setdefault(tid, name) == name
    total = sum(len(g.pairs) for g in prep.graphs)
    assert sum(len(p) for p in prep.pairs.values()) == total


def test_training_reduces_loss(prep):
    _, state = fit(prep, quick(max_epochs=6, patience=6))
    losses = [r["train_loss"] for r in state.history]
    assert losses[-1] < losses[0]
    assert 1 <= state.best_epoch <= len(state.history)


def test_training_deterministic(prep):
    m1, s1 = fit(prep, quick())
    m2, s2 = fit(prep, quick())
    assert s1.history == s2.history
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])


def test_restores_best_validation_params(prep):
    model, state = fit(prep, quick(max_epochs=5, patience=5))
    scores = score_pairs(model, prep.graphs, prep.pairs["validation"])
    from castgraph.training import mean_loss

    got = mean_loss(model, scores, prep.pairs["validation"].labels)
    assert got == pytest.approx(state.best_val_loss, rel=1e-12)
    assert state.best_val_loss == min(r["val_loss"] for r in state.history)


def test_patience_stops_early(prep):
    # a large step size overfits this tiny corpus quickly
    _, state = fit(prep, quick(lr=0.05, max_epochs=40, patience=3))
    assert len(state.history) < 40
    assert len(state.history) - state.best_epoch == 3


def test_empty_pair_sets_rejected(prep):
    model = GatModel(prep.d_in, quick())
    with pytest.raises(TrainingConfigError, match="training"):
        train(model, prep.graphs, PairSet.empty(), prep.pairs["validation"])
    with pytest.raises(TrainingConfigError, match="validation"):
        train(model, prep.graphs, prep.pairs["train"], PairSet.empty())


def test_predict_threshold_monotone(prep):
    model, _ = fit(prep, quick(max_epochs=2))
    g = max(prep.graphs, key=lambda g: len(g.pairs))
    lo = predict_links(model, g, 0.5)
    hi = predict_links(model, g, 0.9)
    assert set((a, b) for a, b, _ in hi) <= set((a, b) for a, b, _ in lo)
    for a, b, s in lo:
        assert 0.0 <= s <= 1.0
        assert g.nodes[a].tweet_id == g.nodes[b].tweet_id
    with pytest.raises(ValueError):
        predict_links(model, g, 1.0)


def test_checkpoint_round_trip(prep, tmp_path):
    model, state = fit(prep, quick(max_epochs=2))
    p = tmp_path / "ckpt.json"
    save_checkpoint(p, model, state.history, {"seed": 1})
    loaded, doc = load_checkpoint(p)
    assert doc["run_config"] == {"seed": 1}
    for k in model.params:
        assert np.array_equal(model.params[k], loaded.params[k])
    a = evaluate_partition(model, prep).to_dict()
    b = evaluate_partition(loaded, prep).to_dict()
    assert a == b


def test_checkpoint_shape_mismatch(prep, tmp_path):
    model, _ = fit(prep, quick(max_epochs=1))
    p = tmp_path / "ckpt.json"
    save_checkpoint(p, model)
    doc = json.loads(p.read_text())
    doc["params"]["l1.W"]["shape"] = [2, 3, 4]
    p.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    p.write_text("{}")
    with pytest.raises(CheckpointError, match="checkpoint"):
        load_checkpoint(p)


def test_patience_zero_stops_at_first_miss(prep):
    _, state = fit(prep, quick(lr=0.05, max_epochs=40, patience=0))
    assert len(state.history) - state.best_epoch == 1


def test_separable_task_loss_strictly_decreases():
    # 100 two-event tweets give 200 pairs; direction is readable from the role directions alone
    corpus = generate(SynthConfig(n_tweets=100, dim=16, semantic_strength=2.0, decoy_rate=0.0, seed=5))
    p = prepare(corpus.records, EmbeddingSource(16, corpus.embeddings), FeatureConfig(dim=16), WindowConfig())
    _, state = fit(p, quick(dropout=0.0, max_epochs=5, patience=5, lr=3e-3))
    losses = [r["train_loss"] for r in state.history]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses
