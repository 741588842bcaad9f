"""Mini-batch training with early stopping, link prediction and checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .metrics import UndefinedMetricError, roc_auc
from .model import (
    AdamState,
    GatModel,
    ModelConfig,
    adam_step,
    class_weight_vector,
    focal_loss,
    graph_inputs,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "castgraph-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingConfigError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class PairSet:
    """Candidate pairs spread over several graphs: rows of (graph, src, dst, label)."""

    rows: np.ndarray

    def __len__(self):
        return len(self.rows)

    @property
    def labels(self) -> np.ndarray:
        return self.rows[:, 3]

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 4), dtype=np.int64))

    @classmethod
    def from_graphs(cls, graphs, keep=None) -> "PairSet":
        """All candidate pairs of ``graphs``; ``keep(tweet_id)`` filters by tweet."""
        rows = []
        for gi, g in enumerate(graphs):
            for (a, b, y), tid in zip(g.pairs, g.pair_tweets):
                if keep is None or keep(tid):
                    rows.append((gi, a, b, y))
        return cls(np.array(rows, dtype=np.int64).reshape(-1, 4))

    def by_graph(self):
        for gi in np.unique(self.rows[:, 0]):
            yield int(gi), self.rows[self.rows[:, 0] == gi]


@dataclass
class TrainState:
    adam: AdamState
    best_val_loss: float = np.inf
    best_epoch: int = -1
    stale_epochs: int = 0
    history: list = field(default_factory=list)


def score_pairs(model: GatModel, graphs, pairs: PairSet) -> np.ndarray:
    """Causal-class probability for every row of ``pairs`` (eval mode)."""
    out = np.zeros(len(pairs))
    for gi, rows in pairs.by_graph():
        x, adj = graph_inputs(graphs[gi])
        probs, _, _ = model.forward(x, adj, rows[:, 1:3])
        out[pairs.rows[:, 0] == gi] = probs[:, 1]
    return out


def mean_loss(model: GatModel, scores: np.ndarray, labels: np.ndarray) -> float:
    probs = np.stack([1.0 - scores, scores], axis=1)
    w = model.class_weights[labels]
    return float(focal_loss(probs, labels, w, model.config.gamma).mean())


def _batches(pairs: PairSet, batch_size: int, rng) -> list[np.ndarray]:
    # batches never mix graphs, so a step needs one forward pass over one graph
    chunks = []
    for _, rows in pairs.by_graph():
        rows = rows[rng.permutation(len(rows))]
        chunks += [rows[i : i + batch_size] for i in range(0, len(rows), batch_size)]
    order = rng.permutation(len(chunks))
    return [chunks[i] for i in order]


def train(
    model: GatModel,
    graphs: Sequence,
    train_pairs: PairSet,
    val_pairs: PairSet,
    config: Optional[ModelConfig] = None,
    callback=None,
) -> TrainState:
    """Train ``model`` in place; on return it holds the lowest-validation-loss parameters."""
    cfg = config or model.config
    if len(train_pairs) == 0:
        raise TrainingConfigError("training set has no candidate pairs")
    if len(val_pairs) == 0:
        raise TrainingConfigError("validation set has no candidate pairs")
    model.class_weights = class_weight_vector(train_pairs.labels, cfg.class_weights)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    state = TrainState(AdamState.zeros_like(model.params))
    best = model.copy_params()

    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        for batch in _batches(train_pairs, cfg.batch_size, shuffle_rng):
            gi = int(batch[0, 0])
            x, adj = graph_inputs(graphs[gi])
            # a step only needs the two-hop neighbourhood of its pairs
            nodes, adjs, local = adj.receptive_field(batch[:, 1:3].ravel())
            pairs = local[batch[:, 1:3]]
            _, loss, cache = model.forward(x[nodes], adjs, pairs, batch[:, 3], rng=dropout_rng)
            grads = model.backward(cache)
            adam_step(model.params, grads, state.adam, cfg.lr)
            total += loss * len(batch)
            count += len(batch)

        scores = score_pairs(model, graphs, val_pairs)
        val_loss = mean_loss(model, scores, val_pairs.labels)
        try:
            val_auc = roc_auc(scores, val_pairs.labels)
        except UndefinedMetricError:
            val_auc = None
        row = {"epoch": epoch, "train_loss": total / count, "val_loss": val_loss, "val_auc": val_auc}
        state.history.append(row)
        log.info("epoch %d train %.5f val %.5f auc %s", epoch, row["train_loss"], val_loss, val_auc)
        if callback is not None:
            callback(row)

        if val_loss < state.best_val_loss:
            state.best_val_loss = val_loss
            state.best_epoch = epoch
            state.stale_epochs = 0
            best = model.copy_params()
        else:
            state.stale_epochs += 1
            if state.stale_epochs >= max(cfg.patience, 1):
                break

    model.params = best
    return state


def predict_links(model: GatModel, g, threshold: float) -> list[tuple[int, int, float]]:
    """Directed candidate pairs of ``g`` whose causal probability reaches ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    if len(g.pairs) == 0:
        return []
    x, adj = graph_inputs(g)
    probs, _, _ = model.forward(x, adj, g.pairs[:, :2])
    keep = probs[:, 1] >= threshold
    return [(int(a), int(b), float(s)) for (a, b), s in zip(g.pairs[keep, :2], probs[keep, 1])]


def save_checkpoint(path, model: GatModel, history=(), run_config: Optional[dict] = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "d_in": model.d_in,
        "model_config": model.config.to_dict(),
        "class_weights": [float(w) for w in model.class_weights],
        "params": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in arr.ravel()]}
            for name, arr in sorted(model.params.items())
        },
        "history": list(history),
        "run_config": run_config,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> tuple[GatModel, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
    cfg = ModelConfig(**doc["model_config"])
    params = {}
    for name, blob in doc["params"].items():
        arr = np.asarray(blob["data"], dtype=float)
        if arr.size != int(np.prod(blob["shape"])):
            raise CheckpointError(f"{path}: {name} data does not match declared shape")
        params[name] = arr.reshape(blob["shape"])
    try:
        model = GatModel(int(doc["d_in"]), cfg, params)
    except ValueError as exc:
        raise CheckpointError(f"{path}: incompatible parameters: {exc}") from None
    model.class_weights = np.asarray(doc["class_weights"], dtype=float)
    return model, doc
