"""Wiring from records to trained models and reports."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .features import CONTEXT_DIM, EmbeddingSource, FeatureConfig, dataset_features
from .graph import WindowConfig, build_graphs
from .ingest import DatasetSplit, TweetRecord, split_dataset
from .metrics import EvalReport, evaluate
from .model import GatModel, ModelConfig
from .synth import knockout
from .training import PairSet, TrainState, score_pairs, train

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    records: list[TweetRecord]
    split: DatasetSplit
    graphs: list
    pairs: dict[str, PairSet]
    sem_dim: int

    @property
    def d_in(self) -> int:
        return self.sem_dim + CONTEXT_DIM

    def graphs_for(self, mode: str = "none") -> list:
        if mode == "none":
            return self.graphs
        return [g.with_features(knockout(g.x, mode, self.sem_dim)) for g in self.graphs]


def prepare(
    records: Sequence[TweetRecord],
    source: EmbeddingSource,
    features: FeatureConfig,
    window: WindowConfig,
    ratios=(0.8, 0.1, 0.1),
    split_seed: int = 0,
) -> Prepared:
    """Features and graphs over the whole corpus; pair sets partitioned by tweet split."""
    records = sorted(records, key=lambda r: (r.date_numeric, r.tweet_id))
    feats = dataset_features(records, source, features)
    graphs = build_graphs(records, feats, window, source.dim)
    split = split_dataset(records, ratios, split_seed)
    part = split.partition_of()
    pairs = {
        name: PairSet.from_graphs(graphs, keep=lambda t, n=name: part[t] == n)
        for name in ("train", "validation", "test")
    }
    return Prepared(records, split, graphs, pairs, source.dim)


def prepare_from_config(records, cfg: RunConfig) -> Prepared:
    source = EmbeddingSource.from_config(cfg.features)
    if source.dim != cfg.features.dim:
        raise ValueError(
            f"embeddings have dimension {source.dim}, config says features.dim={cfg.features.dim}"
        )
    return prepare(records, source, cfg.features, cfg.window, cfg.split.ratios, cfg.split_seed)


def fit(prep: Prepared, model_cfg: ModelConfig, mode: str = "none", callback=None):
    graphs = prep.graphs_for(mode)
    model = GatModel(prep.d_in, model_cfg)
    state = train(model, graphs, prep.pairs["train"], prep.pairs["validation"], model_cfg, callback)
    return model, state


def evaluate_partition(
    model: GatModel, prep: Prepared, partition: str = "test", mode: str = "none", threshold: Optional[float] = None
) -> EvalReport:
    pairs = prep.pairs[partition]
    scores = score_pairs(model, prep.graphs_for(mode), pairs)
    return evaluate(scores, pairs.labels, model.config.threshold if threshold is None else threshold)


@dataclass
class AblationResult:
    mode: str
    report: EvalReport
    state: TrainState


def run_ablation(prep: Prepared, model_cfg: ModelConfig, modes=("none", "no_spatial", "no_temporal", "no_both")):
    """Independently trained variants differing only in which feature segments are zeroed."""
    out = {}
    for mode in modes:
        model, state = fit(prep, model_cfg, mode)
        out[mode] = AblationResult(mode, evaluate_partition(model, prep, "test", mode), state)
        log.info("ablation %s: f1 %.4f", mode, out[mode].report.f1)
    return out


ABLATION_LABELS = {
    "none": "CaST (full)",
    "no_spatial": "w/o Spatial",
    "no_temporal": "w/o Temporal",
    "no_both": "w/o Spatial & Temporal",
}


def ablation_table(results: dict) -> str:
    lines = ["variant,mode,accuracy,precision,recall,f1,auc,epochs"]
    for mode, res in results.items():
        r = res.report
        auc = "" if r.auc is None else f"{r.auc:.6f}"
        lines.append(
            f"{ABLATION_LABELS.get(mode, mode)},{mode},{r.accuracy:.6f},{r.precision:.6f},"
            f"{r.recall:.6f},{r.f1:.6f},{auc},{len(res.state.history)}"
        )
    return "\n".join(lines) + "\n"
