"""Train the desk-scale model on a planted synthetic corpus and report test metrics.

    python scripts/desk_experiment.py --tweets 2000 --seed 0
"""
import argparse
import json
import logging
import time

from castgraph.features import EmbeddingSource, FeatureConfig
from castgraph.graph import WindowConfig, graph_stats
from castgraph.model import ModelConfig
from castgraph.pipeline import evaluate_partition, fit, prepare
from castgraph.synth import SynthConfig, generate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tweets", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--spatial", type=float, default=None, help="planted spatial strength")
    ap.add_argument("--temporal", type=float, default=None, help="planted temporal strength")
    ap.add_argument("--d-model", type=int, default=32)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    kw = {"n_tweets": args.tweets, "seed": args.seed}
    if args.spatial is not None:
        kw["spatial_strength"] = args.spatial
    if args.temporal is not None:
        kw["temporal_strength"] = args.temporal
    synth = SynthConfig(**kw)
    corpus = generate(synth)
    prep = prepare(corpus.records, EmbeddingSource(synth.dim, corpus.embeddings), FeatureConfig(dim=synth.dim), WindowConfig())

    totals = {}
    for g in prep.graphs:
        s = graph_stats(g)
        for sec in ("nodes", "edges"):
            for k, v in s[sec].items():
                totals[f"{sec}.{k}"] = totals.get(f"{sec}.{k}", 0) + v
    print(f"{len(prep.graphs)} windows", json.dumps(totals))
    for name, ps in prep.pairs.items():
        print(f"{name:10s} pairs {len(ps):5d}  positive {ps.labels.mean():.3f}")

    t0 = time.perf_counter()
    model, state = fit(prep, ModelConfig(d_model=args.d_model, heads=args.heads, seed=args.seed))
    elapsed = time.perf_counter() - t0
    rep = evaluate_partition(model, prep)
    print(f"trained {len(state.history)} epochs (best {state.best_epoch}) in {elapsed:.1f}s")
    print(json.dumps(rep.to_dict(), indent=2))


if __name__ == "__main__":
    main()
