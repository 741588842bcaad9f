"""Shared builders and invariant checkers for the test suite."""
import numpy as np

from castgraph.features import EmbeddingSource, FeatureConfig, dataset_features
from castgraph.graph import EdgeKind, NodeKind, WindowConfig, build_graphs, partition_windows
from castgraph.ingest import BoundingBox, CausalAnnotation, EventMention, TweetRecord

T0 = 1503705600  # 2017-08-26 00:00:00 UTC


def make_record(tid, ts, n_events=2, pairs=(), bbox_at=None, geo=None, triggers=None):
    triggers = triggers or [f"w{tid}_{j}" for j in range(n_events)]
    events = tuple(EventMention(f"evt_{j + 1:03d}", t, {}) for j, t in enumerate(triggers))
    bbox = None
    if bbox_at is not None:
        lat, lon = bbox_at
        bbox = BoundingBox(((lat, lon),) * 4)
    return TweetRecord(
        tweet_id=str(tid),
        tweet_text=" ".join(triggers),
        tokens=tuple(triggers),
        events=events,
        causal_relation=CausalAnnotation(bool(pairs), tuple(pairs)),
        mask=("O",) * len(triggers),
        date_str="",
        date_numeric=int(ts),
        geolocation=geo,
        bounding_box=bbox,
    )


def random_corpus(rng, n_max=12, span=3 * 21600):
    n = int(rng.integers(0, n_max + 1))
    recs = []
    for i in range(n):
        k = int(rng.integers(1, 4))
        pairs = []
        if k >= 2 and rng.random() < 0.5:
            a, b = rng.choice(k, 2, replace=False)
            pairs.append((f"evt_{a + 1:03d}", f"evt_{b + 1:03d}"))
        bbox = (float(rng.uniform(29, 30)), float(rng.uniform(-96, -95))) if rng.random() < 0.6 else None
        geo = ["Houston, TX", "Katy, TX", None][int(rng.integers(3))]
        ts = T0 + int(rng.integers(0, span))
        recs.append(make_record(i, ts, k, pairs, bbox, geo))
    recs.sort(key=lambda r: (r.date_numeric, r.tweet_id))
    return recs


def graphs_for(records, config=None, dim=8):
    config = config or WindowConfig()
    src = EmbeddingSource(dim)
    feats = dataset_features(records, src, FeatureConfig(dim=dim))
    return build_graphs(records, feats, config, dim)


def check_graph_invariants(records, graphs, config):
    """Assert window/edge/label invariants; returns number of checks made."""
    buckets = partition_windows(records, config.window_seconds)
    seen = [r.tweet_id for b in buckets for r in b]
    assert sorted(seen) == sorted(r.tweet_id for r in records), "partition not exhaustive"
    assert len(seen) == len(set(seen)), "partition not disjoint"
    assert len(graphs) == len(buckets)
    by_id = {r.tweet_id: r for r in records}
    covered = []
    for g in graphs:
        event_tweets = {n.tweet_id for n in g.nodes if n.kind is NodeKind.EVENT}
        covered += sorted(event_tweets)
        for n in g.nodes:
            if n.kind is NodeKind.EVENT:
                t = by_id[n.tweet_id].date_numeric
                assert g.window_start <= t < g.window_end
        ids = {n.node_id for n in g.nodes}
        for e in g.edges:
            assert e.src in ids and e.dst in ids, "edge leaves its window graph"
            assert e.src != e.dst
            if e.kind is EdgeKind.TEMPORAL:
                ts, td = g.timestamps[e.src], g.timestamps[e.dst]
                assert ts <= td
                both_events = g.nodes[e.src].kind is NodeKind.EVENT and g.nodes[e.dst].kind is NodeKind.EVENT
                if both_events:
                    assert ts < td
        annotated = set()
        for tid in event_tweets:
            for c, ef in by_id[tid].causal_relation.pairs:
                annotated.add((tid, c, ef))
        labelled = set()
        for (a, b, y), tid in zip(g.pairs, g.pair_tweets):
            na, nb = g.nodes[a], g.nodes[b]
            assert na.tweet_id == nb.tweet_id == tid
            if y == 1:
                labelled.add((tid, na.event_id, nb.event_id))
        assert labelled == annotated, "labels differ from annotations"
        n_pairs = sum(len(by_id[t].events) * (len(by_id[t].events) - 1) for t in event_tweets)
        assert len(g.pairs) == n_pairs
    assert sorted(covered) == sorted(r.tweet_id for r in records if r.events)
    return True
