"""Chronological windows and one heterogeneous event graph per window."""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .features import TEMPORAL_DIM
from .ingest import TweetRecord, bbox_centroid


class NodeKind(str, Enum):
    EVENT = "Event"
    SPATIAL = "Spatial"
    TEMPORAL = "Temporal"


class EdgeKind(str, Enum):
    CONTEXTUAL = "Contextual"
    SPATIAL = "Spatial"
    TEMPORAL = "Temporal"


class GraphConsistencyError(ValueError):
    pass


class OrderingError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    window_seconds: int = 21600
    spatial_km: float = 50.0
    semantic_threshold: float = 0.85
    temporal_k: int = 5
    semantic_k: int = 5
    spatial_k: int = 5
    cross_tweet_pairs: bool = False

    def validate(self):
        if self.window_seconds <= 0:
            raise ValueError("window.window_seconds must be > 0")
        if self.spatial_km < 0:
            raise ValueError("window.spatial_km must be >= 0")
        if not -1.0 <= self.semantic_threshold <= 1.0:
            raise ValueError("window.semantic_threshold must lie in [-1, 1]")
        for name in ("temporal_k", "semantic_k", "spatial_k"):
            if getattr(self, name) < 0:
                raise ValueError(f"window.{name} must be >= 0")


@dataclass(frozen=True)
class Node:
    node_id: int
    kind: NodeKind
    tweet_id: str
    event_id: Optional[str] = None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: EdgeKind


@dataclass
class WindowGraph:
    window_index: int
    window_start: int
    window_end: int
    nodes: list[Node]
    edges: list[Edge]
    x: np.ndarray  # (n_nodes, feature_dim)
    timestamps: np.ndarray  # per node, Unix seconds
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    pair_tweets: list[str] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def event_index(self) -> dict[tuple[str, str], int]:
        return {(n.tweet_id, n.event_id): n.node_id for n in self.nodes if n.kind is NodeKind.EVENT}

    def message_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) arrays for message passing, self-loops included.

        Event-to-event Temporal edges carry messages forward in time only;
        every other edge is used in both directions.
        """
        src, dst = [], []
        for e in self.edges:
            src.append(e.src)
            dst.append(e.dst)
            directed = (
                e.kind is EdgeKind.TEMPORAL
                and self.nodes[e.src].kind is NodeKind.EVENT
                and self.nodes[e.dst].kind is NodeKind.EVENT
            )
            if not directed:
                src.append(e.dst)
                dst.append(e.src)
        loops = list(range(self.n_nodes))
        s = np.array(src + loops, dtype=np.int64)
        d = np.array(dst + loops, dtype=np.int64)
        # dedupe, stable order by (dst, src) keeps message passing deterministic
        if s.size:
            key = np.unique(d * max(self.n_nodes, 1) + s)
            d, s = np.divmod(key, max(self.n_nodes, 1))
        return s, d

    def with_features(self, x: np.ndarray) -> "WindowGraph":
        return WindowGraph(
            self.window_index,
            self.window_start,
            self.window_end,
            self.nodes,
            self.edges,
            x,
            self.timestamps,
            self.pairs,
            self.pair_tweets,
        )

    def to_dict(self) -> dict:
        return {
            "window_index": self.window_index,
            "window_start": self.window_start,
            "window_end": self.window_end,
            "nodes": [
                {
                    "node_id": n.node_id,
                    "kind": n.kind.value,
                    "tweet_id": n.tweet_id,
                    "event_id": n.event_id,
                    "timestamp": int(self.timestamps[n.node_id]),
                }
                for n in self.nodes
            ],
            "edges": [{"src": e.src, "dst": e.dst, "kind": e.kind.value} for e in self.edges],
            "pairs": [
                {"src": int(a), "dst": int(b), "label": int(y), "tweet_id": t}
                for (a, b, y), t in zip(self.pairs, self.pair_tweets)
            ],
        }


def partition_windows(records: Sequence[TweetRecord], window_seconds: int) -> list[list[TweetRecord]]:
    """Half-open buckets [t0 + k*w, t0 + (k+1)*w) anchored at the first timestamp."""
    if window_seconds <= 0:
        raise ValueError("window_seconds must be > 0")
    if not records:
        return []
    for a, b in zip(records, records[1:]):
        if b.date_numeric < a.date_numeric:
            raise OrderingError(
                f"records not sorted by date_numeric: {a.tweet_id} ({a.date_numeric}) "
                f"precedes {b.tweet_id} ({b.date_numeric})"
            )
    t0 = records[0].date_numeric
    buckets: dict[int, list[TweetRecord]] = {}
    for r in records:
        buckets.setdefault((r.date_numeric - t0) // window_seconds, []).append(r)
    return [buckets[k] for k in sorted(buckets)]


def window_bounds(records: Sequence[TweetRecord], bucket: Sequence[TweetRecord], window_seconds: int):
    t0 = records[0].date_numeric
    k = (bucket[0].date_numeric - t0) // window_seconds
    return k, t0 + k * window_seconds, t0 + (k + 1) * window_seconds


def haversine_km(a, b) -> float:
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * 6371.0088 * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(latlon: np.ndarray) -> np.ndarray:
    lat = np.radians(latlon[:, 0])
    lon = np.radians(latlon[:, 1])
    dlat = lat[:, None] - lat[None, :]
    dlon = lon[:, None] - lon[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlon / 2) ** 2
    return 2 * 6371.0088 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _location_key(rec: TweetRecord):
    if rec.geolocation:
        return ("text", rec.geolocation.strip().lower())
    if rec.bounding_box is not None:
        lat, lon = bbox_centroid(rec.bounding_box)
        return ("coord", round(lat, 2), round(lon, 2))
    return None


def _attr_vector(kind: NodeKind, sem_dim: int, total: int, attr: np.ndarray) -> np.ndarray:
    """Spatial/Temporal node vector: kind one-hot in the first two semantic slots,
    its attribute vector in its own segment, zeros elsewhere."""
    v = np.zeros(total)
    if kind is NodeKind.SPATIAL:
        v[0] = 1.0
        v[sem_dim + TEMPORAL_DIM :] = attr
    else:
        v[min(1, sem_dim - 1)] = 1.0
        v[sem_dim : sem_dim + TEMPORAL_DIM] = attr
    return v


def build_window_graph(
    bucket: Sequence[TweetRecord],
    features: Mapping[tuple[str, str], np.ndarray],
    config: WindowConfig,
    sem_dim: int,
    window_index: int = 0,
    window_start: Optional[int] = None,
    window_end: Optional[int] = None,
) -> WindowGraph:
    if window_start is None:
        window_start = bucket[0].date_numeric if bucket else 0
    if window_end is None:
        window_end = window_start + config.window_seconds

    nodes: list[Node] = []
    rows: list[np.ndarray] = []
    stamps: list[int] = []
    ev_nodes: list[int] = []
    ev_record: list[TweetRecord] = []
    feat_dim = None

    for rec in bucket:
        if not window_start <= rec.date_numeric < window_end:
            raise GraphConsistencyError(f"tweet {rec.tweet_id} outside window")
        for ev in rec.events:
            try:
                x = np.asarray(features[(rec.tweet_id, ev.id)], dtype=float)
            except KeyError:
                raise GraphConsistencyError(
                    f"missing features for tweet {rec.tweet_id!r} event {ev.id!r}"
                ) from None
            feat_dim = feat_dim or x.size
            nid = len(nodes)
            nodes.append(Node(nid, NodeKind.EVENT, rec.tweet_id, ev.id))
            rows.append(x)
            stamps.append(rec.date_numeric)
            ev_nodes.append(nid)
            ev_record.append(rec)

    edges: list[Edge] = []
    if not nodes:
        return WindowGraph(window_index, window_start, window_end, [], [], np.zeros((0, 0)), np.zeros(0, np.int64))

    # attribute nodes, in order of first appearance
    spatial_nodes: dict = {}
    temporal_nodes: dict = {}
    for nid, rec in zip(ev_nodes, ev_record):
        x = rows[nid]
        key = _location_key(rec)
        if key is not None:
            if key not in spatial_nodes:
                sid = len(nodes)
                spatial_nodes[key] = sid
                nodes.append(Node(sid, NodeKind.SPATIAL, rec.tweet_id))
                rows.append(_attr_vector(NodeKind.SPATIAL, sem_dim, feat_dim, x[sem_dim + TEMPORAL_DIM :]))
                stamps.append(rec.date_numeric)
            edges.append(Edge(spatial_nodes[key], nid, EdgeKind.SPATIAL))
        tkey = rec.date_numeric
        if tkey not in temporal_nodes:
            tid = len(nodes)
            temporal_nodes[tkey] = tid
            nodes.append(Node(tid, NodeKind.TEMPORAL, rec.tweet_id))
            rows.append(_attr_vector(NodeKind.TEMPORAL, sem_dim, feat_dim, x[sem_dim : sem_dim + TEMPORAL_DIM]))
            stamps.append(rec.date_numeric)
        edges.append(Edge(temporal_nodes[tkey], nid, EdgeKind.TEMPORAL))

    ev = [int(i) for i in ev_nodes]
    tweet_of = [rec.tweet_id for rec in ev_record]
    n_ev = len(ev)

    # contextual: same-tweet pairs
    for i in range(n_ev):
        for j in range(i + 1, n_ev):
            if tweet_of[i] == tweet_of[j]:
                edges.append(Edge(ev[i], ev[j], EdgeKind.CONTEXTUAL))

    x_ev = np.stack([rows[i] for i in ev])
    same_tweet = np.array(tweet_of)[:, None] == np.array(tweet_of)[None, :]

    # contextual: cross-tweet semantic similarity, top-k per event
    if config.semantic_k > 0 and n_ev > 1:
        sem = x_ev[:, :sem_dim]
        norms = np.linalg.norm(sem, axis=1)
        norms[norms == 0] = 1.0
        unit = sem / norms[:, None]
        sim = unit @ unit.T
        ok = (sim >= config.semantic_threshold) & ~same_tweet
        pairs = _topk_undirected(np.where(ok, sim, -np.inf), config.semantic_k, largest=True)
        edges += [Edge(ev[i], ev[j], EdgeKind.CONTEXTUAL) for i, j in pairs]

    # spatial: cross-tweet proximity, top-k nearest per event
    if config.spatial_k > 0 and n_ev > 1:
        has = np.array([r.bounding_box is not None for r in ev_record])
        cent = np.array([bbox_centroid(r.bounding_box) if r.bounding_box else (0.0, 0.0) for r in ev_record])
        dist = haversine_matrix(cent)
        dist[~(has[:, None] & has[None, :])] = np.inf
        geo = np.array([r.geolocation.strip().lower() if r.geolocation else "" for r in ev_record])
        text_match = (~has[:, None]) & (~has[None, :]) & (geo[:, None] == geo[None, :]) & (geo[:, None] != "")
        dist[text_match] = 0.0
        dist[(dist > config.spatial_km) | same_tweet] = np.inf
        pairs = _topk_undirected(np.where(np.isfinite(dist), -dist, -np.inf), config.spatial_k, largest=True)
        edges += [Edge(ev[i], ev[j], EdgeKind.SPATIAL) for i, j in pairs]

    # temporal: each event to its k nearest strictly-later events
    if config.temporal_k > 0:
        t = np.array([r.date_numeric for r in ev_record])
        order = np.argsort(t, kind="stable")
        for i in range(n_ev):
            later = order[t[order] > t[i]]
            for j in later[: config.temporal_k]:
                edges.append(Edge(ev[i], ev[int(j)], EdgeKind.TEMPORAL))

    g = WindowGraph(
        window_index,
        window_start,
        window_end,
        nodes,
        edges,
        np.stack(rows),
        np.array(stamps, dtype=np.int64),
    )
    return g


def _topk_undirected(score: np.ndarray, k: int, largest: bool = True) -> list[tuple[int, int]]:
    """Union over rows of each row's top-k finite entries, as sorted (i<j) pairs."""
    n = score.shape[0]
    chosen = set()
    for i in range(n):
        row = score[i]
        cand = np.flatnonzero(np.isfinite(row))
        cand = cand[cand != i]
        if cand.size == 0:
            continue
        # ties broken by index for determinism
        order = np.lexsort((cand, -row[cand]))
        for j in cand[order[:k]]:
            chosen.add((min(i, j), max(i, j)))
    return sorted(chosen)


def generate_candidate_pairs(g: WindowGraph, records: Sequence[TweetRecord], cross_tweet: bool = False) -> WindowGraph:
    """Attach ordered event pairs with labels from the records' annotations."""
    idx = g.event_index()
    by_tweet: dict[str, list[int]] = {}
    for n in g.nodes:
        if n.kind is NodeKind.EVENT:
            by_tweet.setdefault(n.tweet_id, []).append(n.node_id)
    positives = set()
    for rec in records:
        for c, e in rec.causal_relation.pairs:
            if (rec.tweet_id, c) not in idx or (rec.tweet_id, e) not in idx:
                raise GraphConsistencyError(
                    f"annotation {c}->{e} of tweet {rec.tweet_id!r} references an event not in the graph"
                )
            positives.add((idx[(rec.tweet_id, c)], idx[(rec.tweet_id, e)]))
    rows, tweets = [], []
    for tid, members in by_tweet.items():
        for a in members:
            for b in members:
                if a != b:
                    rows.append((a, b, int((a, b) in positives)))
                    tweets.append(tid)
    if cross_tweet:
        ev = [n for n in g.nodes if n.kind is NodeKind.EVENT]
        for na in ev:
            for nb in ev:
                if na.tweet_id != nb.tweet_id:
                    rows.append((na.node_id, nb.node_id, 0))
                    tweets.append(na.tweet_id)
    g.pairs = np.array(rows, dtype=np.int64).reshape(-1, 3)
    g.pair_tweets = tweets
    return g


def build_graphs(
    records: Sequence[TweetRecord],
    features: Mapping[tuple[str, str], np.ndarray],
    config: WindowConfig,
    sem_dim: int,
) -> list[WindowGraph]:
    records = sorted(records, key=lambda r: (r.date_numeric, r.tweet_id))
    graphs = []
    for bucket in partition_windows(records, config.window_seconds):
        k, start, end = window_bounds(records, bucket, config.window_seconds)
        g = build_window_graph(bucket, features, config, sem_dim, int(k), int(start), int(end))
        graphs.append(generate_candidate_pairs(g, bucket, config.cross_tweet_pairs))
    return graphs


def graph_stats(g: WindowGraph) -> dict:
    nk = Counter(n.kind.value for n in g.nodes)
    ek = Counter(e.kind.value for e in g.edges)
    pos = int(g.pairs[:, 2].sum()) if len(g.pairs) else 0
    return {
        "nodes": {k.value: nk.get(k.value, 0) for k in NodeKind},
        "edges": {k.value: ek.get(k.value, 0) for k in EdgeKind},
        "positive_pairs": pos,
        "negative_pairs": int(len(g.pairs)) - pos,
    }


def dump_graphs(graphs: Sequence[WindowGraph], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_dict()) + "\n")
