"""Per-event node features: semantic mix, calendar encoding, location signals, fusion."""
from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .ingest import TweetRecord, bbox_centroid

TEMPORAL_DIM = 4
SPATIAL_DIM = 6
CONTEXT_DIM = TEMPORAL_DIM + SPATIAL_DIM


@dataclass(frozen=True)
class FeatureConfig:
    dim: int = 64
    alpha: float = 0.7
    mention_cap: int = 5
    source: str = "hash"  # "hash" or "file"
    embeddings_path: Optional[str] = None
    hash_seed: int = 0

    def validate(self):
        if self.dim < 1:
            raise ValueError("features.dim must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("features.alpha must lie in [0, 1]")
        if self.mention_cap < 1:
            raise ValueError("features.mention_cap must be >= 1")
        if self.source not in ("hash", "file"):
            raise ValueError("features.source must be 'hash' or 'file'")
        if self.source == "file" and not self.embeddings_path:
            raise ValueError("features.embeddings_path is required when source is 'file'")


def combine_trigger_cls(v_trigger, v_cls, alpha: float = 0.7) -> np.ndarray:
    v_trigger = np.asarray(v_trigger, dtype=float)
    v_cls = np.asarray(v_cls, dtype=float)
    if v_trigger.shape != v_cls.shape:
        raise ValueError(f"shape mismatch: {v_trigger.shape} vs {v_cls.shape}")
    return alpha * v_trigger + (1.0 - alpha) * v_cls


def encode_temporal(date_numeric: int) -> np.ndarray:
    """[hour/24, weekday/7, month/12, day/31] in UTC, Monday = 0."""
    t = datetime.fromtimestamp(int(date_numeric), tz=timezone.utc)
    return np.array([t.hour / 24.0, t.weekday() / 7.0, t.month / 12.0, t.day / 31.0])


def encode_spatial(
    record: TweetRecord,
    location_mentions: Optional[int] = None,
    cap: int = 5,
    l2: float = 0.0,
) -> np.ndarray:
    """[has_coords, has_text_location, mention_count/cap, l2, lat/90, lon/180].

    ``l2`` is a reserved slot, 0 unless a caller supplies a value.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if location_mentions is None:
        location_mentions = record.location_mentions or 0
    g1 = 1.0 if record.bounding_box is not None else 0.0
    g2 = 1.0 if (record.geolocation or location_mentions > 0) else 0.0
    l1 = min(location_mentions, cap) / cap
    if record.bounding_box is not None:
        lat, lon = bbox_centroid(record.bounding_box)
        phi, lam = lat / 90.0, lon / 180.0
    else:
        phi = lam = 0.0
    return np.array([g1, g2, l1, float(l2), phi, lam])


def fuse_features(sem, tmp, spa) -> np.ndarray:
    return np.concatenate([np.asarray(sem, float), np.asarray(tmp, float), np.asarray(spa, float)])


def split_segments(x: np.ndarray, dim: int):
    """Inverse of ``fuse_features`` along the last axis."""
    return x[..., :dim], x[..., dim : dim + TEMPORAL_DIM], x[..., dim + TEMPORAL_DIM :]


def _ngrams(text: str, n_max: int = 3):
    s = f"<{text.lower()}>"
    for n in range(1, n_max + 1):
        for i in range(len(s) - n + 1):
            yield s[i : i + n]


def _hash_vector(text: str, dim: int, seed: int, salt: bytes) -> np.ndarray:
    return _hash_vector_cached(text, dim, seed, salt).copy()


@lru_cache(maxsize=65536)
def _hash_vector_cached(text: str, dim: int, seed: int, salt: bytes) -> np.ndarray:
    v = np.zeros(dim)
    key = seed.to_bytes(8, "little", signed=True) + salt
    for gram in _ngrams(text):
        h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest()
        x = int.from_bytes(h, "little")
        v[x % dim] += 1.0 if (x >> 63) & 1 else -1.0
    norm = np.linalg.norm(v)
    if norm == 0.0:
        # all n-grams cancelled; fall back to a single hashed coordinate
        h = hashlib.blake2b(text.encode("utf-8"), digest_size=8, key=key + b"!").digest()
        v[int.from_bytes(h, "little") % dim] = 1.0
        return v
    return v / norm


def hash_embed(trigger: str, context: str, dim: int, seed: int = 0):
    """Deterministic unit vectors for a trigger and its tweet context (signed feature hashing)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    return _hash_vector(trigger, dim, seed, b"trg"), _hash_vector(context, dim, seed, b"cls")


class EmbeddingSource:
    """Resolves (tweet_id, event_id) to a (v_trigger, v_cls) pair."""

    def __init__(self, dim: int, table: Optional[Mapping] = None, hash_seed: int = 0):
        self.dim = dim
        self.table = dict(table) if table is not None else None
        self.hash_seed = hash_seed

    @classmethod
    def from_file(cls, path: str | Path, dim: Optional[int] = None) -> "EmbeddingSource":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"embeddings file not found: {path}")
        table = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                vt = np.asarray(obj["v_trigger"], dtype=float)
                vc = np.asarray(obj["v_cls"], dtype=float)
                if dim is None:
                    dim = vt.size
                if vt.shape != (dim,) or vc.shape != (dim,):
                    raise ValueError(f"{path}:{line_no}: expected vectors of dimension {dim}")
                if not (np.all(np.isfinite(vt)) and np.all(np.isfinite(vc))):
                    raise ValueError(f"{path}:{line_no}: non-finite embedding entries")
                table[(str(obj["tweet_id"]), str(obj["event_id"]))] = (vt, vc)
        return cls(dim or 1, table)

    @classmethod
    def from_config(cls, cfg: FeatureConfig) -> "EmbeddingSource":
        if cfg.source == "file":
            src = cls.from_file(cfg.embeddings_path, cfg.dim)
            return src
        return cls(cfg.dim, hash_seed=cfg.hash_seed)

    def lookup(self, record: TweetRecord, event_id: str):
        if self.table is not None:
            try:
                return self.table[(record.tweet_id, event_id)]
            except KeyError:
                raise KeyError(
                    f"no embedding for tweet {record.tweet_id!r} event {event_id!r}"
                ) from None
        ev = record.event(event_id)
        return hash_embed(ev.trigger, record.tweet_text, self.dim, self.hash_seed)


def write_embeddings(rows, path: str | Path) -> None:
    """rows: iterable of (tweet_id, event_id, v_trigger, v_cls)."""
    with open(path, "w", encoding="utf-8") as fh:
        for tid, eid, vt, vc in rows:
            fh.write(
                json.dumps(
                    {
                        "tweet_id": tid,
                        "event_id": eid,
                        "v_trigger": [float(x) for x in vt],
                        "v_cls": [float(x) for x in vc],
                    }
                )
                + "\n"
            )


def record_features(
    record: TweetRecord, source: EmbeddingSource, cfg: FeatureConfig
) -> dict[str, np.ndarray]:
    """Fused feature vector for every event of ``record``, keyed by event id."""
    tmp = encode_temporal(record.date_numeric)
    spa = encode_spatial(record, cap=cfg.mention_cap)
    out = {}
    for ev in record.events:
        vt, vc = source.lookup(record, ev.id)
        out[ev.id] = fuse_features(combine_trigger_cls(vt, vc, cfg.alpha), tmp, spa)
    return out


def dataset_features(
    records: Sequence[TweetRecord], source: EmbeddingSource, cfg: FeatureConfig
) -> dict[tuple[str, str], np.ndarray]:
    out = {}
    for rec in records:
        for eid, x in record_features(rec, source, cfg).items():
            out[(rec.tweet_id, eid)] = x
    return out
