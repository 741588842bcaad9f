"""Synthetic disaster-tweet corpora with planted causal structure, and feature knockouts."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np
from scipy.stats import norm

from .features import TEMPORAL_DIM, hash_embed, write_embeddings
from .ingest import BoundingBox, CausalAnnotation, EventMention, TweetRecord, write_dataset

CAUSE_TRIGGERS = ("rain", "storm", "surge", "downpour", "hurricane", "winds", "breach", "overflow")
EFFECT_TRIGGERS = ("flooding", "outage", "collapse", "evacuation", "rescue", "closure", "damage", "shortage")
NEUTRAL_TRIGGERS = ("update", "report", "donation", "shelter", "prayer", "volunteer", "warning", "meeting")
PLACES = ("Houston, TX", "Katy, TX", "Beaumont, TX", "Rockport, TX", "Galveston, TX", "Port Arthur, TX")
CONNECTORS = ("caused", "led to", "and", "then", "with", "after")

KNOCKOUT_MODES = ("none", "no_spatial", "no_temporal", "no_both")

# latent class means sit at +-SIGNAL_SCALE * strength (unit variance)
SIGNAL_SCALE = 2.5


@dataclass(frozen=True)
class SynthConfig:
    n_tweets: int = 2000
    events_per_tweet: tuple[int, int] = (2, 2)
    # None: solved from target_positive_fraction
    causal_prob: Optional[float] = None
    target_positive_fraction: float = 0.25
    spatial_strength: float = 0.9
    temporal_strength: float = 0.9
    semantic_strength: float = 0.6
    link_strength: float = 0.3
    decoy_rate: float = 0.7
    dim: int = 64
    start: str = "2017-08-26T00:00:00+00:00"
    span_days: int = 4
    # tweets are posted inside one daily block; match it to the graph window length
    active_start_hour: int = 12
    active_hours: int = 6
    region: tuple[float, float, float, float] = (25.0, 35.0, -100.0, -85.0)
    geo_rate: float = 0.8
    place_rate: float = 0.5
    seed: int = 0

    def validate(self):
        lo, hi = self.events_per_tweet
        if self.n_tweets < 1:
            raise ValueError("synth.n_tweets must be >= 1")
        if not 1 <= lo <= hi:
            raise ValueError("synth.events_per_tweet must be (min, max) with 1 <= min <= max")
        for name in (
            "spatial_strength",
            "temporal_strength",
            "decoy_rate",
            "geo_rate",
            "place_rate",
            "target_positive_fraction",
        ):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"synth.{name} must lie in [0, 1]")
        if self.causal_prob is not None and not 0.0 <= self.causal_prob <= 1.0:
            raise ValueError("synth.causal_prob must lie in [0, 1]")
        if self.semantic_strength < 0 or self.link_strength < 0:
            raise ValueError("synth.semantic_strength and synth.link_strength must be >= 0")
        if self.dim < 1 or self.span_days < 1:
            raise ValueError("synth.dim and synth.span_days must be >= 1")
        if not (0 <= self.active_start_hour < 24 and 1 <= self.active_hours <= 24 - self.active_start_hour):
            raise ValueError("synth.active_start_hour/active_hours must describe a block inside one day")
        lat0, lat1, lon0, lon1 = self.region
        if not (-90 <= lat0 < lat1 <= 90 and -180 <= lon0 < lon1 <= 180):
            raise ValueError("synth.region must be (lat_min, lat_max, lon_min, lon_max) within bounds")
        if lo < 2 and hi < 2:
            raise ValueError("synth.events_per_tweet must allow at least two events")
        p = self.resolved_causal_prob()
        if not 0.0 <= p <= 1.0:
            raise ValueError(
                f"target_positive_fraction {self.target_positive_fraction} unreachable "
                f"with events_per_tweet {self.events_per_tweet} (needs causal_prob {p:.3f})"
            )

    def resolved_causal_prob(self) -> float:
        """Tweet-level causal probability giving the target positive ordered-pair fraction.

        A causal tweet carries one positive pair; a tweet with n events has n(n-1) ordered pairs.
        """
        if self.causal_prob is not None:
            return self.causal_prob
        lo, hi = self.events_per_tweet
        ns = np.arange(lo, hi + 1)
        ok = ns >= 2
        # tweets with fewer than two events cannot be causal
        mean_pairs = np.mean(ns * (ns - 1))
        frac_eligible = ok.mean()
        return float(self.target_positive_fraction * mean_pairs / frac_eligible)

    def start_ts(self) -> int:
        return int(datetime.fromisoformat(self.start).astimezone(timezone.utc).timestamp())


@dataclass
class SynthCorpus:
    records: list[TweetRecord]
    embeddings: dict  # (tweet_id, event_id) -> (v_trigger, v_cls)
    planted: list[tuple[str, str, str]] = field(default_factory=list)  # (tweet_id, cause, effect)
    config: Optional[SynthConfig] = None

    def write(self, dataset_path, embeddings_path) -> None:
        write_dataset(self.records, dataset_path)
        write_embeddings(((t, e, vt, vc) for (t, e), (vt, vc) in self.embeddings.items()), embeddings_path)


def _unit(rng, dim):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _date_str(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%a %b %d %H:%M:%S +0000 %Y")


def generate(config: SynthConfig) -> SynthCorpus:
    """Draw a corpus whose causal tweets differ from non-causal ones in time, place and semantics.

    Each tweet gets two latent evidence scores, one temporal and one spatial,
    centred at +mu for causal tweets and -mu otherwise (mu proportional to the
    configured strength, so strength 0 makes them label-independent). Decoy
    tweets carry a cause and an effect trigger but no causal link; each one
    looks causal in a single randomly chosen channel, so telling decoys apart
    needs both channels.

    The temporal score sets how late in the daily posting block a tweet
    appears. Every tweet of a day lands in the same block, so when the block
    matches the graph window the window a tweet falls into says nothing about
    its label; only its own timestamp does. The spatial score sets the
    latitude offset inside the region and the rate of location mentions.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    D = config.dim
    u_cause = _unit(rng, D)
    u_effect = _unit(rng, D)
    p_causal = config.resolved_causal_prob()
    mu_t = SIGNAL_SCALE * config.temporal_strength
    mu_s = SIGNAL_SCALE * config.spatial_strength
    lat0, lat1, lon0, lon1 = config.region
    t_start = config.start_ts()
    lo, hi = config.events_per_tweet
    block = config.active_hours * 3600

    records, embeddings, planted = [], {}, []
    drafts = []
    for i in range(config.n_tweets):
        n_ev = int(rng.integers(lo, hi + 1))
        causal = n_ev >= 2 and rng.random() < p_causal
        decoy = (not causal) and n_ev >= 2 and rng.random() < config.decoy_rate
        roles = ["neutral"] * n_ev
        if causal or decoy:
            a, b = rng.choice(n_ev, size=2, replace=False)
            roles[a], roles[b] = "cause", "effect"
        else:
            for j in range(n_ev):
                roles[j] = ("cause", "effect", "neutral")[int(rng.integers(3))]
            if n_ev >= 2 and "cause" in roles and "effect" in roles:
                # keep non-decoy tweets free of a cause/effect combination
                roles = [r if r != "effect" else "neutral" for r in roles]

        sign_t = sign_s = 1.0 if causal else -1.0
        if decoy:
            # a decoy looks causal in exactly one of the two channels
            if rng.random() < 0.5:
                sign_t = 1.0
            else:
                sign_s = 1.0
        z_t = rng.normal(sign_t * mu_t, 1.0)
        z_s = rng.normal(sign_s * mu_s, 1.0)
        day = int(rng.integers(config.span_days))
        frac = float(np.clip(0.5 + z_t / 6.0, 0.0, 1.0 - 1e-9))
        ts = t_start + day * 86400 + config.active_start_hour * 3600 + int(frac * block)

        bbox = None
        if rng.random() < config.geo_rate:
            lat = lat0 + (lat1 - lat0) * norm.cdf(z_s)
            lon = lon0 + (lon1 - lon0) * rng.random()
            lat = float(np.clip(round(lat, 4), lat0 + 0.05, lat1 - 0.05))
            lon = float(np.clip(round(lon, 4), lon0 + 0.05, lon1 - 0.05))
            d = 0.05
            bbox = BoundingBox(
                ((lat - d, lon - d), (lat - d, lon + d), (lat + d, lon + d), (lat + d, lon - d))
            )
        mentions = int(rng.poisson(3.0 * norm.cdf(z_s)))
        place = PLACES[int(rng.integers(len(PLACES)))] if rng.random() < config.place_rate else None

        triggers = []
        for r in roles:
            vocab = {"cause": CAUSE_TRIGGERS, "effect": EFFECT_TRIGGERS, "neutral": NEUTRAL_TRIGGERS}[r]
            triggers.append(vocab[int(rng.integers(len(vocab)))])
        drafts.append((i, ts, roles, triggers, causal, bbox, mentions, place))

    # chronological ids keep the file sorted like a collected stream
    drafts.sort(key=lambda d: (d[1], d[0]))
    for rank, (i, ts, roles, triggers, causal, bbox, mentions, place) in enumerate(drafts):
        tweet_id = f"9{rank:08d}"
        tokens = []
        mask = []
        ev_tokens = []
        for j, trig in enumerate(triggers):
            if j:
                conn = CONNECTORS[int(rng.integers(len(CONNECTORS)))].split()
                tokens += conn
                mask += ["O"] * len(conn)
            ev_tokens.append(len(tokens))
            tokens.append(trig)
            mask.append("O")
        if place:
            tokens += ["in"] + place.replace(",", "").split()
            mask += ["O"] * (1 + len(place.replace(",", "").split()))
        events = []
        for j, trig in enumerate(triggers):
            args = {"location": place} if place else {}
            events.append(EventMention(f"evt_{j + 1:03d}", trig, args))
        pairs = ()
        if causal:
            c = roles.index("cause")
            e = roles.index("effect")
            pairs = ((events[c].id, events[e].id),)
            mask[ev_tokens[c]] = "I-C"
            mask[ev_tokens[e]] = "I-E"
            planted.append((tweet_id, events[c].id, events[e].id))
        text = " ".join(tokens)
        rec = TweetRecord(
            tweet_id=tweet_id,
            tweet_text=text,
            tokens=tuple(tokens),
            events=tuple(events),
            causal_relation=CausalAnnotation(bool(pairs), pairs),
            mask=tuple(mask),
            date_str=_date_str(ts),
            date_numeric=ts,
            geolocation=place,
            bounding_box=bbox,
            location_mentions=mentions,
        )
        records.append(rec)

        # semantic embeddings: hashed text plus a role direction; causal pairs share a latent
        shared = _unit(rng, D) if causal else None
        for j, ev in enumerate(events):
            vt, vc = hash_embed(ev.trigger, text, D, config.seed)
            role = roles[j]
            if role == "cause":
                vt = vt + config.semantic_strength * u_cause
            elif role == "effect":
                vt = vt + config.semantic_strength * u_effect
            in_pair = causal and role in ("cause", "effect")
            latent = shared if in_pair else _unit(rng, D)
            vt = vt + config.link_strength * latent
            embeddings[(tweet_id, ev.id)] = (vt, vc)

    return SynthCorpus(records, embeddings, planted, config)


def knockout(x: np.ndarray, mode: str, sem_dim: int) -> np.ndarray:
    """Copy of node features with the temporal and/or spatial segments zeroed."""
    if mode not in KNOCKOUT_MODES:
        raise ValueError(f"unknown knockout mode {mode!r}; expected one of {KNOCKOUT_MODES}")
    out = np.array(x, dtype=float, copy=True)
    if mode in ("no_temporal", "no_both"):
        out[..., sem_dim : sem_dim + TEMPORAL_DIM] = 0.0
    if mode in ("no_spatial", "no_both"):
        out[..., sem_dim + TEMPORAL_DIM :] = 0.0
    return out


def config_dict(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["events_per_tweet"] = list(cfg.events_per_tweet)
    d["region"] = list(cfg.region)
    return d
