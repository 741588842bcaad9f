"""Parsing, validation and splitting of annotated tweet datasets (JSON Lines)."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

MASK_TAGS = frozenset({"O", "I-C", "I-E"})
REQUIRED_FIELDS = (
    "tweet_id",
    "tweet_text",
    "tokens",
    "events",
    "causal_relation",
    "mask",
    "date_str",
    "date_numeric",
)


class IngestError(ValueError):
    """Base class for dataset errors."""


class DatasetParseError(IngestError):
    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + message)


class DatasetValidationError(IngestError):
    def __init__(self, field_name: str, message: str, line_no: Optional[int] = None):
        self.field = field_name
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{prefix}{field_name}: {message}")


class BoundingBoxFormatError(IngestError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    corners: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.corners) != 4:
            raise BoundingBoxFormatError(f"expected 4 corners, got {len(self.corners)}")
        for lat, lon in self.corners:
            if not -90.0 <= lat <= 90.0:
                raise BoundingBoxFormatError(f"latitude {lat} out of range [-90, 90]")
            if not -180.0 <= lon <= 180.0:
                raise BoundingBoxFormatError(f"longitude {lon} out of range [-180, 180]")

    def to_string(self) -> str:
        return ",".join(f"({lat!r},{lon!r})" for lat, lon in self.corners)


@dataclass(frozen=True)
class EventMention:
    id: str
    trigger: str
    arguments: dict = field(default_factory=dict, hash=False, compare=True)


@dataclass(frozen=True)
class CausalAnnotation:
    relation: bool
    pairs: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class TweetRecord:
    tweet_id: str
    tweet_text: str
    tokens: tuple[str, ...]
    events: tuple[EventMention, ...]
    causal_relation: CausalAnnotation
    mask: tuple[str, ...]
    date_str: str
    date_numeric: int
    geolocation: Optional[str] = None
    bounding_box: Optional[BoundingBox] = None
    # not part of the published schema; optional count used for the l1 location signal
    location_mentions: Optional[int] = None

    def event(self, event_id: str) -> EventMention:
        for ev in self.events:
            if ev.id == event_id:
                return ev
        raise KeyError(event_id)

    def to_dict(self) -> dict:
        out = {
            "tweet_text": self.tweet_text,
            "tokens": list(self.tokens),
            "events": [
                {"id": e.id, "trigger": e.trigger, "arguments": dict(e.arguments)}
                for e in self.events
            ],
            "causal_relation": {
                "relation": self.causal_relation.relation,
                "pairs": [{"CAUSE": c, "EFFECT": e} for c, e in self.causal_relation.pairs],
            },
            "mask": list(self.mask),
            "tweet_id": self.tweet_id,
            "date_str": self.date_str,
            "date_numeric": self.date_numeric,
            "geolocation": self.geolocation if self.geolocation is not None else "",
            "bounding_box": self.bounding_box.to_string() if self.bounding_box else "",
        }
        if self.location_mentions is not None:
            out["location_mentions"] = self.location_mentions
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


_FLOAT = r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*"
_CORNER_RE = re.compile(r"\(" + _FLOAT + "," + _FLOAT + r"\)")


def parse_bounding_box(s: str) -> BoundingBox:
    """Parse ``"(lat1,lon1),(lat2,lon2),(lat3,lon3),(lat4,lon4)"``."""
    s = s.strip()
    corners = []
    pos = 0
    while pos < len(s):
        m = _CORNER_RE.match(s, pos)
        if m is None:
            raise BoundingBoxFormatError(f"malformed bounding box near offset {pos}: {s!r}")
        corners.append((float(m.group(1)), float(m.group(2))))
        pos = m.end()
        while pos < len(s) and s[pos] in " ,":
            pos += 1
    return BoundingBox(tuple(corners))


def bbox_centroid(b: BoundingBox) -> tuple[float, float]:
    lats = [c[0] for c in b.corners]
    lons = [c[1] for c in b.corners]
    return sum(lats) / 4.0, sum(lons) / 4.0


def _require(obj: dict, name: str, kind, line_no):
    if name not in obj:
        raise DatasetValidationError(name, "missing required field", line_no)
    value = obj[name]
    if kind is not None and not isinstance(value, kind):
        raise DatasetValidationError(name, f"expected {getattr(kind, '__name__', kind)}", line_no)
    return value


def _parse_date_numeric(value, line_no) -> int:
    # the published schema shows the timestamp quoted; accept both forms
    if isinstance(value, bool):
        raise DatasetValidationError("date_numeric", "expected Unix seconds", line_no)
    if isinstance(value, int):
        ts = value
    elif isinstance(value, float) and value.is_integer():
        ts = int(value)
    elif isinstance(value, str) and re.fullmatch(r"\s*\d+\s*", value):
        ts = int(value)
    else:
        raise DatasetValidationError("date_numeric", f"not a Unix timestamp: {value!r}", line_no)
    if ts <= 0:
        raise DatasetValidationError("date_numeric", "must be > 0", line_no)
    return ts


def record_from_dict(obj: dict, line_no: Optional[int] = None) -> TweetRecord:
    if not isinstance(obj, dict):
        raise DatasetValidationError("<record>", "expected a JSON object", line_no)
    tweet_id = _require(obj, "tweet_id", (str, int), line_no)
    tweet_text = _require(obj, "tweet_text", str, line_no)
    tokens = _require(obj, "tokens", list, line_no)
    if not all(isinstance(t, str) for t in tokens):
        raise DatasetValidationError("tokens", "all tokens must be strings", line_no)
    mask = _require(obj, "mask", list, line_no)
    if len(mask) != len(tokens):
        raise DatasetValidationError(
            "mask", f"length {len(mask)} != tokens length {len(tokens)}", line_no
        )
    bad = [m for m in mask if m not in MASK_TAGS]
    if bad:
        raise DatasetValidationError("mask", f"unknown role tag {bad[0]!r}", line_no)

    events = []
    seen = set()
    for i, ev in enumerate(_require(obj, "events", list, line_no)):
        if not isinstance(ev, dict):
            raise DatasetValidationError(f"events[{i}]", "expected an object", line_no)
        eid = ev.get("id")
        trig = ev.get("trigger")
        if not isinstance(eid, str) or not eid:
            raise DatasetValidationError(f"events[{i}].id", "missing or empty", line_no)
        if eid in seen:
            raise DatasetValidationError(f"events[{i}].id", f"duplicate id {eid!r}", line_no)
        if not isinstance(trig, str) or not trig:
            raise DatasetValidationError(f"events[{i}].trigger", "missing or empty", line_no)
        args = ev.get("arguments") or {}
        if not isinstance(args, dict):
            raise DatasetValidationError(f"events[{i}].arguments", "expected an object", line_no)
        seen.add(eid)
        events.append(EventMention(eid, trig, {str(k): str(v) for k, v in args.items()}))

    rel = _require(obj, "causal_relation", dict, line_no)
    raw_pairs = rel.get("pairs") or []
    if not isinstance(raw_pairs, list):
        raise DatasetValidationError("causal_relation.pairs", "expected a list", line_no)
    pairs = []
    for i, p in enumerate(raw_pairs):
        if not isinstance(p, dict) or "CAUSE" not in p or "EFFECT" not in p:
            raise DatasetValidationError(
                f"causal_relation.pairs[{i}]", "expected {CAUSE, EFFECT}", line_no
            )
        c, e = p["CAUSE"], p["EFFECT"]
        for role, eid in (("CAUSE", c), ("EFFECT", e)):
            if eid not in seen:
                raise DatasetValidationError(
                    f"causal_relation.pairs[{i}].{role}", f"unknown event id {eid!r}", line_no
                )
        if c == e:
            raise DatasetValidationError(
                f"causal_relation.pairs[{i}]", "cause and effect must differ", line_no
            )
        pairs.append((c, e))
    relation = rel.get("relation")
    if not isinstance(relation, bool):
        raise DatasetValidationError("causal_relation.relation", "expected a boolean", line_no)
    if relation != bool(pairs):
        raise DatasetValidationError(
            "causal_relation.relation", "must be true iff pairs is non-empty", line_no
        )

    date_str = _require(obj, "date_str", str, line_no)
    date_numeric = _parse_date_numeric(_require(obj, "date_numeric", None, line_no), line_no)

    geo = obj.get("geolocation")
    if geo is not None and not isinstance(geo, str):
        raise DatasetValidationError("geolocation", "expected a string", line_no)
    geo = geo.strip() if geo else None
    bbox_raw = obj.get("bounding_box")
    bbox = None
    if bbox_raw:
        if not isinstance(bbox_raw, str):
            raise DatasetValidationError("bounding_box", "expected a string", line_no)
        try:
            bbox = parse_bounding_box(bbox_raw)
        except BoundingBoxFormatError as exc:
            raise DatasetValidationError("bounding_box", str(exc), line_no) from None

    mentions = obj.get("location_mentions")
    if mentions is not None and (
        isinstance(mentions, bool) or not isinstance(mentions, int) or mentions < 0
    ):
        raise DatasetValidationError("location_mentions", "expected a non-negative integer", line_no)

    return TweetRecord(
        tweet_id=str(tweet_id),
        tweet_text=tweet_text,
        tokens=tuple(tokens),
        events=tuple(events),
        causal_relation=CausalAnnotation(relation, tuple(pairs)),
        mask=tuple(mask),
        date_str=date_str,
        date_numeric=date_numeric,
        geolocation=geo or None,
        bounding_box=bbox,
        location_mentions=mentions,
    )


def parse_tweet(line: str, line_no: Optional[int] = None) -> TweetRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"malformed JSON: {exc.msg}", line_no) from None
    return record_from_dict(obj, line_no)


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if line.strip():
                yield i, line


@dataclass
class ValidationReport:
    records: list[TweetRecord]
    errors: list[IngestError]

    @property
    def ok(self) -> bool:
        return not self.errors

    def render(self, max_errors: int = 10) -> str:
        lines = [f"records: {len(self.records)}", f"errors: {len(self.errors)}"]
        lines += [f"  {e}" for e in self.errors[:max_errors]]
        return "\n".join(lines)


def validate_file(path: str | Path) -> ValidationReport:
    records, errors = [], []
    ids = set()
    for line_no, line in iter_jsonl(path):
        try:
            rec = parse_tweet(line, line_no)
        except IngestError as exc:
            errors.append(exc)
            continue
        if rec.tweet_id in ids:
            errors.append(DatasetValidationError("tweet_id", f"duplicate {rec.tweet_id!r}", line_no))
            continue
        ids.add(rec.tweet_id)
        records.append(rec)
    return ValidationReport(records, errors)


def load_dataset(path: str | Path) -> list[TweetRecord]:
    """Load a dataset, raising on the first invalid line."""
    report = validate_file(path)
    if report.errors:
        raise report.errors[0]
    return report.records


def write_dataset(records: Iterable[TweetRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


@dataclass
class DatasetSplit:
    train: list[TweetRecord]
    validation: list[TweetRecord]
    test: list[TweetRecord]

    def partition_of(self) -> dict[str, str]:
        out = {}
        for name in ("train", "validation", "test"):
            for r in getattr(self, name):
                out[r.tweet_id] = name
        return out


def split_sizes(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` items to the given ratios."""
    raw = [n * r for r in ratios]
    sizes = [int(np.floor(x)) for x in raw]
    leftover = n - sum(sizes)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def split_dataset(
    records: Sequence[TweetRecord], ratios=(0.8, 0.1, 0.1), seed: int = 0
) -> DatasetSplit:
    """Seeded record-level shuffle, then chronological order inside each partition."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n = len(records)
    perm = np.random.default_rng(seed).permutation(n)
    n_tr, n_va, _ = split_sizes(n, ratios)
    chunks = (perm[:n_tr], perm[n_tr : n_tr + n_va], perm[n_tr + n_va :])

    def chrono(idx):
        return sorted((records[i] for i in idx), key=lambda r: (r.date_numeric, r.tweet_id))

    return DatasetSplit(*(chrono(c) for c in chunks))
