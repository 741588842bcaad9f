"""Run configuration: one YAML/JSON document holding every module's settings."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .features import FeatureConfig
from .graph import WindowConfig
from .model import ModelConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: Optional[int] = None

    def validate(self):
        if len(self.ratios) != 3 or any(r <= 0 for r in self.ratios):
            raise ValueError("split.ratios must be three positive numbers")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("split.ratios must sum to 1")


@dataclass(frozen=True)
class RunConfig:
    dataset: Optional[str] = None
    output_dir: str = "runs"
    seed: int = 0
    split: SplitConfig = field(default_factory=SplitConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    ablation_modes: tuple[str, ...] = ("none", "no_spatial", "no_temporal", "no_both")

    @property
    def split_seed(self) -> int:
        return self.seed if self.split.seed is None else self.split.seed

    def validate(self):
        for section in (self.split, self.features, self.window, self.model, self.synth):
            section.validate()
        from .synth import KNOCKOUT_MODES

        bad = [m for m in self.ablation_modes if m not in KNOCKOUT_MODES]
        if bad:
            raise ValueError(f"unknown ablation mode {bad[0]!r}")

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:10]


_SECTIONS = {
    "split": SplitConfig,
    "features": FeatureConfig,
    "window": WindowConfig,
    "model": ModelConfig,
    "synth": SynthConfig,
}
_TUPLE_FIELDS = {"ratios", "events_per_tweet", "region", "ablation_modes"}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTIONS and cls is RunConfig:
            value = _build(_SECTIONS[key], value or {}, key)
        elif key in _TUPLE_FIELDS and value is not None:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{where}.{key}: expected a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _apply_seed(cfg: RunConfig, raw: dict) -> RunConfig:
    # top-level seed fills section seeds that were not given explicitly
    model = cfg.model
    synth = cfg.synth
    if "seed" not in (raw.get("model") or {}):
        model = dataclasses.replace(model, seed=cfg.seed)
    if "seed" not in (raw.get("synth") or {}):
        synth = dataclasses.replace(synth, seed=cfg.seed)
    return dataclasses.replace(cfg, model=model, synth=synth)


def config_from_dict(raw: dict) -> RunConfig:
    cfg = _build(RunConfig, raw or {}, "config")
    cfg = _apply_seed(cfg, raw or {})
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def set_path(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {dotted}: {p} is not a section")
    node[parts[-1]] = value


def load_config(path=None, overrides=()) -> RunConfig:
    """Read a config file and apply ``key.path=value`` overrides (values parsed as YAML)."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        set_path(raw, key.strip(), yaml.safe_load(value))
    return config_from_dict(raw)
