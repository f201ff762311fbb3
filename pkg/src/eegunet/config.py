"""JSON run configuration with strict key checking."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import DatasetSpec, PreprocessSpec, SynthSpec
from .inference import PostConfig
from .model import ConfigError, ModelConfig
from .scoring import ToleranceConfig
from .train import TrainConfig


def _build(cls, raw, where: str):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class DataConfig:
    synth: SynthSpec = field(default_factory=SynthSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    n_recordings: int = 1

    @classmethod
    def from_dict(cls, raw) -> "DataConfig":
        raw = dict(raw or {})
        unknown = set(raw) - {"synth", "dataset", "preprocess", "n_recordings"}
        if unknown:
            raise ConfigError(f"data: unknown keys {sorted(unknown)}")
        return cls(
            synth=_build(SynthSpec, raw.get("synth"), "data.synth"),
            dataset=_build(DatasetSpec, raw.get("dataset"), "data.dataset"),
            preprocess=_build(PreprocessSpec, raw.get("preprocess"), "data.preprocess"),
            n_recordings=int(raw.get("n_recordings", 1)),
        )


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    post: PostConfig = field(default_factory=PostConfig)
    score: ToleranceConfig = field(default_factory=ToleranceConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        unknown = set(raw) - {"model", "data", "train", "post", "score", "seed"}
        if unknown:
            raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
        try:
            model = ModelConfig.from_dict(raw.get("model") or {})
        except TypeError as exc:
            raise ConfigError(f"model: {exc}") from exc
        return cls(
            model=model,
            data=DataConfig.from_dict(raw.get("data")),
            train=_build(TrainConfig, raw.get("train"), "train"),
            post=_build(PostConfig, raw.get("post"), "post"),
            score=_build(ToleranceConfig, raw.get("score"), "score"),
            seed=int(raw.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: str | Path | None, overrides: list[str] | None = None) -> "RunConfig":
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        for item in overrides or []:
            apply_override(raw, item)
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        return d


def apply_override(raw: dict, item: str) -> None:
    """Apply ``section.key=value``; the value is parsed as JSON, else kept as a string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, val = item.split("=", 1)
    try:
        value = json.loads(val)
    except json.JSONDecodeError:
        value = val
    node = raw
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-object")
    node[parts[-1]] = value
