"""Pipeline configuration shared by the command-line tools."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from .forest import ForestConfig, ForestError
from .integration import IntegrationError
from .vectorize import MODES, PMIV, FeatureConfig, VectorizeError, Vectorizer

DEFAULT_SPLIT = (0.7, 0.1, 0.2)


class ConfigError(ValueError):
    pass


def default_workers() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = PMIV
    partition: tuple = FeatureConfig.partition
    expected_type_kinds: tuple = FeatureConfig.expected_type_kinds
    crypto_substrings: tuple = FeatureConfig.crypto_substrings
    transport_p: float = FeatureConfig.transport_p
    max_paths: int = FeatureConfig.max_paths
    forest: ForestConfig = field(default_factory=ForestConfig)
    workers: Optional[int] = None  # None: one per core
    seed: int = 0
    split: tuple = DEFAULT_SPLIT

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        split = tuple(float(x) for x in self.split)
        if len(split) != 3 or min(split) < 0 or abs(sum(split) - 1.0) > 1e-9 or split[0] <= 0:
            raise ConfigError("split must be three nonnegative fractions summing to 1")
        object.__setattr__(self, "split", split)
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.feature_config()
        except (VectorizeError, IntegrationError) as e:
            raise ConfigError(str(e)) from None

    @property
    def worker_count(self) -> int:
        return self.workers or default_workers()

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.partition, self.expected_type_kinds, self.crypto_substrings,
                             self.transport_p, self.max_paths)

    def forest_config(self) -> ForestConfig:
        return replace(self.forest, seed=self.seed)

    def schema_hash(self) -> str:
        return Vectorizer(self.feature_config()).schema(self.mode).schema_hash

    def to_json(self) -> dict:
        d = asdict(self)
        for key in ("partition", "expected_type_kinds", "crypto_substrings", "split"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = dict(obj)
        for key in ("partition", "expected_type_kinds", "crypto_substrings", "split"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            if "forest" in kw:
                kw["forest"] = ForestConfig.from_dict(kw["forest"])
            return cls(**kw)
        except (ForestError, TypeError) as e:
            raise ConfigError(str(e)) from None


def load_config(path: Optional[str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            obj = json.loads(fh.read().decode("utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return PipelineConfig.from_json(obj)
