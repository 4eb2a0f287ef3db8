"""Run configuration shared by the command-line stages.

A JSON config file has up to four top-level keys, all optional::

    {
      "seed": 0,
      "synth": {SynthConfig fields},
      "train": {TrainConfig fields, with nested "loss" and "model" objects},
      "filling": {"threshold": 0.1, "depth_factor": null}
    }

Unknown keys are rejected so that typos do not silently fall back to
defaults.  Command-line flags override values from the file.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .filling import OLD_THRESHOLD
from .synthgen import SynthConfig
from .trainer import TrainConfig

SEED_ENV = "WOUNDFILL_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class FillingConfig:
    threshold: float = OLD_THRESHOLD  # mm, used when depth_factor is None
    depth_factor: float | None = None  # threshold = factor * crater depth per mesh

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.depth_factor is not None and self.depth_factor < 0:
            raise ValueError("depth_factor must be >= 0")


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    filling: FillingConfig = field(default_factory=FillingConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, synth=replace(self.synth, seed=seed),
                       train=replace(self.train, seed=seed))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "synth": self.synth.to_dict(),
            "train": self.train.to_dict(),
            "filling": asdict(self.filling),
        }


def _strict(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown {where} keys: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where} config: {exc}") from exc


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def load_run_config(path=None) -> RunConfig:
    """Defaults, then the JSON file at ``path`` if given."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
    extra = set(data) - {"seed", "synth", "train", "filling"}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    seed = int(data.get("seed", default_seed()))
    synth = _strict(SynthConfig, {"seed": seed, **data.get("synth", {})}, "synth")
    train_data = {"seed": seed, **data.get("train", {})}
    if isinstance(train_data.get("model"), dict):
        from .tsgcnet import ModelConfig

        train_data["model"] = _strict(ModelConfig, train_data["model"], "train.model")
    if isinstance(train_data.get("loss"), dict):
        from .losses import LossConfig

        train_data["loss"] = _strict(LossConfig, train_data["loss"], "train.loss")
    train = _strict(TrainConfig, train_data, "train")
    filling = _strict(FillingConfig, data.get("filling", {}), "filling")
    return RunConfig(seed, synth, train, filling)
