"""Run configuration: one structured file mirroring every module's knobs.

JSON on disk; unknown keys are rejected at every level; the effective config
is echoed into each output directory so a run can be reproduced from its own
artifacts. CLI flags override file values.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .imu_encoder import EncoderConfig, PatchConfig
from .synthetic import SynthConfig
from .video_encoder import VideoEncoderConfig


@dataclass(frozen=True)
class AlignTrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01
    proj_dim: int = 64
    proj_hidden: Optional[int] = None
    loss: str = "sigmoid"
    init_temperature: float = 10.0
    init_bias: float = 10.0


@dataclass(frozen=True)
class MaskedTrainConfig:
    mask_ratio: float = 0.40
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01


@dataclass(frozen=True)
class SupervisedTrainConfig:
    epochs: int = 25
    batch_size: int = 32
    encoder_lr: float = 1e-4
    head_lr: float = 1e-3
    weight_decay: float = 0.01


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 25
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 25
    batch_size: int = 32
    encoder_lr: float = 1e-6
    head_lr: float = 1e-3
    weight_decay: float = 0.01


@dataclass(frozen=True)
class ZeroShotProtocol:
    repeats: int = 5
    frac: float = 0.80
    prototypes_per_class: int = 5


@dataclass(frozen=True)
class FewShotProtocol:
    label_counts: tuple = (10, 20, 50, 100)
    repeats: int = 5
    heldout_per_class: int = 20


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    deterministic: bool = True
    synth: SynthConfig = field(default_factory=SynthConfig)
    patch: PatchConfig = field(default_factory=PatchConfig)
    imu_encoder: EncoderConfig = field(default_factory=EncoderConfig)
    video_encoder: VideoEncoderConfig = field(default_factory=VideoEncoderConfig)
    align: AlignTrainConfig = field(default_factory=AlignTrainConfig)
    masked: MaskedTrainConfig = field(default_factory=MaskedTrainConfig)
    supervised: SupervisedTrainConfig = field(default_factory=SupervisedTrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    zeroshot: ZeroShotProtocol = field(default_factory=ZeroShotProtocol)
    fewshot: FewShotProtocol = field(default_factory=FewShotProtocol)


_TUPLE_FIELDS = {"tubelet", "label_counts", "ood_amp_range"}


def _build_dataclass(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {path!r} must be an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys under {path!r}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        nested = f.default_factory is not dataclasses.MISSING and is_dataclass(f.default_factory())
        if nested:
            kwargs[name] = _build_dataclass(type(f.default_factory()), value, f"{path}.{name}")
        elif name in _TUPLE_FIELDS and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _build_dataclass(RunConfig, data, path="config")


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"config file {path} is not valid JSON: {err}") from err
    return config_from_dict(data)


def apply_overrides(cfg: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply dotted ``section.key=value`` overrides; values parse as JSON literals."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        keys = dotted.split(".")
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config section {key!r} in override {item!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {keys[-1]!r} in override {item!r}")
        node[keys[-1]] = value
    return config_from_dict(data)


def write_config_echo(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = out_dir / "config.json"
    echo.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    return echo
