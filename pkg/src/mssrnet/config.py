"""Run configuration. Defaults follow the published setup; ``desk()`` shrinks
everything to sizes a single CPU core trains in minutes."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int = 0
    num_styles: int = 2
    d_model: int = 256
    d_style: int = 256
    d_ff: int = 512
    n_heads: int = 4
    enc_layers: int = 6
    dec_layers: int = 6
    style_layers: int = 6
    dropout: float = 0.1
    max_positions: int = 64
    decode_margin: int = 4
    fixed_style_vector: bool = False
    norm: str = "post"

    def validate(self) -> None:
        for name in ("d_model", "d_style", "d_ff", "n_heads", "enc_layers", "dec_layers", "style_layers",
                     "max_positions"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} must be positive")
        if self.num_styles < 2:
            raise ConfigError("model.num_styles must be >= 2")
        if self.d_model % self.n_heads or self.d_style % self.n_heads:
            raise ConfigError("model dims must be divisible by n_heads")
        if self.norm != "post":
            raise ConfigError("only post-norm layers are implemented")


@dataclass
class TeacherConfig:
    layers: int = 3
    d_ff: int = 512
    n_heads: int = 4
    dropout: float = 0.1
    lr: float = 1e-4
    max_steps: int = 2000
    batch_size: int = 64
    eval_every: int = 100
    valid_fraction: float = 0.1
    seed: int = 0


@dataclass
class CriticConfig:
    style_kind: str = "attention"  # or "mlp"
    style_layers: int = 3
    text_layers: int = 1
    d_ff: int = 512
    n_heads: int = 4
    dropout: float = 0.1

    def validate(self) -> None:
        if self.style_kind not in ("attention", "mlp"):
            raise ConfigError("critic.style_kind must be 'attention' or 'mlp'")


@dataclass
class TrainSchedule:
    iterations: int = 160000
    n_rc: int = 5
    n_dr: int = 1
    n_adr: int = 5
    batch_size: int = 96
    seed: int = 123
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.98
    eps: float = 1e-8
    noise_p: float = 0.1
    checkpoint_every: int = 5000
    validate_every: int = 5000
    grad_clip: float = 0.0

    def validate(self) -> None:
        for name in ("iterations", "n_rc", "n_dr", "n_adr", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"schedule.{name} must be >= 1")


@dataclass
class LossWeights:
    cst: float = 1.0
    teach: float = 1.0
    s_pol: float = 1.0
    t_pol: float = 1.0
    adv: float = 1.0
    gp: float = 10.0

    def validate(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigError(f"weights.{f.name} must be nonnegative")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 123
    paths: Dict[str, str] = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        self.model.validate()
        self.critic.validate()
        self.schedule.validate()
        self.weights.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunConfig":
        sections = {f.name: f for f in fields(cls)}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: Dict[str, Any] = {}
        for name, value in raw.items():
            default = getattr(cls(), name)
            if dataclasses.is_dataclass(default):
                kwargs[name] = _load_section(type(default), value, name)
            else:
                kwargs[name] = value
        return cls(**kwargs).validate()

    @classmethod
    def from_json(cls, path: Path | str) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _load_section(kind, value: Dict[str, Any], name: str):
    allowed = {f.name for f in fields(kind)}
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name}: {sorted(unknown)}")
    return kind(**value)


def desk(vocab_size: int = 0, num_styles: int = 2, seed: int = 123) -> RunConfig:
    """Small preset used for the synthetic-corpus experiments."""
    d, ff, heads = 64, 128, 4
    cfg = RunConfig(
        model=ModelConfig(vocab_size=vocab_size, num_styles=num_styles, d_model=d, d_style=d, d_ff=ff,
                          n_heads=heads, enc_layers=2, dec_layers=2, style_layers=2, max_positions=40),
        teacher=TeacherConfig(layers=2, d_ff=ff, n_heads=heads, lr=1e-3, max_steps=2000, batch_size=64,
                              eval_every=100, seed=seed),
        critic=CriticConfig(style_layers=1, text_layers=1, d_ff=ff, n_heads=heads),
        schedule=TrainSchedule(iterations=1000, batch_size=32, seed=seed, lr=5e-4, checkpoint_every=0,
                               validate_every=0),
        seed=seed,
    )
    return cfg.validate()


def with_overrides(cfg: RunConfig, **sections: Optional[Dict[str, Any]]) -> RunConfig:
    """Copy of ``cfg`` with per-section field overrides."""
    out = RunConfig.from_dict(cfg.to_dict())
    for name, values in sections.items():
        if not values:
            continue
        section = getattr(out, name)
        for k, v in values.items():
            if not hasattr(section, k):
                raise ConfigError(f"unknown key {name}.{k}")
            setattr(section, k, v)
    return out.validate()
