"""Training configuration and its plain-text ``key=value`` form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError


@dataclass
class TrainConfig:
    env: str = "pendulum"
    total_steps: int = 40_000  # environment steps, action repeat included
    batch_size: int = 128
    ema_tau: float = 0.01
    momentum_freq: int = 2
    intrinsic_weight: float = 0.2
    intrinsic_decay: float = 2e-5
    discount: float = 0.99
    lr_contrastive: float = 1e-3
    lr_encoder: float = 1e-3
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    lr_alpha: float = 1e-3
    critic_tau: float = 0.01
    target_update_freq: int = 2
    actor_update_freq: int = 2
    init_alpha: float = 0.1
    warmup_steps: int = 1000
    eval_interval: int = 10_000
    eval_episodes: int = 10
    seed: int = 0
    image_size: int = 76
    crop_size: int = 68
    frame_stack: int = 3
    action_repeat: int = 4
    episode_length: int = 250
    pendulum_damping: float = 0.1
    similarity: str = "bilinear"
    latent_dim: int = 50
    action_feature_dim: int = 50
    model_hidden_dim: int = 50
    hidden_dim: int = 256
    num_filters: int = 32
    replay_capacity: int = 100_000
    checkpoint_interval: int = 0  # environment steps between checkpoints; 0 = only at the end
    dtype: str = "float32"
    log_wall_time: bool = True
    no_contrastive: bool = False
    no_curiosity: bool = False
    no_augment: bool = False

    def validate(self) -> "TrainConfig":
        positive = [
            "batch_size", "momentum_freq", "target_update_freq", "actor_update_freq", "eval_interval",
            "eval_episodes", "image_size", "crop_size", "frame_stack", "action_repeat", "episode_length",
            "latent_dim", "action_feature_dim", "model_hidden_dim", "hidden_dim", "num_filters", "replay_capacity",
        ]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.total_steps < 0 or self.warmup_steps < 0 or self.checkpoint_interval < 0:
            raise ConfigurationError("step counts must be non-negative")
        if not 0.0 <= self.ema_tau <= 1.0 or not 0.0 <= self.critic_tau <= 1.0:
            raise ConfigurationError("EMA coefficients must lie in [0, 1]")
        if self.intrinsic_weight < 0 or self.intrinsic_decay < 0:
            raise ConfigurationError("intrinsic weight and decay must be non-negative")
        if self.crop_size > self.image_size:
            raise ConfigurationError("crop_size cannot exceed image_size")
        if self.similarity not in ("dot", "bilinear"):
            raise ConfigurationError("similarity must be 'dot' or 'bilinear'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")
        if self.init_alpha <= 0:
            raise ConfigurationError("init_alpha must be positive")
        if self.total_steps > self.warmup_steps and self.warmup_steps // self.action_repeat < self.batch_size:
            raise ConfigurationError(
                f"warm-up of {self.warmup_steps} env steps collects fewer than batch_size={self.batch_size} "
                "transitions; raise warmup_steps"
            )
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name}={_format(getattr(self, f.name))}\n" for f in fields(self))

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_text(cls, text: str, base: "TrainConfig | None" = None) -> "TrainConfig":
        values = parse_key_values(text)
        return (base or cls()).replace(**values)

    @classmethod
    def from_file(cls, path, base: "TrainConfig | None" = None) -> "TrainConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), base)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name: str, raw: str):
    kind = _TYPES[name]
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"cannot parse {name}={raw!r} as {kind}") from None


def parse_key_values(text: str) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigurationError(f"line {lineno}: unknown config key {key!r}")
        out[key] = _parse(key, raw)
    return out
