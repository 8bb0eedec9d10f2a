"""Configuration dataclasses with JSON round-tripping and dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError

PARAM_GROUPS = ("encoder", "transformer", "head", "decoder", "codebook")
TASKS = ("bfr", "colorization", "inpainting")


@dataclass
class NetConfig:
    input_hw: tuple[int, int] = (64, 64)
    in_channels: int = 3
    out_channels: int = 3
    downsample_stages: int = 3
    residual_blocks: int = 4
    transformer_pairs: int = 4
    heads: int = 4
    d: int = 32
    n_codes: int = 64
    window: int = 5
    base_channels: int = 32
    leaky_slope: float = 0.2
    head_gain: float = 1.0
    codebook_gain: float = 1.0

    def validate(self) -> None:
        h, w = self.input_hw
        f = 2 ** self.downsample_stages
        if h % f or w % f:
            raise ConfigError(f"input_hw {self.input_hw} not divisible by 2^{self.downsample_stages}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if self.d % 2:
            raise ConfigError("d must be even for sinusoidal embeddings")
        for name in ("downsample_stages", "heads", "d", "n_codes", "window", "base_channels",
                     "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.residual_blocks < 0 or self.transformer_pairs < 0:
            raise ConfigError("block counts must be nonnegative")

    @property
    def latent_hw(self) -> tuple[int, int]:
        f = 2 ** self.downsample_stages
        return self.input_hw[0] // f, self.input_hw[1] // f

    @property
    def transformer_blocks(self) -> int:
        return 2 * self.transformer_pairs

    @classmethod
    def paper(cls) -> "NetConfig":
        """Full-size settings (512x512, 5 stages, 12 blocks, 8 heads, d=256, N=1024)."""
        return cls(input_hw=(512, 512), downsample_stages=5, residual_blocks=12,
                   transformer_pairs=4, heads=8, d=256, n_codes=1024)


@dataclass
class LossConfig:
    lambda1: float = -1.0
    lambda2: float = 1.0
    mc_samples: int = 1
    prior_alpha: float = 1.0
    kl_enabled: bool = True
    # None scales the summed KL by 1/(pixel elements), matching the L1 mean
    kl_weight: float | None = None
    feature_loss: str = "none"

    def validate(self) -> None:
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if self.kl_enabled and not self.prior_alpha > 0:
            raise ConfigError("prior_alpha must be > 0 when the KL term is enabled")
        if self.feature_loss not in ("none", "random_conv"):
            raise ConfigError(f"unknown feature_loss {self.feature_loss!r}")


@dataclass
class DegradeConfig:
    blur_sigma: tuple[float, float] = (1.0, 3.0)
    downsample_factors: tuple[int, ...] = (2, 4)
    noise_sigma: tuple[float, float] = (0.0, 0.05)
    quant_levels: tuple[int, ...] = (32, 64, 256)
    seed: int = 0

    def validate(self) -> None:
        for name in ("blur_sigma", "noise_sigma"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ConfigError(f"{name} must be a nonempty nonnegative range")
        if not self.downsample_factors or min(self.downsample_factors) < 1:
            raise ConfigError("downsample_factors must be nonempty and >= 1")
        if not self.quant_levels or min(self.quant_levels) < 2:
            raise ConfigError("quant_levels must be nonempty and >= 2")


def default_schedule() -> list[dict]:
    return [
        {"until": 0.4, "groups": ["encoder", "decoder", "head"]},
        {"until": 0.8, "groups": ["encoder", "decoder", "head", "transformer"]},
        {"until": 1.0, "groups": ["encoder", "decoder", "head", "transformer", "codebook"]},
    ]


@dataclass
class TrainConfig:
    steps: int = 500
    batch_clips: int = 2
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.99)
    seed: int = 0
    task: str = "bfr"
    n_train_clips: int = 10
    n_val_clips: int = 4
    clip_len: int = 8
    train_mode: str = "sample"
    schedule: list = field(default_factory=default_schedule)
    net: NetConfig = field(default_factory=NetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)

    def validate(self) -> None:
        if self.steps < 1 or self.batch_clips < 1 or self.n_train_clips < 1:
            raise ConfigError("steps, batch_clips and n_train_clips must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.clip_len < self.net.window:
            raise ConfigError("clip_len must be at least the window length")
        if self.train_mode not in ("sample", "mean"):
            raise ConfigError("train_mode must be 'sample' or 'mean'")
        expected_in = 4 if self.task == "inpainting" else 3
        if self.net.in_channels != expected_in:
            raise ConfigError(f"task {self.task} needs net.in_channels={expected_in}")
        prev = 0.0
        for stage in self.schedule:
            if set(stage) != {"until", "groups"}:
                raise ConfigError(f"schedule stage keys must be until/groups: {stage}")
            if not prev < stage["until"] <= 1.0:
                raise ConfigError("schedule 'until' fractions must increase within (0, 1]")
            unknown = set(stage["groups"]) - set(PARAM_GROUPS)
            if unknown:
                raise ConfigError(f"unknown parameter groups {sorted(unknown)}")
            prev = stage["until"]
        if prev != 1.0:
            raise ConfigError("schedule must end at until=1.0")
        self.net.validate()
        self.loss.validate()
        self.degrade.validate()

    def stage_ranges(self) -> list[tuple[int, int, tuple[str, ...]]]:
        """Contiguous [start, stop) step ranges covering [0, steps)."""
        out, start = [], 0
        for i, stage in enumerate(self.schedule):
            stop = self.steps if i == len(self.schedule) - 1 else round(stage["until"] * self.steps)
            out.append((start, stop, tuple(stage["groups"])))
            start = stop
        return out

    def groups_at(self, step: int) -> tuple[str, ...]:
        for start, stop, groups in self.stage_ranges():
            if start <= step < stop:
                return groups
        raise ConfigError(f"step {step} outside schedule")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        return config_digest(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg


_NESTED = {"net": NetConfig, "loss": LossConfig, "degrade": DegradeConfig}


def _coerce(value, default):
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    base = cls()
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(key) if cls is TrainConfig else None
        if sub is not None:
            kwargs[key] = _build(sub, value, prefix + key + ".")
        else:
            kwargs[key] = _coerce(value, getattr(base, key))
    return cls(**kwargs)


def config_digest(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` assignments; values parse as JSON when possible."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = out
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = _parse_value(raw)
    return out


def load_config(path: str | None, overrides: list[str] = (), seed: int | None = None) -> TrainConfig:
    data = TrainConfig().to_dict()
    if path:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        data = _merge(data, user, "")
    data = apply_overrides(data, list(overrides))
    if seed is not None:
        data["seed"] = seed
    return TrainConfig.from_dict(data)


def _merge(base: dict, user: dict, prefix: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigError("config file must contain a JSON object")
    out = dict(base)
    for key, value in user.items():
        if key not in base:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, prefix + key + ".")
        else:
            out[key] = value
    return out
