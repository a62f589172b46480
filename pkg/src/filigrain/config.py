"""Training configuration as ``key = value`` text.

Lines starting with ``#`` are comments. Every key has a default; unknown keys
and malformed values raise :class:`ConfigError`.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .encoders import ImageEncoderConfig, TextEncoderConfig
from .late_interaction import EfficiencyConfig
from .optim import DecayPolicy, LambState, ScheduleConfig
from .synth import DEFAULT_HOLDOUT, SceneConfig

MODES = ("filip", "global-baseline")


class ConfigError(ValueError):
    pass


def _holdout_text(pairs) -> str:
    return ",".join(f"{c}:{s}" for c, s in pairs)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    mode: str = "filip"
    # data
    train_size: int = 2000
    test_size: int = 200
    min_objects: int = 1
    max_objects: int = 3
    holdout: str = _holdout_text(DEFAULT_HOLDOUT)
    augment: bool = True
    # encoders
    image_size: int = 32
    patch_size: int = 8
    image_layers: int = 2
    image_width: int = 64
    image_heads: int = 4
    max_len: int = 16
    text_layers: int = 2
    text_width: int = 64
    text_heads: int = 4
    embed_dim: int = 32
    dropout: float = 0.0
    # objective
    tau_init: float = 0.07
    tau_floor: float = 0.01
    # late-interaction efficiency
    selection_ratio: float = 1.0
    comm_precision: str = "full"
    include_special: bool = False
    shard_size: int = 4  # samples per local shard for token selection; 0: whole batch
    # optimisation
    base_lr: float = 0.02
    weight_decay: float = 0.01
    warmup_iters: int = 100
    epochs: int = 32
    steps: int = 0  # 0: epochs * (train_size // batch_size)
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-4
    checkpoint_every: int = 0
    log_every: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.comm_precision not in ("full", "half"):
            raise ConfigError("comm_precision must be full or half")
        if not 0 < self.selection_ratio <= 1:
            raise ConfigError("selection_ratio must lie in (0, 1]")
        if self.batch_size < 1 or self.train_size < self.batch_size:
            raise ConfigError("need 1 <= batch_size <= train_size")
        if self.tau_floor <= 0 or self.tau_init < self.tau_floor:
            raise ConfigError("need 0 < tau_floor <= tau_init")
        if self.total_iters <= self.warmup_iters:
            raise ConfigError("total iterations must exceed warmup_iters")
        self.holdout_pairs  # validates

    # derived views -------------------------------------------------------

    @property
    def holdout_pairs(self) -> tuple[tuple[str, str], ...]:
        pairs = []
        for item in filter(None, self.holdout.split(",")):
            parts = item.split(":")
            if len(parts) != 2:
                raise ConfigError(f"bad holdout entry {item!r}; expected colour:shape")
            pairs.append((parts[0], parts[1]))
        return tuple(pairs)

    @property
    def steps_per_epoch(self) -> int:
        return self.train_size // self.batch_size

    @property
    def total_iters(self) -> int:
        return self.steps or self.epochs * self.steps_per_epoch

    def scene_config(self, **overrides) -> SceneConfig:
        kw = dict(image_size=self.image_size, grid=self.image_size // self.patch_size,
                  min_objects=self.min_objects, max_objects=self.max_objects, holdout=self.holdout_pairs)
        kw.update(overrides)
        return SceneConfig(**kw)

    def image_config(self) -> ImageEncoderConfig:
        return ImageEncoderConfig(self.image_size, self.patch_size, 3, self.image_layers, self.image_width,
                                  self.image_heads, self.embed_dim, dropout=self.dropout)

    def text_config(self, vocab_size: int) -> TextEncoderConfig:
        return TextEncoderConfig(vocab_size, self.max_len, self.text_layers, self.text_width, self.text_heads,
                                 self.embed_dim, dropout=self.dropout)

    def efficiency(self) -> EfficiencyConfig:
        return EfficiencyConfig(self.selection_ratio, self.comm_precision, self.include_special,
                                self.shard_size or None)

    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.base_lr, self.batch_size, self.warmup_iters, self.total_iters)

    def decay_policy(self) -> DecayPolicy:
        return DecayPolicy(self.weight_decay)

    def lamb_state(self) -> LambState:
        return LambState(self.beta1, self.beta2, self.eps)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _convert(name: str, default, raw: str):
    try:
        if isinstance(default, bool):
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str) -> TrainConfig:
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, defaults[key], value)
    return TrainConfig(**values)


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
