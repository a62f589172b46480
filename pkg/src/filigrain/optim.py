"""LAMB with selective weight decay, plus the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor

# Paper-scale constants kept for reference: warmup 3000 iters, 30 epochs,
# total batch 1024 x 8 at base lr 6e-3 and weight decay 3e-2.
REFERENCE_BATCH = 512


def peak_lr(base_lr: float, total_batch_size: int) -> float:
    """Square-root scaling of the base rate to the effective batch size."""
    if base_lr <= 0 or total_batch_size <= 0:
        raise ValueError("base_lr and total_batch_size must be positive")
    return base_lr * math.sqrt(total_batch_size / REFERENCE_BATCH)


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float
    total_batch_size: int
    warmup_iters: int
    total_iters: int

    def __post_init__(self):
        if min(self.base_lr, self.total_batch_size, self.warmup_iters, self.total_iters) <= 0:
            raise ValueError("schedule fields must be positive")
        if self.warmup_iters >= self.total_iters:
            raise ValueError("warmup_iters must be smaller than total_iters")

    @property
    def peak(self) -> float:
        return peak_lr(self.base_lr, self.total_batch_size)


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    if not 0 <= step <= cfg.total_iters:
        raise ValueError(f"step {step} outside [0, {cfg.total_iters}]")
    peak = cfg.peak
    if step < cfg.warmup_iters:
        return peak * (step + 1) / cfg.warmup_iters
    progress = (step - cfg.warmup_iters) / (cfg.total_iters - cfg.warmup_iters)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


_EXCLUDED_LEAVES = ("tok_emb", "pos_emb", "temperature")


def default_exclusion(name: str) -> bool:
    """Biases, layer-norm gains/biases, token/positional embeddings and the temperature."""
    parts = name.split(".")
    if parts[-1] == "bias" or parts[-1] in _EXCLUDED_LEAVES:
        return True
    return len(parts) >= 2 and parts[-2].startswith("ln")


@dataclass(frozen=True)
class DecayPolicy:
    weight_decay: float = 0.0
    exclude: Callable[[str], bool] = default_exclusion

    def decay_for(self, name: str) -> float:
        return 0.0 if self.exclude(name) else self.weight_decay


@dataclass
class LambState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-4
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    trust_ratios: dict[str, float] = field(default_factory=dict)


def lamb_step(params: Mapping[str, Tensor], state: LambState, lr: float, policy: DecayPolicy = DecayPolicy(),
              grads: Mapping[str, np.ndarray] | None = None, tau_floor: float | None = 0.01) -> None:
    """Apply one LAMB update in place.

    Gradients come from ``grads`` when given, else from each tensor's
    ``.grad`` (missing gradients count as zero). The direction is the
    bias-corrected Adam ratio plus decoupled decay; its length is rescaled
    per tensor by ``||w|| / ||direction||`` (1 when either norm is zero).
    """
    if lr < 0:
        raise ValueError("negative learning rate")
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        r = (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + state.eps)
        wd = policy.decay_for(name)
        if wd:
            r = r + wd * p.data
        w_norm = float(np.sqrt((p.data * p.data).sum()))
        u_norm = float(np.sqrt((r * r).sum()))
        ratio = w_norm / u_norm if w_norm > 0 and u_norm > 0 else 1.0
        state.trust_ratios[name] = ratio
        p.data = p.data - lr * ratio * r
        if tau_floor is not None and name == "temperature":
            p.data = np.maximum(p.data, tau_floor)
