"""Bidirectional in-batch contrastive loss with a learnable temperature."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .late_interaction import SimilarityPair
from .tensor import Tensor

TAU_INIT = 0.07
TAU_FLOOR = 0.01


def make_temperature(init: float = TAU_INIT) -> Tensor:
    return Tensor(init, requires_grad=True, name="temperature")


def clamp_temperature(tau: Tensor, floor: float = TAU_FLOOR) -> None:
    if floor <= 0:
        raise ValueError("temperature floor must be positive")
    tau.data = np.maximum(tau.data, floor)


def one_hot_targets(b: int) -> np.ndarray:
    return np.eye(b)


def multi_positive_targets(positive_sets: Sequence[Sequence[int]], b: int) -> np.ndarray:
    """Row k spreads probability 1/|set_k| over the listed positives."""
    out = np.zeros((len(positive_sets), b))
    for k, pos in enumerate(positive_sets):
        pos = sorted(set(int(p) for p in pos))
        if not pos:
            raise ValueError(f"row {k} has no positives")
        if pos[0] < 0 or pos[-1] >= b:
            raise IndexError(f"row {k} has a positive outside [0, {b})")
        out[k, pos] = 1.0 / len(pos)
    return out


def _check(s: Tensor, targets) -> tuple[int, np.ndarray]:
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {s.shape}")
    b = s.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    t = one_hot_targets(b) if targets is None else np.asarray(targets, dtype=np.float64)
    if t.shape != (b, b) or np.any(t < 0) or not np.allclose(t.sum(axis=1), 1.0):
        raise ValueError("targets must be a row-stochastic b x b matrix")
    return b, t


def _logits(s: Tensor, tau) -> Tensor:
    return s / tau if isinstance(tau, Tensor) else T.scale(s, 1.0 / float(tau))


def image_to_text_loss(s_I: Tensor, tau, targets=None) -> Tensor:
    """Sum over images k of -(1/b) * sum_j targets[k, j] * log softmax_j(s_I[k] / tau)."""
    b, t = _check(s_I, targets)
    logp = T.log_softmax(_logits(s_I, tau), axis=-1)
    return T.scale(T.tsum(logp * Tensor(t)), -1.0 / b)


def text_to_image_loss(s_T: Tensor, tau, targets=None) -> Tensor:
    """Softmax over images for each text column of ``s_T``; ``targets[k]`` is text k's row."""
    b, t = _check(s_T, targets)
    logp = T.log_softmax(_logits(s_T, tau), axis=0)
    return T.scale(T.tsum(logp * Tensor(t.T)), -1.0 / b)


def total_loss(pair: SimilarityPair, tau, targets_I=None, targets_T=None) -> Tensor:
    return T.scale(image_to_text_loss(pair.s_I, tau, targets_I) + text_to_image_loss(pair.s_T, tau, targets_T), 0.5)
