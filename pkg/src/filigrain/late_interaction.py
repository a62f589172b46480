"""Token-wise maximum-similarity scoring between image and text features.

For an image with token features ``F`` (n1 x d) and a text with ``G``
(n2 x d) the image-to-text score is the mean over image tokens of each
token's best dot product with any text token; the text-to-image score swaps
the roles. Padded rows, and by default the [CLS]/[BOS]/[EOS] rows, never take
part.

The efficiency pipeline mirrors the distributed recipe at desk scale:
token selection inside a local shard, then reduced-precision rounding of the
kept features, then scoring across the whole batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .encoders import EncodedFeatures, stack_features
from .tensor import DimensionError, EmptyCandidateError, Tensor


@dataclass(frozen=True)
class EfficiencyConfig:
    selection_ratio: float = 1.0
    comm_precision: str = "full"  # "full" | "half"
    include_special: bool = False
    shard_size: int | None = None  # None: the whole batch is one local shard

    def __post_init__(self):
        if not 0.0 < self.selection_ratio <= 1.0:
            raise ValueError("selection_ratio must lie in (0, 1]")
        if self.comm_precision not in ("full", "half"):
            raise ValueError("comm_precision must be 'full' or 'half'")
        if self.shard_size is not None and self.shard_size < 1:
            raise ValueError("shard_size must be positive")


@dataclass
class SimilarityPair:
    s_I: Tensor  # [i, j]: image i -> text j
    s_T: Tensor  # [i, j]: text j -> image i
    stats: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TokenSelection:
    kept_indices: list[np.ndarray]
    selection_ratio: float


def kept_count(n_valid: int, ratio: float) -> int:
    # the tolerance keeps e.g. 0.1 * 30 from rounding up to 4
    return max(1, math.ceil(ratio * n_valid - 1e-9))


# ---------------------------------------------------------------------------
# dot products
# ---------------------------------------------------------------------------


def token_dots(a: Tensor, b: Tensor) -> Tensor:
    """All dot products between rows of ``a`` (..., n1, d) and ``b`` (..., n2, d).

    The reduction over ``d`` runs per output entry, so an entry never depends
    on how many other rows are present.
    """
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"embedding dims differ: {a.shape[-1]} vs {b.shape[-1]}")
    out = np.einsum("...kd,...rd->...kr", a.data, b.data)

    def bw(g):
        ga = T._unbroadcast(g @ b.data, a.shape)
        gb = T._unbroadcast(np.swapaxes(g, -1, -2) @ a.data, b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), bw)


def _ordered_masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Masked mean over the last axis, accumulated in ascending index order."""
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    count = m.sum(axis=-1)
    if np.any(count == 0):
        raise EmptyCandidateError("no valid tokens to average over")
    acc = np.zeros(x.shape[:-1])
    for k in range(x.shape[-1]):
        acc = acc + np.where(m[..., k], x.data[..., k], 0.0)
    out = acc / count
    w = m / count[..., None]
    return Tensor._result(out, (x,), lambda g: (g[..., None] * w,))


def pairwise_token_sim(img: EncodedFeatures, txt: EncodedFeatures) -> Tensor:
    """(n1 x n2) matrix of image-token / text-token dot products, padding included."""
    return token_dots(img.tokens, txt.tokens)


def _directional(img: EncodedFeatures, txt: EncodedFeatures, include_special: bool, image_side: bool):
    ci = img.candidates(include_special)
    ct = txt.candidates(include_special)
    if not ci.any() or not ct.any():
        raise EmptyCandidateError("no candidate tokens on one side")
    sim = pairwise_token_sim(img, txt)
    if image_side:
        best, arg = T.masked_max_rows(sim, ct[None, :])
        score = _ordered_masked_mean(best, ci)
        return score, arg[ci]
    best, arg = T.masked_max_rows(T.swapaxes(sim, -1, -2), ci[None, :])
    score = _ordered_masked_mean(best, ct)
    return score, arg[ct]


def image_to_text_sim(img: EncodedFeatures, txt: EncodedFeatures, include_special: bool = False):
    """Mean over image tokens of their best text-token match.

    Returns ``(score, alignment)`` where ``alignment[k]`` is the text position
    matched by the k-th candidate image token.
    """
    score, arg = _directional(img, txt, include_special, True)
    return float(score.data), arg


def text_to_image_sim(img: EncodedFeatures, txt: EncodedFeatures, include_special: bool = False):
    score, arg = _directional(img, txt, include_special, False)
    return float(score.data), arg


def image_to_text_score(img: EncodedFeatures, txt: EncodedFeatures, include_special: bool = False) -> Tensor:
    """Differentiable form of :func:`image_to_text_sim` (score only)."""
    return _directional(img, txt, include_special, True)[0]


def global_sim(img_cls, txt_eos) -> float:
    a = np.asarray(img_cls.data if isinstance(img_cls, Tensor) else img_cls, dtype=np.float64)
    b = np.asarray(txt_eos.data if isinstance(txt_eos, Tensor) else txt_eos, dtype=np.float64)
    return float(a @ b)


# ---------------------------------------------------------------------------
# efficiency pipeline
# ---------------------------------------------------------------------------


def _as_batch(items) -> EncodedFeatures:
    if isinstance(items, EncodedFeatures):
        return items if items.batched else stack_features([items])
    return stack_features(list(items))


def token_max_scores(features: EncodedFeatures, pool: EncodedFeatures, include_special: bool = False) -> np.ndarray:
    """For every token of every sample, its best dot product against any pool token.

    Shapes: features (b, n, d), pool (p, m, d) -> (b, n). Not differentiable.
    """
    cp = pool.candidates(include_special)
    if not cp.any():
        raise EmptyCandidateError("counterpart pool has no candidate tokens")
    flat = pool.tokens.data[cp]  # (P, d)
    sims = np.einsum("bnd,pd->bnp", features.tokens.data, flat)
    return sims.max(axis=-1)


def select_salient_tokens(features, counterpart_pool: Sequence[EncodedFeatures] | EncodedFeatures, ratio: float,
                          include_special: bool = False) -> TokenSelection:
    """Keep the ``max(1, ceil(ratio * n_valid))`` candidate tokens with the highest
    token-wise max similarity against the pool; indices come back ascending."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    if isinstance(counterpart_pool, (list, tuple)) and not counterpart_pool:
        raise ValueError("empty counterpart pool")
    feats = _as_batch(features)
    pool = _as_batch(counterpart_pool)
    scores = token_max_scores(feats, pool, include_special)
    return TokenSelection(_top_tokens(scores, feats.candidates(include_special), ratio), ratio)


def _top_tokens(scores: np.ndarray, cand: np.ndarray, ratio: float) -> list[np.ndarray]:
    kept = []
    for s, c in zip(scores, cand):
        idx = np.flatnonzero(c)
        k = kept_count(len(idx), ratio)
        # stable sort on -score: ties resolve to the lower index
        order = np.argsort(-s[idx], kind="stable")[:k]
        kept.append(np.sort(idx[order]))
    return kept


def _gather(feats: EncodedFeatures, kept: list[np.ndarray]) -> EncodedFeatures:
    k = max(len(x) for x in kept)
    index = np.zeros((len(kept), k), dtype=np.int64)
    valid = np.zeros((len(kept), k), dtype=bool)
    for i, x in enumerate(kept):
        index[i, : len(x)] = x
        valid[i, : len(x)] = True
    tokens = T.take_rows(feats.tokens, index)
    special = np.take_along_axis(feats.special_mask, index, axis=1) & valid
    return EncodedFeatures(tokens, valid, special, feats.modality)


def comm_reduce(features: EncodedFeatures) -> EncodedFeatures:
    """Round features to binary16 precision, as before a reduced-precision all-gather."""
    return EncodedFeatures(T.half_round(features.tokens), features.valid_mask, features.special_mask,
                           features.modality, features.global_index)


def _shards(b: int, shard_size: int | None):
    size = b if shard_size is None else shard_size
    return [slice(s, min(s + size, b)) for s in range(0, b, size)]


def batch_similarity(imgs, txts, efficiency: EfficiencyConfig | None = None) -> SimilarityPair:
    """Image-to-text and text-to-image score matrices for every (image, text) pair.

    Order of operations: per-shard token selection, precision reduction, then
    scoring across the batch. ``stats`` counts the token-pair dot products
    evaluated on candidate tokens.
    """
    eff = efficiency or EfficiencyConfig()
    I = _as_batch(imgs)
    Tx = _as_batch(txts)
    if len(I) != len(Tx):
        raise ValueError("image and text batches differ in length")
    b = len(I)
    inc = eff.include_special
    ci, ct = I.candidates(inc), Tx.candidates(inc)
    if not ci.any(axis=1).all() or not ct.any(axis=1).all():
        raise EmptyCandidateError("a sample has no candidate tokens")
    ni, nt = ci.sum(axis=1), ct.sum(axis=1)
    stats = {"pairs_full": int(ni.sum() * nt.sum()), "pairs_selection": 0}

    if eff.selection_ratio < 1.0:
        kept_i: list[np.ndarray] = []
        kept_t: list[np.ndarray] = []
        for sl in _shards(b, eff.shard_size):
            # one shard-local similarity pass serves both directions
            local = np.einsum("ind,jrd->injr", I.tokens.data[sl], Tx.tokens.data[sl])
            local = np.where(ct[sl][None, None, :, :], local, -np.inf)
            kept_i += _top_tokens(local.max(axis=(2, 3)), ci[sl], eff.selection_ratio)
            local = np.where(ci[sl][:, :, None, None], local, -np.inf)
            kept_t += _top_tokens(local.max(axis=(0, 1)), ct[sl], eff.selection_ratio)
            stats["pairs_selection"] += int(ni[sl].sum() * nt[sl].sum())
        I, Tx = _gather(I, kept_i), _gather(Tx, kept_t)
        ci, ct = I.valid_mask, Tx.valid_mask
    if eff.comm_precision == "half":
        I, Tx = comm_reduce(I), comm_reduce(Tx)

    stats["pairs_scored"] = int(ci.sum() * ct.sum())
    b_, n1, d = I.tokens.shape
    n2 = Tx.tokens.shape[1]
    sim = token_dots(T.reshape(I.tokens, (b, 1, n1, d)), T.reshape(Tx.tokens, (1, b, n2, d)))  # (b, b, n1, n2)
    best_i, arg_i = T.masked_max_rows(sim, ct[None, :, None, :])
    s_I = _ordered_masked_mean(best_i, ci[:, None, :])
    best_t, arg_t = T.masked_max_rows(T.swapaxes(sim, -1, -2), ci[:, None, None, :])
    s_T = _ordered_masked_mean(best_t, ct[None, :, :])
    return SimilarityPair(s_I, s_T, stats)


def _slice(f: EncodedFeatures, sl: slice) -> EncodedFeatures:
    gi = None if f.global_index is None else f.global_index[sl]
    return EncodedFeatures(f.tokens[sl], f.valid_mask[sl], f.special_mask[sl], f.modality, gi)


def global_similarity(imgs, txts) -> SimilarityPair:
    """Baseline scores from pooled [CLS]/[EOS] features; both matrices coincide."""
    I = _as_batch(imgs)
    Tx = _as_batch(txts)
    gi, gt = I.global_features(), Tx.global_features()
    s = gi @ T.swapaxes(gt, -1, -2)
    b = len(I)
    return SimilarityPair(s, s, {"pairs_full": b * b, "pairs_scored": b * b, "pairs_selection": 0})
