"""Image (ViT-style) and text (causal transformer) encoders.

Both encoders emit one feature row per input token, projected to a shared
``embed_dim`` and L2-normalized. Parameters live in a flat ``dict`` keyed by
dotted names (``img.blocks.0.attn.qkv.weight`` ...), which is what the
optimizer, the checkpoint writer and the gradient checks iterate over.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor
from .tokenizer import TokenSequence


class VocabularyError(IndexError):
    pass


@dataclass(frozen=True)
class ImageEncoderConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    layers: int = 2
    width: int = 64
    heads: int = 4
    embed_dim: int = 32
    mlp_ratio: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.image_size % self.patch_size:
            raise DimensionError("image_size must be divisible by patch_size")
        if self.width % self.heads:
            raise DimensionError("width must be divisible by heads")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid**2


@dataclass(frozen=True)
class TextEncoderConfig:
    vocab_size: int
    max_len: int = 16
    layers: int = 2
    width: int = 64
    heads: int = 4
    embed_dim: int = 32
    mlp_ratio: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.width % self.heads:
            raise DimensionError("width must be divisible by heads")


@dataclass
class EncodedFeatures:
    """Token features of one sample (``tokens``: n x d) or a batch (b x n x d).

    ``valid_mask`` marks non-padded rows; ``special_mask`` marks [CLS] on the
    image side and [BOS]/[EOS] on the text side.
    """

    tokens: Tensor
    valid_mask: np.ndarray
    special_mask: np.ndarray
    modality: str
    global_index: np.ndarray | None = field(default=None)

    @property
    def batched(self) -> bool:
        return self.tokens.ndim == 3

    def __len__(self) -> int:
        return self.tokens.shape[0] if self.batched else 1

    def candidates(self, include_special: bool = False) -> np.ndarray:
        """Rows eligible for late interaction."""
        return self.valid_mask if include_special else self.valid_mask & ~self.special_mask

    def __getitem__(self, i: int) -> "EncodedFeatures":
        if not self.batched:
            raise TypeError("features are not batched")
        gi = None if self.global_index is None else self.global_index[i]
        return EncodedFeatures(self.tokens[i], self.valid_mask[i], self.special_mask[i], self.modality, gi)

    def global_features(self) -> Tensor:
        """The pooled feature used by the global-similarity baseline ([CLS] or [EOS])."""
        if self.global_index is None:
            raise ValueError("features carry no global token index")
        if self.batched:
            return T.take_rows(self.tokens, np.asarray(self.global_index)[:, None])[:, 0, :]
        return self.tokens[int(self.global_index)]


def stack_features(items: Sequence[EncodedFeatures]) -> EncodedFeatures:
    """Stack single-sample features into a batch, padding rows to a common length."""
    if not items:
        raise ValueError("nothing to stack")
    n = max(f.tokens.shape[0] for f in items)
    d = items[0].tokens.shape[1]
    rows, valid, special = [], [], []
    for f in items:
        if f.tokens.shape[1] != d:
            raise DimensionError("embedding dimensions differ across samples")
        extra = n - f.tokens.shape[0]
        tok = f.tokens if extra == 0 else T.concat([f.tokens, Tensor(np.zeros((extra, d)))], axis=0)
        rows.append(T.reshape(tok, (1, n, d)))
        valid.append(np.concatenate([f.valid_mask, np.zeros(extra, bool)]))
        special.append(np.concatenate([f.special_mask, np.zeros(extra, bool)]))
    gi = None
    if all(f.global_index is not None for f in items):
        gi = np.array([int(f.global_index) for f in items])
    return EncodedFeatures(T.concat(rows, axis=0), np.stack(valid), np.stack(special), items[0].modality, gi)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return x * std


def _block_params(prefix: str, width: int, mlp_ratio: int, rng) -> dict[str, np.ndarray]:
    hidden = width * mlp_ratio
    return {
        f"{prefix}.ln1.gain": np.ones(width),
        f"{prefix}.ln1.bias": np.zeros(width),
        f"{prefix}.attn.qkv.weight": trunc_normal(rng, (width, 3 * width)),
        f"{prefix}.attn.qkv.bias": np.zeros(3 * width),
        f"{prefix}.attn.out.weight": trunc_normal(rng, (width, width)),
        f"{prefix}.attn.out.bias": np.zeros(width),
        f"{prefix}.ln2.gain": np.ones(width),
        f"{prefix}.ln2.bias": np.zeros(width),
        f"{prefix}.mlp.fc.weight": trunc_normal(rng, (width, hidden)),
        f"{prefix}.mlp.fc.bias": np.zeros(hidden),
        f"{prefix}.mlp.proj.weight": trunc_normal(rng, (hidden, width)),
        f"{prefix}.mlp.proj.bias": np.zeros(width),
    }


def init_image_params(cfg: ImageEncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    patch_dim = cfg.patch_size**2 * cfg.channels
    raw = {
        "img.patch_proj.weight": trunc_normal(rng, (patch_dim, cfg.width)),
        "img.cls": trunc_normal(rng, (cfg.width,)),
        "img.pos_emb": trunc_normal(rng, (cfg.num_patches + 1, cfg.width)),
        "img.ln_pre.gain": np.ones(cfg.width),
        "img.ln_pre.bias": np.zeros(cfg.width),
    }
    for i in range(cfg.layers):
        raw.update(_block_params(f"img.blocks.{i}", cfg.width, cfg.mlp_ratio, rng))
    raw["img.ln_post.gain"] = np.ones(cfg.width)
    raw["img.ln_post.bias"] = np.zeros(cfg.width)
    raw["img.proj.weight"] = trunc_normal(rng, (cfg.width, cfg.embed_dim))
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}


def init_text_params(cfg: TextEncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    raw = {
        "txt.tok_emb": trunc_normal(rng, (cfg.vocab_size, cfg.width)),
        "txt.pos_emb": trunc_normal(rng, (cfg.max_len, cfg.width)),
    }
    for i in range(cfg.layers):
        raw.update(_block_params(f"txt.blocks.{i}", cfg.width, cfg.mlp_ratio, rng))
    raw["txt.ln_final.gain"] = np.ones(cfg.width)
    raw["txt.ln_final.bias"] = np.zeros(cfg.width)
    raw["txt.proj.weight"] = trunc_normal(rng, (cfg.width, cfg.embed_dim))
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def patchify(image, patch_size: int) -> np.ndarray:
    """Split (H, W, C) -- or a batch (B, H, W, C) -- into row-major flattened patches."""
    img = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    single = img.ndim == 3
    if single:
        img = img[None]
    b, h, w, c = img.shape
    p = patch_size
    if h % p or w % p:
        raise DimensionError(f"image {h}x{w} not divisible by patch size {p}")
    out = img.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, (h // p) * (w // p), p * p * c)
    return out[0] if single else out


def _attention(x: Tensor, params, prefix: str, heads: int, mask: np.ndarray) -> Tensor:
    b, n, w = x.shape
    dh = w // heads
    qkv = x @ params[f"{prefix}.qkv.weight"] + params[f"{prefix}.qkv.bias"]
    qkv = T.transpose(T.reshape(qkv, (b, n, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = T.scale(q @ T.swapaxes(k, -1, -2), 1.0 / np.sqrt(dh))
    attn = T.softmax_rows(scores, mask)
    out = T.reshape(T.transpose(attn @ v, (0, 2, 1, 3)), (b, n, w))
    return out @ params[f"{prefix}.out.weight"] + params[f"{prefix}.out.bias"]


def _block(x: Tensor, params, prefix: str, heads: int, mask, dropout: float, rng) -> Tensor:
    h = T.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    x = x + T.dropout(_attention(h, params, f"{prefix}.attn", heads, mask), dropout, rng)
    h = T.layer_norm(x, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
    h = T.gelu(h @ params[f"{prefix}.mlp.fc.weight"] + params[f"{prefix}.mlp.fc.bias"])
    h = h @ params[f"{prefix}.mlp.proj.weight"] + params[f"{prefix}.mlp.proj.bias"]
    return x + T.dropout(h, dropout, rng)


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------


def encode_images(images, cfg: ImageEncoderConfig, params, rng=None) -> EncodedFeatures:
    """Encode a batch (B, H, W, C) of images; row 0 of each sample is [CLS]."""
    imgs = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=np.float64)
    expected = (cfg.image_size, cfg.image_size, cfg.channels)
    if imgs.ndim != 4 or imgs.shape[1:] != expected:
        raise DimensionError(f"expected images of shape (B, {expected}), got {imgs.shape}")
    b = imgs.shape[0]
    n = cfg.num_patches + 1
    patches = Tensor(patchify(imgs, cfg.patch_size))
    x = patches @ params["img.patch_proj.weight"]
    cls = T.reshape(params["img.cls"], (1, 1, cfg.width)) + Tensor(np.zeros((b, 1, cfg.width)))
    x = T.concat([cls, x], axis=1) + params["img.pos_emb"]
    x = T.layer_norm(x, params["img.ln_pre.gain"], params["img.ln_pre.bias"])
    mask = np.ones((1, 1, n, n), dtype=bool)
    for i in range(cfg.layers):
        x = _block(x, params, f"img.blocks.{i}", cfg.heads, mask, cfg.dropout, rng)
    x = T.layer_norm(x, params["img.ln_post.gain"], params["img.ln_post.bias"])
    feats = T.l2_normalize_rows(x @ params["img.proj.weight"])
    valid = np.ones((b, n), dtype=bool)
    special = np.zeros((b, n), dtype=bool)
    special[:, 0] = True
    return EncodedFeatures(feats, valid, special, "image", np.zeros(b, dtype=np.int64))


def encode_image(image, cfg: ImageEncoderConfig, params) -> EncodedFeatures:
    img = np.asarray(image.data if isinstance(image, Tensor) else image, dtype=np.float64)
    return encode_images(img[None], cfg, params)[0]


def encode_texts(ids, valid_lens, cfg: TextEncoderConfig, params, rng=None) -> EncodedFeatures:
    """Encode a batch of padded id rows (B, max_len) with causal self-attention."""
    ids = np.asarray(ids, dtype=np.int64)
    valid_lens = np.asarray(valid_lens, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != cfg.max_len:
        raise DimensionError(f"expected ids of shape (B, {cfg.max_len}), got {ids.shape}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise VocabularyError(f"token id outside vocabulary of size {cfg.vocab_size}")
    b, n = ids.shape
    x = T.embedding(params["txt.tok_emb"], ids) + params["txt.pos_emb"]
    valid = np.arange(n)[None, :] < valid_lens[:, None]
    causal = np.tril(np.ones((n, n), dtype=bool))
    mask = causal[None, None] & valid[:, None, None, :]
    for i in range(cfg.layers):
        x = _block(x, params, f"txt.blocks.{i}", cfg.heads, mask, cfg.dropout, rng)
    x = T.layer_norm(x, params["txt.ln_final.gain"], params["txt.ln_final.bias"])
    feats = T.l2_normalize_rows(x @ params["txt.proj.weight"])
    special = np.zeros((b, n), dtype=bool)
    special[:, 0] = True
    special[np.arange(b), valid_lens - 1] = True
    return EncodedFeatures(feats, valid, special, "text", valid_lens - 1)


def encode_text(seq: TokenSequence, cfg: TextEncoderConfig, params) -> EncodedFeatures:
    return encode_texts(seq.ids[None], [seq.valid_len], cfg, params)[0]
