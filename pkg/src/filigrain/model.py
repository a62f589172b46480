"""Dual-stream model container: both encoders, the temperature and the vocabulary."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import serialization
from .encoders import (
    EncodedFeatures,
    ImageEncoderConfig,
    TextEncoderConfig,
    encode_images,
    encode_texts,
    init_image_params,
    init_text_params,
)
from .objective import make_temperature
from .tensor import Tensor, no_grad
from .tokenizer import TokenSequence, Vocabulary, encode


@dataclass
class DualEncoder:
    image_cfg: ImageEncoderConfig
    text_cfg: TextEncoderConfig
    params: dict[str, Tensor]
    vocab: Vocabulary

    @classmethod
    def create(cls, image_cfg: ImageEncoderConfig, text_cfg: TextEncoderConfig, vocab: Vocabulary,
               rng: np.random.Generator, tau_init: float = 0.07) -> "DualEncoder":
        if image_cfg.embed_dim != text_cfg.embed_dim:
            raise ValueError("image and text embed_dim differ")
        params = init_image_params(image_cfg, rng)
        params.update(init_text_params(text_cfg, rng))
        params["temperature"] = make_temperature(tau_init)
        return cls(image_cfg, text_cfg, params, vocab)

    @property
    def temperature(self) -> Tensor:
        return self.params["temperature"]

    def tokenize(self, texts: Sequence[str]) -> list[TokenSequence]:
        return [encode(t, self.vocab, self.text_cfg.max_len) for t in texts]

    def encode_images(self, images, rng=None) -> EncodedFeatures:
        return encode_images(images, self.image_cfg, self.params, rng)

    def encode_sequences(self, seqs: Sequence[TokenSequence], rng=None) -> EncodedFeatures:
        ids = np.stack([s.ids for s in seqs])
        return encode_texts(ids, [s.valid_len for s in seqs], self.text_cfg, self.params, rng)

    def encode_texts(self, texts: Sequence[str], rng=None) -> EncodedFeatures:
        return self.encode_sequences(self.tokenize(texts), rng)

    def embed_images(self, images, chunk: int = 128) -> EncodedFeatures:
        """Inference-only encoding in chunks; returns detached batched features."""
        images = np.asarray(images)
        parts = []
        with no_grad():
            for s in range(0, len(images), chunk):
                parts.append(self.encode_images(images[s : s + chunk]))
        return _cat(parts)

    def embed_texts(self, texts: Sequence[str], chunk: int = 256) -> EncodedFeatures:
        parts = []
        with no_grad():
            for s in range(0, len(texts), chunk):
                parts.append(self.encode_texts(list(texts[s : s + chunk])))
        return _cat(parts)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def parameter_count(self) -> int:
        return int(sum(v.data.size for v in self.params.values()))


def _cat(parts: list[EncodedFeatures]) -> EncodedFeatures:
    tokens = Tensor(np.concatenate([p.tokens.data for p in parts]))
    gi = None if parts[0].global_index is None else np.concatenate([p.global_index for p in parts])
    return EncodedFeatures(tokens, np.concatenate([p.valid_mask for p in parts]),
                           np.concatenate([p.special_mask for p in parts]), parts[0].modality, gi)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

VOCAB_MARKER = "[vocab]"


def save_checkpoint(path, model: DualEncoder, config_text: str) -> None:
    """Header = config text, a ``[vocab]`` line, then one token per line."""
    header = config_text.rstrip("\n") + f"\n{VOCAB_MARKER}\n" + "\n".join(model.vocab.tokens) + "\n"
    serialization.save(path, model.state_arrays(), header)


def read_checkpoint(path) -> tuple[str, Vocabulary, dict[str, np.ndarray]]:
    header, arrays = serialization.load(path)
    if f"\n{VOCAB_MARKER}\n" not in "\n" + header:
        raise serialization.FormatError("checkpoint header has no vocabulary")
    cfg_text, vocab_text = ("\n" + header).split(f"\n{VOCAB_MARKER}\n", 1)
    vocab = Vocabulary(tuple(vocab_text.rstrip("\n").split("\n")))
    return cfg_text.lstrip("\n") + ("\n" if cfg_text.strip() else ""), vocab, arrays
