"""Word-level tokenizer with [PAD]/[BOS]/[EOS]/[UNK] specials."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("[PAD]", "[BOS]", "[EOS]", "[UNK]")

_TOKEN_RE = re.compile(r"[a-z0-9']+|[^\sa-z0-9']")


def split_words(text: str) -> list[str]:
    """Lowercase and split into word tokens; each punctuation mark stands alone."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the reserved special tokens")
        idx = {tok: i for i, tok in enumerate(self.tokens)}
        if len(idx) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "index", idx)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK)

    def save(self, path) -> None:
        Path(path).write_text("".join(f"{tok}\t{i}\n" for i, tok in enumerate(self.tokens)), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        pairs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            tok, i = line.rsplit("\t", 1)
            pairs.append((int(i), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError("vocabulary ids are not dense")
        return cls(tuple(tok for _, tok in pairs))


def build_vocab(corpus: list[str], min_count: int = 1) -> Vocabulary:
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    counts = Counter(tok for text in corpus for tok in split_words(text))
    for s in SPECIALS:
        counts.pop(s, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(SPECIALS + tuple(kept))


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    valid_len: int
    truncated: int = 0

    @property
    def mask(self) -> np.ndarray:
        return np.arange(len(self.ids)) < self.valid_len

    @property
    def max_len(self) -> int:
        return len(self.ids)


def encode(text: str, vocab: Vocabulary, max_len: int = 77) -> TokenSequence:
    if max_len < 3:
        raise ValueError("max_len must be at least 3")
    words = split_words(text)
    room = max_len - 2
    dropped = max(0, len(words) - room)
    words = words[:room]
    ids = np.full(max_len, PAD, dtype=np.int64)
    ids[0] = BOS
    ids[1 : 1 + len(words)] = [vocab.id_of(w) for w in words]
    ids[1 + len(words)] = EOS
    return TokenSequence(ids, len(words) + 2, dropped)


def decode(seq: TokenSequence, vocab: Vocabulary) -> list[str]:
    """Content tokens of ``seq`` (specials stripped)."""
    return [vocab.tokens[i] for i in seq.ids[1 : seq.valid_len - 1]]


def token_spans(text: str, label: str) -> list[int]:
    """Positions of ``label``'s tokens inside the encoded ``text`` ([BOS] is 0).

    The first occurrence is used.
    """
    words = split_words(text)
    target = split_words(label)
    if not target:
        raise ValueError("empty label")
    for start in range(len(words) - len(target) + 1):
        if words[start : start + len(target)] == target:
            return list(range(start + 1, start + 1 + len(target)))
    raise LookupError(f"label {label!r} not found in {text!r}")
