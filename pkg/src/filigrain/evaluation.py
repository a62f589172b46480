"""Zero-shot classification, retrieval recall@K and word-patch alignment maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import serialization
from .encoders import EncodedFeatures
from .late_interaction import _as_batch, token_dots
from .prompts import ensemble_similarity
from .tensor import EmptyCandidateError, Tensor, masked_max_rows, no_grad

RECALL_KS = (1, 5, 10)


# ---------------------------------------------------------------------------
# zero-shot classification
# ---------------------------------------------------------------------------


def zero_shot_classify(img: EncodedFeatures, classes: Sequence[tuple[str, Sequence[EncodedFeatures]]],
                       include_special: bool = False) -> tuple[str, list[float]]:
    """Pick the class with the highest prompt-ensembled score (first one on ties)."""
    if not classes:
        raise ValueError("no classes to choose from")
    scores = [ensemble_similarity(img, texts, include_special) for _, texts in classes]
    return classes[int(np.argmax(scores))][0], scores


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


def cross_similarity(imgs, txts, include_special: bool = False, chunk: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Rectangular score matrices ``(s_I, s_T)``, both indexed [image, text]."""
    I, Tx = _as_batch(imgs), _as_batch(txts)
    ci, ct = I.candidates(include_special), Tx.candidates(include_special)
    if not ci.any(axis=1).all() or not ct.any(axis=1).all():
        raise EmptyCandidateError("a sample has no candidate tokens")
    n_img, n_txt = len(I), len(Tx)
    s_I = np.zeros((n_img, n_txt))
    s_T = np.zeros((n_img, n_txt))
    it = Tx.tokens.data[None]
    with no_grad():
        for s in range(0, n_img, chunk):
            sl = slice(s, min(s + chunk, n_img))
            sim = token_dots(Tensor(I.tokens.data[sl, None]), Tensor(it)).data  # (c, T, n1, n2)
            row_max = np.where(ct[None, :, None, :], sim, -np.inf).max(axis=-1)
            s_I[sl] = _ordered_mean(row_max, ci[sl, None, :])
            col_max = np.where(ci[sl, None, :, None], sim, -np.inf).max(axis=-2)
            s_T[sl] = _ordered_mean(col_max, ct[None, :, :])
    return s_I, s_T


def _ordered_mean(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    m = np.broadcast_to(mask, x.shape)
    acc = np.zeros(x.shape[:-1])
    for k in range(x.shape[-1]):
        acc = acc + np.where(m[..., k], x[..., k], 0.0)
    return acc / m.sum(axis=-1)


def global_cross_similarity(imgs, txts) -> np.ndarray:
    I, Tx = _as_batch(imgs), _as_batch(txts)
    with no_grad():
        return I.global_features().data @ Tx.global_features().data.T


@dataclass
class RetrievalReport:
    i2t: dict[int, float] = field(default_factory=dict)
    t2i: dict[int, float] = field(default_factory=dict)
    i2t_ranks: np.ndarray | None = None
    t2i_ranks: np.ndarray | None = None

    def metrics(self) -> dict[str, float]:
        out = {}
        for k, v in self.i2t.items():
            out[f"i2t_R@{k}"] = v
        for k, v in self.t2i.items():
            out[f"t2i_R@{k}"] = v
        return out

    def format(self, per_query: bool = False) -> str:
        lines = [f"{k}\t{v!r}" for k, v in self.metrics().items()]
        if per_query:
            for name, ranks in (("i2t", self.i2t_ranks), ("t2i", self.t2i_ranks)):
                if ranks is not None:
                    lines.append(f"[{name}_ranks]")
                    lines.extend(f"{q}\t{int(r)}" for q, r in enumerate(ranks))
        return "\n".join(lines) + "\n"


def rank_of_first_hit(scores: np.ndarray, hits: np.ndarray) -> np.ndarray:
    """0-based rank of the best-ranked ground-truth item per query row.

    Sorting is stable on descending score, so ties favour the lower gallery index.
    """
    order = np.argsort(-scores, axis=1, kind="stable")
    hit_sorted = np.take_along_axis(hits, order, axis=1)
    return hit_sorted.argmax(axis=1)


def recall_at(ranks: np.ndarray, ks=RECALL_KS) -> dict[int, float]:
    return {k: float(np.mean(ranks < k)) for k in ks}


def retrieval_from_scores(s_img_query: np.ndarray, s_txt_query: np.ndarray, ground_truth: Sequence[int],
                          direction: str = "both") -> RetrievalReport:
    """Recall@K from [image, text] score matrices; ``ground_truth[t]`` is text t's image."""
    gt = np.asarray(ground_truth, dtype=np.int64)
    n_img, n_txt = s_img_query.shape
    if gt.shape != (n_txt,):
        raise ValueError("ground truth must name one image per text")
    if gt.min() < 0 or gt.max() >= n_img:
        raise ValueError("ground truth refers to an unknown image")
    hits = gt[None, :] == np.arange(n_img)[:, None]  # [image, text]
    rep = RetrievalReport()
    if direction in ("both", "i2t"):
        if not hits.any(axis=1).all():
            raise ValueError("an image query has no ground-truth text")
        rep.i2t_ranks = rank_of_first_hit(s_img_query, hits)
        rep.i2t = recall_at(rep.i2t_ranks)
    if direction in ("both", "t2i"):
        rep.t2i_ranks = rank_of_first_hit(s_txt_query.T, hits.T)
        rep.t2i = recall_at(rep.t2i_ranks)
    if direction not in ("both", "i2t", "t2i"):
        raise ValueError(f"unknown direction {direction!r}")
    return rep


def retrieval_eval(imgs, txts, ground_truth: Sequence[int], direction: str = "both", score: str = "directional",
                   include_special: bool = False) -> RetrievalReport:
    """Image queries rank texts by the image-to-text score and text queries rank
    images by the text-to-image score (``score="directional"``); ``"mean"``
    averages the two and ``"global"`` uses pooled [CLS]/[EOS] features."""
    if len(imgs) == 0 or len(txts) == 0:
        raise ValueError("empty gallery")
    if score == "global":
        s = global_cross_similarity(imgs, txts)
        return retrieval_from_scores(s, s, ground_truth, direction)
    s_I, s_T = cross_similarity(imgs, txts, include_special)
    if score == "mean":
        s_I = s_T = 0.5 * (s_I + s_T)
    elif score != "directional":
        raise ValueError(f"unknown score {score!r}")
    return retrieval_from_scores(s_I, s_T, ground_truth, direction)


# ---------------------------------------------------------------------------
# word-patch alignment
# ---------------------------------------------------------------------------


@dataclass
class AlignmentMap:
    predicted: np.ndarray  # text position per image patch
    label_indices: frozenset
    grid: tuple[int, int]
    text_len: int

    @property
    def correct(self) -> np.ndarray:
        return np.array([int(p) in self.label_indices for p in self.predicted], dtype=bool)

    def render_text(self, color: bool = False) -> str:
        """Grid of predicted indices; label hits are starred (or red with ``color``)."""
        h, w = self.grid
        width = len(str(max(self.text_len - 1, 0)))
        rows = []
        for r in range(h):
            cells = []
            for c in range(w):
                k = r * w + c
                idx = f"{int(self.predicted[k]):>{width}}"
                if self.correct[k]:
                    cells.append(f"\x1b[31m{idx}\x1b[0m " if color else f"{idx}*")
                else:
                    cells.append(f"{idx} ")
            rows.append(" ".join(cells).rstrip())
        return "\n".join(rows) + "\n"


def alignment_export(img: EncodedFeatures, txt: EncodedFeatures, label_span: Sequence[int],
                     include_special: bool = False) -> AlignmentMap:
    """Best-matching text position for every image patch ([CLS] row excluded)."""
    patches = ~img.special_mask & img.valid_mask
    n = int(patches.sum())
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ValueError(f"{n} patches do not form a square grid")
    ct = txt.candidates(include_special)
    with no_grad():
        sim = token_dots(img.tokens, txt.tokens)
        _, arg = masked_max_rows(sim, ct[None, :])
    span = frozenset(int(i) for i in label_span)
    if any(i >= int(txt.valid_mask.sum()) for i in span):
        raise ValueError("label index beyond the text length")
    return AlignmentMap(arg[patches], span, (side, side), int(txt.valid_mask.sum()))


def alignment_hit_rate(maps: Sequence[AlignmentMap], object_masks: Sequence[np.ndarray]) -> float:
    """Fraction of object patches, pooled over all maps, aligned to a label token."""
    if len(maps) != len(object_masks):
        raise ValueError("one object mask per alignment map is required")
    hits = total = 0
    for m, mask in zip(maps, object_masks):
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if mask.shape != m.predicted.shape:
            raise ValueError(f"object mask of {mask.size} patches vs {m.predicted.size} in the map")
        total += int(mask.sum())
        hits += int((m.correct & mask).sum())
    if total == 0:
        raise ValueError("no object patches to score")
    return hits / total


def alignment_overlay(image: np.ndarray, amap: AlignmentMap, dim: float = 0.25) -> np.ndarray:
    """Image with correctly aligned patches at full opacity and the rest dimmed."""
    img = np.asarray(image, dtype=np.float64)
    h, w = amap.grid
    ph, pw = img.shape[0] // h, img.shape[1] // w
    alpha = np.repeat(np.repeat(amap.correct.reshape(h, w), ph, axis=0), pw, axis=1)
    return np.where(alpha[..., None], img, img * dim + (1 - dim) * 0.5)


def write_alignment(prefix, image: np.ndarray, amap: AlignmentMap, scale: int = 8) -> tuple[Path, Path]:
    """Write ``<prefix>.txt`` (index grid) and ``<prefix>.ppm`` (overlay, upscaled)."""
    prefix = Path(prefix)
    txt_path = prefix.with_suffix(".txt")
    ppm_path = prefix.with_suffix(".ppm")
    txt_path.write_text(amap.render_text(), encoding="utf-8")
    overlay = alignment_overlay(image, amap)
    overlay = np.repeat(np.repeat(overlay, scale, axis=0), scale, axis=1)
    serialization.write_ppm(ppm_path, overlay)
    return txt_path, ppm_path


def zero_shot_predict(imgs, prompts, prompt_class: Sequence[int], n_classes: int,
                      include_special: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Batched zero-shot: class score = mean image-to-text score over that class's prompts.

    Returns (predicted class per image, (n_images, n_classes) scores).
    """
    s_I, _ = cross_similarity(imgs, prompts, include_special)
    owner = np.asarray(prompt_class, dtype=np.int64)
    if owner.shape != (s_I.shape[1],) or owner.min() < 0 or owner.max() >= n_classes:
        raise ValueError("prompt_class must map every prompt to a class")
    scores = np.empty((s_I.shape[0], n_classes))
    for c in range(n_classes):
        cols = s_I[:, owner == c]
        if cols.shape[1] == 0:
            raise ValueError(f"class {c} has no prompts")
        scores[:, c] = [math.fsum(row) / cols.shape[1] for row in cols]
    return scores.argmax(axis=1), scores
