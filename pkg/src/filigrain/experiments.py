"""Held-out probes shared by the acceptance suite, the demos and ``filigrain eval``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .evaluation import RetrievalReport, alignment_export, alignment_hit_rate, retrieval_eval
from .model import DualEncoder
from .synth import generate_dataset
from .tokenizer import token_spans

ALIGN_PROMPT = "a photo of a {}."


def heldout_gallery(cfg: TrainConfig, size: int | None = None, seed_offset: int = 1000):
    """Test-split scenes with distinct object sets, so each caption has one true image.

    Captions name objects but not positions; two scenes with the same objects
    would be indistinguishable and are therefore dropped after the first.
    """
    items = generate_dataset(cfg.seed + seed_offset, size or cfg.test_size, cfg.scene_config(), "test")
    seen, keep = set(), []
    for scene, caps in items:
        key = frozenset((o.color, o.shape) for o in scene.objects)
        if key not in seen:
            seen.add(key)
            keep.append((scene, caps))
    return keep


def heldout_retrieval(model: DualEncoder, cfg: TrainConfig, gallery=None, score: str | None = None) -> RetrievalReport:
    gallery = gallery if gallery is not None else heldout_gallery(cfg)
    imgs = model.embed_images(np.stack([s.image for s, _ in gallery]))
    txts = model.embed_texts([c.canonical for _, c in gallery])
    if score is None:
        score = "global" if cfg.mode == "global-baseline" else "directional"
    return retrieval_eval(imgs, txts, list(range(len(gallery))), score=score, include_special=cfg.include_special)


@dataclass
class AlignmentProbe:
    hit_rate: float
    chance: float
    maps: list


def alignment_probe(model: DualEncoder, cfg: TrainConfig, n: int = 200, seed_offset: int = 2000) -> AlignmentProbe:
    """Hit rate on ``n`` single-object held-out scenes prompted with "a photo of a <colour> <shape>."."""
    scfg = cfg.scene_config(min_objects=1, max_objects=1)
    items = generate_dataset(cfg.seed + seed_offset, n, scfg, "test")
    prompts = [ALIGN_PROMPT.format(s.objects[0].words) for s, _ in items]
    imgs = model.embed_images(np.stack([s.image for s, _ in items]))
    txts = model.embed_texts(prompts)
    maps, masks, chance = [], [], []
    for k, (scene, _) in enumerate(items):
        span = token_spans(prompts[k], scene.objects[0].words)
        amap = alignment_export(imgs[k], txts[k], span, cfg.include_special)
        maps.append(amap)
        masks.append(scene.object_mask(cfg.patch_size)[0])
        chance.append(len(span) / amap.text_len)
    return AlignmentProbe(alignment_hit_rate(maps, masks), float(np.mean(chance)), maps)
