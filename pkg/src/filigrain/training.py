"""Training loop: synthetic data -> augmentation -> encoders -> similarity -> loss -> LAMB."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import ConfigError, TrainConfig, format_config, parse_config
from .late_interaction import batch_similarity, global_similarity
from .model import DualEncoder, read_checkpoint, save_checkpoint
from .objective import total_loss
from .optim import lamb_step, lr_at
from .synth import augment_scene, generate_dataset, sample_caption
from .tensor import backward
from .tokenizer import build_vocab

log = logging.getLogger(__name__)

LOG_HEADER = "step\tlr\tloss\ttau"


class TrainingAborted(RuntimeError):
    pass


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FILIGRAIN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class TrainResult:
    model: DualEncoder
    config: TrainConfig
    log: list[tuple[int, float, float, float]] = field(default_factory=list)

    def log_text(self) -> str:
        return LOG_HEADER + "\n" + "".join(f"{s}\t{lr!r}\t{loss!r}\t{tau!r}\n" for s, lr, loss, tau in self.log)


def build_model(cfg: TrainConfig, train_items) -> DualEncoder:
    corpus = [c for _, caps in train_items for c in caps.candidates]
    vocab = build_vocab(corpus)
    return DualEncoder.create(cfg.image_config(), cfg.text_config(len(vocab)), vocab, _rng(cfg.seed, 1), cfg.tau_init)


def similarity(model_feats, cfg: TrainConfig):
    imgs, txts = model_feats
    if cfg.mode == "global-baseline":
        return global_similarity(imgs, txts)
    return batch_similarity(imgs, txts, cfg.efficiency())


def compute_loss(model: DualEncoder, images: np.ndarray, texts: list[str], cfg: TrainConfig, rng=None):
    imgs = model.encode_images(images, rng)
    txts = model.encode_texts(texts, rng)
    pair = similarity((imgs, txts), cfg)
    return total_loss(pair, model.temperature), pair


def _prepare(args):
    item, key, cfg, scene_cfg = args
    scene, caps = item
    rng = _rng(*key)
    if cfg.augment:
        scene = augment_scene(scene, rng, scene_cfg)
    return scene.image, sample_caption(caps, rng)


def train(cfg: TrainConfig, out_dir=None, train_items=None,
          callback: Callable[[int, DualEncoder], None] | None = None) -> TrainResult:
    """Run the full loop; with ``out_dir`` also write checkpoints and ``train_log.tsv``.

    A non-finite loss stops training: the last good parameters are written to
    ``last_good.bin`` and :class:`TrainingAborted` is raised.
    """
    scene_cfg = cfg.scene_config()
    items = train_items if train_items is not None else generate_dataset(cfg.seed, cfg.train_size, scene_cfg, "train")
    model = build_model(cfg, items)
    config_text = format_config(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model, cfg)
    schedule = cfg.schedule()
    policy = cfg.decay_policy()
    state = cfg.lamb_state()
    order_rng = _rng(cfg.seed, 2)
    order = np.array([], dtype=np.int64)
    spe = cfg.steps_per_epoch
    threads = worker_count()
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for step in range(cfg.total_iters):
            if step % spe == 0:
                order = order_rng.permutation(len(items))
            pos = (step % spe) * cfg.batch_size
            idx = order[pos : pos + cfg.batch_size]
            jobs = [(items[i], (cfg.seed, 3, step, j), cfg, scene_cfg) for j, i in enumerate(idx)]
            prepared = list(pool.map(_prepare, jobs)) if pool else [_prepare(j) for j in jobs]
            images = np.stack([p[0] for p in prepared])
            texts = [p[1] for p in prepared]
            lr = lr_at(step, schedule)
            loss, _ = compute_loss(model, images, texts, cfg, _rng(cfg.seed, 4, step) if cfg.dropout else None)
            value = float(loss.data)
            if not np.isfinite(value):
                if out is not None:
                    save_checkpoint(out / "last_good.bin", model, config_text)
                raise TrainingAborted(f"non-finite loss at step {step}")
            for p in model.params.values():
                p.zero_grad()
            backward(loss)
            lamb_step(model.params, state, lr, policy, tau_floor=cfg.tau_floor)
            tau = float(model.temperature.data)
            if step % cfg.log_every == 0 or step == cfg.total_iters - 1:
                result.log.append((step, lr, value, tau))
            if out is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"step_{step + 1:06d}.bin", model, config_text)
            if callback is not None:
                callback(step, model)
    finally:
        if pool:
            pool.shutdown()
    for p in model.params.values():
        p.zero_grad()
    if out is not None:
        save_checkpoint(out / "final.bin", model, config_text)
        (out / "train_log.tsv").write_text(result.log_text(), encoding="utf-8")
    return result


def load_model(path) -> tuple[TrainConfig, DualEncoder]:
    """Rebuild a model from a checkpoint; shape disagreements raise :class:`ConfigError`."""
    cfg_text, vocab, arrays = read_checkpoint(path)
    cfg = parse_config(cfg_text)
    model = DualEncoder.create(cfg.image_config(), cfg.text_config(len(vocab)), vocab, _rng(cfg.seed, 1), cfg.tau_init)
    if set(arrays) != set(model.params):
        raise ConfigError("checkpoint tensors do not match the configured model")
    for name, p in model.params.items():
        if arrays[name].shape != p.data.shape:
            raise ConfigError(f"{name}: checkpoint shape {arrays[name].shape} vs configured {p.data.shape}")
        p.data = np.array(arrays[name], dtype=np.float64)
    return cfg, model
