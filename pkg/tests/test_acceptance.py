"""Acceptance criteria, one test per criterion.

Each test records a ``CRITERION <n>: PASS|FAIL ...`` line and then asserts, so
a miss fails the run. The lines are collected in an "acceptance criteria"
block of the terminal summary (and also appear inline under ``pytest -s``).
Criteria 5-7 train real models; they share the trained seed-0 models through
a module-level cache, so run the file as a whole.
"""

from __future__ import annotations

import sys
import time

import numpy as np

from filigrain import tensor as T
from filigrain.cli import main as cli_main
from filigrain.config import TrainConfig, format_config
from filigrain.encoders import (EncodedFeatures, ImageEncoderConfig, TextEncoderConfig)
from filigrain.evaluation import alignment_export
from filigrain.experiments import alignment_probe, heldout_gallery, heldout_retrieval
from filigrain.late_interaction import EfficiencyConfig, SimilarityPair, batch_similarity, image_to_text_sim
from filigrain.model import DualEncoder
from filigrain.objective import image_to_text_loss, text_to_image_loss, total_loss
from filigrain.optim import DecayPolicy, LambState, ScheduleConfig, lamb_step, lr_at, peak_lr
from filigrain.prompts import PromptGrid, ensemble_similarity, expand_grid
from filigrain.synth import generate_dataset
from filigrain.tensor import Tensor, backward, no_grad
from filigrain.tokenizer import build_vocab
from filigrain.training import train

from oracles import batch_scores

RESULTS: list[str] = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS.append(line)
    print("\n" + line, file=sys.__stdout__, flush=True)


# ---------------------------------------------------------------------------
# 1. oracle equivalence
# ---------------------------------------------------------------------------


def _random_features(rng, n_max, d, modality):
    n = int(rng.integers(1, n_max + 1))
    pad = int(rng.integers(0, n_max - n + 1))
    x = rng.normal(size=(n + pad, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    valid = np.r_[np.ones(n, bool), np.zeros(pad, bool)]
    special = np.zeros(n + pad, bool)
    if n > 1 and rng.random() < 0.5:
        special[0] = True  # a [CLS]/[BOS]-like row that must be skipped
    return EncodedFeatures(Tensor(x), valid, special, modality, 0)


def test_criterion_1_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        b = int(rng.integers(1, 5))
        d = int(rng.integers(1, 33))
        imgs = [_random_features(rng, 16, d, "image") for _ in range(b)]
        txts = [_random_features(rng, 16, d, "text") for _ in range(b)]
        pair = batch_similarity(imgs, txts)
        rows = lambda f: f.tokens.data[f.candidates()].tolist()
        oi, ot = batch_scores([rows(f) for f in imgs], [rows(f) for f in txts])
        worst = max(worst, np.abs(pair.s_I.data - oi).max(), np.abs(pair.s_T.data - ot).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 10
    report(1, ok, f"max |kernel - triple loop| = {worst:.2e} (tol 1e-12) over 200 instances in {elapsed:.1f}s (< 10s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. gradient fidelity
# ---------------------------------------------------------------------------


def _rel_err(a, n):
    # |a - n| / max(|a|, |n|, 1e-7): the floor keeps near-zero coordinates from dividing by noise
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-7)


def test_criterion_2_gradient_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    texts = ["a red square.", "a blue circle and green cross."]
    vocab = build_vocab(texts)
    icfg = ImageEncoderConfig(image_size=16, patch_size=8, layers=2, width=8, heads=2, embed_dim=8)
    tcfg = TextEncoderConfig(vocab_size=len(vocab), max_len=10, layers=2, width=8, heads=2, embed_dim=8)
    model = DualEncoder.create(icfg, tcfg, vocab, rng, tau_init=0.5)
    for p in model.params.values():  # move off the symmetric initialisation
        p.data = p.data + rng.normal(scale=0.3, size=p.data.shape)
    model.temperature.data = np.array(0.5)
    images = rng.random((2, 16, 16, 3))

    def loss_fn():
        pair = batch_similarity(model.encode_images(images), model.encode_texts(texts))
        return total_loss(pair, model.temperature)

    loss = loss_fn()
    backward(loss)
    errs = []
    for name, p in model.params.items():
        num = T.numerical_grad(lambda: float(loss_fn().data), p, h=1e-5)
        errs.append(_rel_err(p.grad.reshape(-1), num.reshape(-1)))
    errs = np.concatenate(errs)
    elapsed = time.perf_counter() - t0
    frac = float(np.mean(errs <= 1e-4))
    ok = frac >= 0.99 and errs.max() <= 1e-3 and elapsed < 300
    report(2, ok, f"{errs.size} coordinates over {len(model.params)} tensors incl. temperature: "
                  f"{100 * frac:.2f}% with rel-err <= 1e-4 (need >= 99%), max {errs.max():.2e} (<= 1e-3), "
                  f"{elapsed:.0f}s (< 300s)")
    assert ok


# ---------------------------------------------------------------------------
# 3. padding invariance
# ---------------------------------------------------------------------------


def _pad_text(f: EncodedFeatures, extra: int, rng) -> EncodedFeatures:
    d = f.tokens.shape[-1]
    rows = np.concatenate([f.tokens.data, rng.normal(size=(extra, d))])
    return EncodedFeatures(Tensor(rows), np.r_[f.valid_mask, np.zeros(extra, bool)],
                           np.r_[f.special_mask, np.zeros(extra, bool)], f.modality, f.global_index)


def test_criterion_3_padding_invariance():
    rng = np.random.default_rng(11)
    cfg = TrainConfig(steps=200)
    items = generate_dataset(3, 40, cfg.scene_config())
    vocab = build_vocab([c for _, cs in items for c in cs.candidates])
    model = DualEncoder.create(cfg.image_config(), cfg.text_config(len(vocab)), vocab, rng)
    effs = [EfficiencyConfig(), EfficiencyConfig(0.25, "half", shard_size=2)]
    checked = 0
    for trial in range(10):
        idx = rng.choice(len(items), size=4, replace=False)
        with no_grad():
            batch_i = model.encode_images(np.stack([items[i][0].image for i in idx]))
            batch_t = model.encode_texts([items[i][1].canonical for i in idx])
        imgs = [batch_i[k] for k in range(4)]
        # trim each text to its valid rows first, then append 1-8 padded rows
        txts = [EncodedFeatures(batch_t.tokens[k][: int(batch_t.valid_mask[k].sum())],
                                batch_t.valid_mask[k][: int(batch_t.valid_mask[k].sum())],
                                batch_t.special_mask[k][: int(batch_t.valid_mask[k].sum())], "text",
                                batch_t.global_index[k]) for k in range(4)]
        padded = [_pad_text(t, int(rng.integers(1, 9)), rng) for t in txts]
        for eff in effs:
            a, b = batch_similarity(imgs, txts, eff), batch_similarity(imgs, padded, eff)
            assert np.array_equal(a.s_I.data, b.s_I.data) and np.array_equal(a.s_T.data, b.s_T.data)
            tau = Tensor(0.07)
            assert total_loss(a, tau).data == total_loss(b, tau).data
            checked += 1
        for k in range(4):
            s1, al1 = image_to_text_sim(imgs[k], txts[k])
            s2, al2 = image_to_text_sim(imgs[k], padded[k])
            assert s1 == s2 and np.array_equal(al1, al2)
            m1 = alignment_export(imgs[k], txts[k], [1])
            m2 = alignment_export(imgs[k], padded[k], [1])
            assert np.array_equal(m1.predicted, m2.predicted)
    report(3, True, f"{checked} padded batches (full and efficient pipelines): scores, losses and alignments "
                    "bit-identical")


# ---------------------------------------------------------------------------
# 4. loss values
# ---------------------------------------------------------------------------


def test_criterion_4_loss_values():
    diag = Tensor(np.eye(2))
    total = total_loss(SimilarityPair(diag, diag), 1.0).item()
    one = total_loss(SimilarityPair(Tensor([[0.3]]), Tensor([[0.3]])), Tensor(0.07)).item()
    uni = text_to_image_loss(Tensor(np.zeros((2, 2))), 1.0).item()
    uni_i = image_to_text_loss(Tensor(np.zeros((2, 2))), 1.0).item()
    ok = abs(total - 0.313262) <= 1e-6 and one == 0.0 and abs(uni - 0.693147) <= 1e-6 and abs(uni_i - 0.693147) <= 1e-6
    report(4, ok, f"diagonal b=2 total {total:.7f} (0.313262 +- 1e-6); b=1 total {one!r} (exactly 0); "
                  f"uniform b=2 direction loss {uni:.7f} (0.693147 +- 1e-6)")
    assert ok


# ---------------------------------------------------------------------------
# 5-7. trained-model experiments
# ---------------------------------------------------------------------------

SEEDS = (0, 1, 2, 3, 4)
TRAINED: dict = {}


def _trained(seed: int, mode: str, **eff):
    key = (seed, mode, tuple(sorted(eff.items())))
    if key not in TRAINED:
        cfg = TrainConfig(seed=seed, mode=mode, **eff)
        TRAINED[key] = (cfg, train(cfg).model)
    return TRAINED[key]


def test_criterion_5_ablation_ordering():
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        cfg, fm = _trained(seed, "filip")
        gallery = heldout_gallery(cfg)
        f = heldout_retrieval(fm, cfg, gallery).t2i[1]
        gcfg, gm = _trained(seed, "global-baseline")
        g = heldout_retrieval(gm, gcfg, gallery).t2i[1]
        rows.append((seed, f, g, len(gallery)))
    elapsed = time.perf_counter() - t0
    wins = sum(f > g for _, f, g, _ in rows)
    margin = 100 * float(np.mean([f - g for _, f, g, _ in rows]))
    ok = wins >= 4 and margin >= 5 and elapsed < 1800
    detail = ", ".join(f"seed {s}: {100 * f:.1f} vs {100 * g:.1f} (n={n})" for s, f, g, n in rows)
    report(5, ok, f"held-out t2i R@1 filip vs global-baseline: {detail}; wins {wins}/5 (>= 4), "
                  f"mean margin {margin:+.1f} pts (>= +5), {TrainConfig().total_iters} steps/run, "
                  f"{elapsed / 60:.1f} min (< 30)")
    assert ok


def test_criterion_6_alignment_quality():
    cfg, fm = _trained(0, "filip")
    gcfg, gm = _trained(0, "global-baseline")
    t0 = time.perf_counter()
    f = alignment_probe(fm, cfg, 200)
    g = alignment_probe(gm, gcfg, 200)
    elapsed = time.perf_counter() - t0
    ok = f.hit_rate >= 3 * f.chance and f.hit_rate >= g.hit_rate and elapsed < 120
    report(6, ok, f"filip hit rate {f.hit_rate:.3f} vs 3 x chance {3 * f.chance:.3f} "
                  f"(|span|/valid_len = {f.chance:.3f}); global-baseline {g.hit_rate:.3f}; 200 held-out "
                  f"single-object scenes, {elapsed:.0f}s (< 120s)")
    assert ok


def test_criterion_7_efficiency_fidelity():
    cfg, full = _trained(0, "filip")
    ecfg, eff = _trained(0, "filip", selection_ratio=0.25, comm_precision="half")
    # (a) instrumented dot-product counts on a real training-sized batch
    items = generate_dataset(0, ecfg.batch_size, ecfg.scene_config())
    with no_grad():
        imgs = eff.encode_images(np.stack([s.image for s, _ in items]))
        txts = eff.encode_texts([c.canonical for _, c in items])
    stats = batch_similarity(imgs, txts, ecfg.efficiency()).stats
    frac = (stats["pairs_selection"] + stats["pairs_scored"]) / stats["pairs_full"]
    # (b) held-out retrieval, both evaluated with all tokens
    gallery = heldout_gallery(cfg)
    r_full = heldout_retrieval(full, cfg, gallery).t2i[1]
    r_eff = heldout_retrieval(eff, ecfg, gallery).t2i[1]
    drop = 100 * (r_full - r_eff)
    ok_a, ok_b = frac <= 0.30, drop <= 5
    report(7, ok_a and ok_b,
           f"(a) {'PASS' if ok_a else 'FAIL'} dot products per step = {100 * frac:.1f}% of full "
           f"(selection {stats['pairs_selection']} + scoring {stats['pairs_scored']} of {stats['pairs_full']}; "
           f"<= 30%); (b) {'PASS' if ok_b else 'FAIL'} held-out t2i R@1 {100 * r_full:.1f} full vs "
           f"{100 * r_eff:.1f} efficient, drop {drop:.1f} pts (<= 5)")
    assert ok_a and ok_b


# ---------------------------------------------------------------------------
# 8. prompt ensembling
# ---------------------------------------------------------------------------


def test_criterion_8_prompt_ensembling():
    rng = np.random.default_rng(5)

    def f(n, m):
        x = rng.normal(size=(n, 8))
        return EncodedFeatures(Tensor(x / np.linalg.norm(x, axis=1, keepdims=True)), np.ones(n, bool),
                               np.zeros(n, bool), m, 0)

    identity = perm = True
    for _ in range(50):
        img = f(5, "image")
        t = f(4, "text")
        identity &= ensemble_similarity(img, [t]) == image_to_text_sim(img, t)[0]
        texts = [f(int(rng.integers(1, 6)), "text") for _ in range(6)]
        ref = ensemble_similarity(img, texts)
        for _ in range(20):
            order = rng.permutation(6)
            perm &= ensemble_similarity(img, [texts[i] for i in order]) == ref
    grid = PromptGrid(tuple(f"p{i}" for i in range(5)), ("",), tuple(f"s{i}" for i in range(6)))
    count = len(expand_grid(grid, "balloon"))
    ok = identity and perm and count == 30
    report(8, ok, f"C=1 identity exact: {identity}; permutation invariance exact over 1000 orderings: {perm}; "
                  f"5 x 1 x 6 grid -> {count} prompts (30)")
    assert ok


# ---------------------------------------------------------------------------
# 9. optimizer and schedule
# ---------------------------------------------------------------------------


def test_criterion_9_optimizer_schedule():
    # quadratic 0.5 * ||w - w*||^2 in 10 dims, peak rate 0.05 with the warmup + cosine schedule
    # "reaches within 5000 steps": the first step with ||w - w*|| <= 1e-6, per seed
    first_hits = []
    for seed in range(5):
        r = np.random.default_rng(seed)
        target = r.normal(size=10)
        p = {"w": Tensor(r.normal(size=10))}
        st = LambState()
        sched = ScheduleConfig(0.05, 512, 10, 5000)
        hit = None
        for s in range(5000):
            lamb_step(p, st, lr_at(s, sched), grads={"w": p["w"].data - target})
            if hit is None and np.linalg.norm(p["w"].data - target) <= 1e-6:
                hit = s + 1
        first_hits.append(hit)
    reached = all(h is not None for h in first_hits)
    pk = peak_lr(6e-3, 8192)
    # decay exclusion: zero gradients, lambda > 0, 100 steps
    r = np.random.default_rng(9)
    names = ["img.blocks.0.attn.qkv.bias", "img.ln_pre.gain", "txt.ln_final.bias", "txt.tok_emb", "txt.pos_emb",
             "temperature", "img.patch_proj.weight"]
    params = {n: Tensor(r.normal(size=(4, 4)) if n != "temperature" else np.array(0.07)) for n in names}
    before = {n: t.data.copy() for n, t in params.items()}
    st = LambState()
    for _ in range(100):
        lamb_step(params, st, 0.01, DecayPolicy(0.05), grads={n: np.zeros_like(t.data) for n, t in params.items()})
    excl = all(np.array_equal(params[n].data, before[n]) for n in names[:-1])
    decayed = np.linalg.norm(params[names[-1]].data) < np.linalg.norm(before[names[-1]])
    cfg = ScheduleConfig(6e-3, 8192, 3000, 100_000)
    cont = abs(lr_at(cfg.warmup_iters - 1, cfg) - cfg.peak) <= 1e-12 and abs(lr_at(cfg.warmup_iters, cfg) - cfg.peak) <= 1e-12
    ok = reached and abs(pk - 2.4e-2) <= 1e-12 and excl and decayed and cont
    report(9, ok, f"LAMB quadratic reaches ||w - w*|| <= 1e-6 at steps {first_hits} (5 seeds, <= 5000); "
                  f"peak_lr(6e-3, 8192) = {pk!r}; exclusions bit-invariant: {excl}, decayed weight shrinks: "
                  f"{decayed}; warmup boundary within 1e-12 of peak: {cont}")
    assert ok


# ---------------------------------------------------------------------------
# 10. determinism
# ---------------------------------------------------------------------------


def test_criterion_10_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv("FILIGRAIN_THREADS", "1")
    cfg = TrainConfig(train_size=256, steps=40, warmup_iters=5, checkpoint_every=20)
    path = tmp_path / "toy.cfg"
    path.write_text(format_config(cfg))
    for run in ("a", "b"):
        assert cli_main(["train", "--config", str(path), "--out", str(tmp_path / run)]) == 0
    files = ["final.bin", "step_000020.bin", "train_log.tsv"]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    report(10, same, f"two single-thread `train` runs: {', '.join(files)} byte-identical: {same}")
    assert same
