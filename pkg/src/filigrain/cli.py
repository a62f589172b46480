"""Command-line driver: ``filigrain [--seed N] {make-data,train,eval,visualize} ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import serialization
from .config import ConfigError, TrainConfig, load_config
from .evaluation import alignment_export, retrieval_eval, write_alignment, zero_shot_predict
from .prompts import expand_grid, generic_grid, load_grid
from .synth import generate_dataset, load_dataset, save_dataset
from .tokenizer import token_spans
from .training import TrainingAborted, load_model, train

log = logging.getLogger("filigrain")


def _read_image(path: Path) -> np.ndarray:
    if path.suffix.lower() == ".ppm":
        return serialization.read_ppm(path)
    _, tensors = serialization.load(path)
    if len(tensors) != 1:
        raise ValueError(f"{path} holds {len(tensors)} tensors; expected one image")
    return next(iter(tensors.values()))


def cmd_make_data(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    seed = cfg.seed if args.seed is None else args.seed
    scfg = cfg.scene_config()
    if args.single:
        scfg = cfg.scene_config(min_objects=1, max_objects=1)
    items = generate_dataset(seed, args.size, scfg, args.split)
    manifest = save_dataset(args.out, items, scfg, ppm=args.ppm)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out or Path("runs") / Path(args.config).stem)
    try:
        result = train(cfg, out)
    except TrainingAborted as exc:
        log.error("%s; last good parameters in %s", exc, out / "last_good.bin")
        return 3
    step, lr, loss, tau = result.log[-1]
    print(f"{out / 'final.bin'}\tstep={step}\tloss={loss!r}\ttau={tau!r}")
    return 0


def _zeroshot_report(model, cfg: TrainConfig, items, field: str, grid) -> str:
    def label(scene):
        if len(scene.objects) != 1:
            raise ValueError("zero-shot evaluation needs single-object scenes")
        o = scene.objects[0]
        return {"combo": o.words, "color": o.color, "shape": o.shape}[field]

    truth = [label(s) for s, _ in items]
    classes = sorted(set(truth))
    prompts, owner = [], []
    for c, name in enumerate(classes):
        rendered = expand_grid(grid, name, dedupe=True)
        prompts += rendered
        owner += [c] * len(rendered)
    imgs = model.embed_images(np.stack([s.image for s, _ in items]))
    pred, _ = zero_shot_predict(imgs, model.embed_texts(prompts), owner, len(classes), cfg.include_special)
    target = np.array([classes.index(t) for t in truth])
    lines = [f"accuracy\t{float(np.mean(pred == target))!r}", f"classes\t{len(classes)}", f"samples\t{len(items)}"]
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    cfg, model = load_model(args.ckpt)
    items = load_dataset(args.data, cfg.scene_config())
    if not items:
        raise ValueError(f"{args.data} lists no samples")
    shape = items[0][0].image.shape
    if shape != (cfg.image_size, cfg.image_size, 3):
        raise ConfigError(f"data images are {shape}; the checkpoint expects {cfg.image_size}x{cfg.image_size}x3")
    if args.task == "zeroshot":
        grid = load_grid(args.templates) if args.templates else generic_grid()
        text = _zeroshot_report(model, cfg, items, args.label_field, grid)
    else:
        imgs = model.embed_images(np.stack([s.image for s, _ in items]))
        txts = model.embed_texts([c.canonical for _, c in items])
        score = args.score or ("global" if cfg.mode == "global-baseline" else "directional")
        rep = retrieval_eval(imgs, txts, list(range(len(items))), score=score, include_special=cfg.include_special)
        text = rep.format(per_query=args.per_query)
    out = Path(args.out or Path(args.ckpt).with_suffix(f".{args.task}.tsv"))
    out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_visualize(args) -> int:
    cfg, model = load_model(args.ckpt)
    image = _read_image(Path(args.image))
    if image.shape != (cfg.image_size, cfg.image_size, 3):
        raise ConfigError(f"image is {image.shape}; the checkpoint expects {cfg.image_size}x{cfg.image_size}x3")
    span = token_spans(args.prompt, args.label)
    img = model.embed_images(image[None])[0]
    txt = model.embed_texts([args.prompt])[0]
    amap = alignment_export(img, txt, span, cfg.include_special)
    txt_path, ppm_path = write_alignment(args.out, image, amap)
    sys.stdout.write(amap.render_text(color=sys.stdout.isatty()))
    print(f"label indices {sorted(span)}; wrote {txt_path} and {ppm_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="filigrain", description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="override the configured seed")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("make-data", help="write a synthetic manifest")
    d.add_argument("--out", required=True)
    d.add_argument("--size", type=int, default=200)
    d.add_argument("--split", choices=("train", "test"), default="test")
    d.add_argument("--config")
    d.add_argument("--single", action="store_true", help="one object per scene (zero-shot data)")
    d.add_argument("--ppm", action="store_true", help="also write PPM copies of the images")
    d.set_defaults(func=cmd_make_data)

    t = sub.add_parser("train", help="train from a key = value config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="run directory (default runs/<config name>)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="zero-shot accuracy or retrieval recall")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--task", choices=("zeroshot", "retrieval"), required=True)
    e.add_argument("--data", required=True, help="manifest.tsv")
    e.add_argument("--out", help="report path (default <ckpt>.<task>.tsv)")
    e.add_argument("--templates", help="prompt grid file (zeroshot)")
    e.add_argument("--label-field", choices=("combo", "color", "shape"), default="combo")
    e.add_argument("--score", choices=("directional", "mean", "global"))
    e.add_argument("--per-query", action="store_true")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("visualize", help="word-patch alignment grid and overlay")
    v.add_argument("--ckpt", required=True)
    v.add_argument("--image", required=True, help=".ppm or single-tensor .bin")
    v.add_argument("--prompt", required=True)
    v.add_argument("--label", required=True)
    v.add_argument("--out", default="alignment", help="output prefix")
    v.set_defaults(func=cmd_visualize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except (ValueError, LookupError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
