"""Synthetic compositional scenes: coloured shapes on a cell grid, with captions.

Objects sit in whole grid cells, so with the default geometry (32 px image,
4 x 4 cells, 8 px patches) every object covers exactly one encoder patch and
word-patch alignment has exact ground truth. Selected (colour, shape)
combinations are withheld from the training split and appear only in the
test split.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import serialization
from .encoders import patchify

COLORS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}
SHAPES = ("square", "circle", "triangle", "cross")
DEFAULT_HOLDOUT = (("red", "triangle"), ("green", "cross"), ("blue", "square"), ("yellow", "circle"))
AUG_OPS = ("identity", "hflip", "rot90", "brightness", "translate")


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 32
    grid: int = 4
    min_objects: int = 1
    max_objects: int = 3
    colors: tuple[str, ...] = tuple(COLORS)
    shapes: tuple[str, ...] = SHAPES
    holdout: tuple[tuple[str, str], ...] = DEFAULT_HOLDOUT

    def __post_init__(self):
        if self.image_size % self.grid:
            raise ValueError("image_size must be divisible by grid")
        if not 1 <= self.min_objects <= self.max_objects <= self.grid**2:
            raise ValueError("object counts must satisfy 1 <= min <= max <= cells")
        for c, s in self.holdout:
            if c not in self.colors or s not in self.shapes:
                raise ValueError(f"holdout combo {(c, s)} uses unknown attribute")
        if len(self.train_combos) < self.max_objects:
            raise ValueError("fewer allowed (colour, shape) combos than objects per scene")
        if not self.holdout:
            raise ValueError("at least one held-out combo is required for a test split")

    @property
    def cell(self) -> int:
        return self.image_size // self.grid

    @property
    def all_combos(self) -> list[tuple[str, str]]:
        return list(itertools.product(self.colors, self.shapes))

    @property
    def train_combos(self) -> list[tuple[str, str]]:
        held = set(self.holdout)
        return [c for c in self.all_combos if c not in held]


@dataclass(frozen=True)
class SceneObject:
    color: str
    shape: str
    cell: tuple[int, int]

    @property
    def words(self) -> str:
        return f"{self.color} {self.shape}"


@dataclass
class SyntheticScene:
    image: np.ndarray  # (H, W, 3) in [0, 1]
    objects: tuple[SceneObject, ...]
    pixel_masks: np.ndarray  # (k, H, W) bool

    def object_mask(self, patch_size: int) -> np.ndarray:
        """(k, n_patches) flags: patch overlaps object k."""
        return patchify(self.pixel_masks[..., None].astype(np.float64), patch_size).max(axis=-1) > 0


@dataclass(frozen=True)
class CaptionSet:
    canonical: str
    paraphrases: tuple[str, str]

    @property
    def candidates(self) -> tuple[str, str, str]:
        return (self.canonical, *self.paraphrases)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def shape_footprint(shape: str, size: int) -> np.ndarray:
    """Boolean (size, size) stencil of a shape inside one cell, 1/8 margin."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    c = size / 2
    half = size * 3 / 8
    if shape == "square":
        return (np.abs(yy - c) <= half) & (np.abs(xx - c) <= half)
    if shape == "circle":
        return (yy - c) ** 2 + (xx - c) ** 2 <= half**2
    if shape == "triangle":
        top, bottom = c - half, c + half
        frac = (yy - top) / (bottom - top)
        return (yy >= top) & (yy <= bottom) & (np.abs(xx - c) <= frac * half)
    if shape == "cross":
        arm = size / 8
        inside = (np.abs(yy - c) <= half) & (np.abs(xx - c) <= half)
        return inside & ((np.abs(yy - c) <= arm) | (np.abs(xx - c) <= arm))
    raise ValueError(f"unknown shape {shape!r}")


def render(objects, cfg: SceneConfig) -> SyntheticScene:
    h = cfg.image_size
    img = np.zeros((h, h, 3))
    masks = np.zeros((len(objects), h, h), dtype=bool)
    for k, obj in enumerate(objects):
        r, c = obj.cell
        stencil = shape_footprint(obj.shape, cfg.cell)
        sl = (slice(r * cfg.cell, (r + 1) * cfg.cell), slice(c * cfg.cell, (c + 1) * cfg.cell))
        masks[k][sl] = stencil
        img[sl][stencil] = COLORS[obj.color]
    return SyntheticScene(img, tuple(objects), masks)


def _listing(objs) -> str:
    words = [o.words for o in objs]
    if len(words) == 1:
        return f"a {words[0]}"
    return "a " + ", ".join(words[:-1]) + f" and {words[-1]}"


def make_captions(objects) -> CaptionSet:
    """Canonical caption plus two meaning-preserving rewrites (function words and order only)."""
    objs = list(objects)
    canonical = f"{_listing(objs)}."
    return CaptionSet(canonical, (f"a photo of {_listing(objs)}.", f"{_listing(objs[::-1])} in this image."))


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

_SPLIT_CODE = {"train": 0, "test": 1}


def sample_rng(seed: int, index: int, split: str = "train") -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_CODE[split], index]))


def generate_scene(rng: np.random.Generator, cfg: SceneConfig, split: str = "train") -> tuple[SyntheticScene, CaptionSet]:
    k = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    cells = rng.choice(cfg.grid**2, size=k, replace=False)
    if split == "train":
        pool = cfg.train_combos
        combos = [pool[i] for i in rng.choice(len(pool), size=k, replace=False)]
    else:
        first = cfg.holdout[int(rng.integers(len(cfg.holdout)))]
        rest = [c for c in cfg.all_combos if c != first]
        combos = [first] + [rest[i] for i in rng.choice(len(rest), size=k - 1, replace=False)]
        combos = [combos[i] for i in rng.permutation(k)]
    objects = [SceneObject(col, shp, divmod(int(cell), cfg.grid)) for (col, shp), cell in zip(combos, cells)]
    return render(objects, cfg), make_captions(objects)


def generate_dataset(seed: int, size: int, config: SceneConfig | None = None, split: str = "train"):
    """Deterministic list of ``(scene, captions)``.

    The train split never contains a held-out combo; every test scene
    contains at least one.
    """
    cfg = config or SceneConfig()
    if size <= 0:
        raise ValueError("size must be positive")
    if split not in _SPLIT_CODE:
        raise ValueError(f"unknown split {split!r}")
    return [generate_scene(sample_rng(seed, i, split), cfg, split) for i in range(size)]


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def _hflip(x: np.ndarray, spatial: tuple[int, int]) -> np.ndarray:
    return np.flip(x, axis=spatial[1])


def _rot90(x: np.ndarray, spatial: tuple[int, int]) -> np.ndarray:
    return np.rot90(x, k=1, axes=spatial)


def _shift(x: np.ndarray, spatial: tuple[int, int], dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(x)
    h, w = x.shape[spatial[0]], x.shape[spatial[1]]
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    src[spatial[0]] = slice(max(0, -dy), h - max(0, dy))
    dst[spatial[0]] = slice(max(0, dy), h - max(0, -dy))
    src[spatial[1]] = slice(max(0, -dx), w - max(0, dx))
    dst[spatial[1]] = slice(max(0, dx), w - max(0, -dx))
    out[tuple(dst)] = x[tuple(src)]
    return out


def augment_image(img: np.ndarray, seed, op: str | None = None, cell: int = 8) -> np.ndarray:
    """One random label-preserving op from identity / h-flip / 90-degree rotation /
    brightness jitter (+-0.2, clamped) / one-cell translation."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    img = np.asarray(img, dtype=np.float64)
    op = op or AUG_OPS[int(rng.integers(len(AUG_OPS)))]
    if op == "identity":
        return img.copy()
    if op == "hflip":
        return _hflip(img, (0, 1)).copy()
    if op == "rot90":
        return _rot90(img, (0, 1)).copy()
    if op == "brightness":
        return np.clip(img + rng.uniform(-0.2, 0.2), 0.0, 1.0)
    if op == "translate":
        dy, dx = [(-1, 0), (1, 0), (0, -1), (0, 1)][int(rng.integers(4))]
        return _shift(img, (0, 1), dy * cell, dx * cell)
    raise ValueError(f"unknown augmentation {op!r}")


def augment_scene(scene: SyntheticScene, rng: np.random.Generator, cfg: SceneConfig | None = None,
                  op: str | None = None) -> SyntheticScene:
    """Augment image and per-object masks consistently; translations only move
    by a cell in a direction that keeps every object inside the frame."""
    cfg = cfg or SceneConfig()
    op = op or AUG_OPS[int(rng.integers(len(AUG_OPS)))]
    img, masks, objs = scene.image, scene.pixel_masks, scene.objects
    g = cfg.grid
    if op == "identity":
        return replace(scene, image=img.copy(), pixel_masks=masks.copy())
    if op == "hflip":
        objs = tuple(replace(o, cell=(o.cell[0], g - 1 - o.cell[1])) for o in objs)
        return SyntheticScene(_hflip(img, (0, 1)).copy(), objs, _hflip(masks, (1, 2)).copy())
    if op == "rot90":
        # np.rot90 with k=1 maps pixel (r, c) to (W - 1 - c, r)
        objs = tuple(replace(o, cell=(g - 1 - o.cell[1], o.cell[0])) for o in objs)
        return SyntheticScene(_rot90(img, (0, 1)).copy(), objs, _rot90(masks, (1, 2)).copy())
    if op == "brightness":
        return SyntheticScene(np.clip(img + rng.uniform(-0.2, 0.2), 0.0, 1.0), objs, masks.copy())
    if op == "translate":
        moves = [(dy, dx) for dy, dx in [(-1, 0), (1, 0), (0, -1), (0, 1)]
                 if all(0 <= o.cell[0] + dy < g and 0 <= o.cell[1] + dx < g for o in objs)]
        if not moves:
            return replace(scene, image=img.copy(), pixel_masks=masks.copy())
        dy, dx = moves[int(rng.integers(len(moves)))]
        objs = tuple(replace(o, cell=(o.cell[0] + dy, o.cell[1] + dx)) for o in objs)
        c = cfg.cell
        return SyntheticScene(_shift(img, (0, 1), dy * c, dx * c), objs, _shift(masks, (1, 2), dy * c, dx * c))
    raise ValueError(f"unknown augmentation {op!r}")


def sample_caption(captions: CaptionSet, seed) -> str:
    """Uniform pick among the canonical caption and its two rewrites."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return captions.candidates[int(rng.integers(3))]


# ---------------------------------------------------------------------------
# on-disk manifests
# ---------------------------------------------------------------------------


def _annotation(objs) -> str:
    return ";".join(f"{o.color}:{o.shape}:{o.cell[0]}:{o.cell[1]}" for o in objs)


def _parse_annotation(text: str) -> list[SceneObject]:
    out = []
    for item in filter(None, text.split(";")):
        color, shape, r, c = item.split(":")
        out.append(SceneObject(color, shape, (int(r), int(c))))
    return out


def save_dataset(directory, items, cfg: SceneConfig | None = None, ppm: bool = False) -> Path:
    """Write ``manifest.tsv`` plus one tensor file per image under ``directory``.

    Manifest lines: image file, three captions, annotations
    (``color:shape:row:col`` joined by ``;``), tab-separated.
    """
    cfg = cfg or SceneConfig()
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (scene, caps) in enumerate(items):
        rel = f"images/{i:06d}.bin"
        serialization.save(d / rel, {"image": scene.image}, header=f"image_size={cfg.image_size} grid={cfg.grid}")
        if ppm:
            serialization.write_ppm(d / f"images/{i:06d}.ppm", scene.image)
        lines.append("\t".join([rel, *caps.candidates, _annotation(scene.objects)]))
    (d / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return d / "manifest.tsv"


def load_dataset(manifest, cfg: SceneConfig | None = None):
    """Read a manifest back into ``(scene, captions)`` pairs.

    Object masks are re-rendered from the annotations.
    """
    cfg = cfg or SceneConfig()
    manifest = Path(manifest)
    out = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"manifest line needs 5 tab-separated fields: {line!r}")
        rel, c0, c1, c2, ann = fields
        _, tensors = serialization.load(manifest.parent / rel)
        objs = _parse_annotation(ann)
        masks = render(objs, cfg).pixel_masks if objs else np.zeros((0, cfg.image_size, cfg.image_size), bool)
        out.append((SyntheticScene(tensors["image"], tuple(objs), masks), CaptionSet(c0, (c1, c2))))
    return out
