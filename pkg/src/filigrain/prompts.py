"""Prompt templates of the form ``[prefix] {label}, [description]. [suffix].``
and ensembling by mean token-wise similarity."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .encoders import EncodedFeatures
from .late_interaction import image_to_text_sim

SECTIONS = ("prefix", "description", "suffix")


@dataclass(frozen=True)
class PromptTemplate:
    prefix: str = ""
    category_description: str = ""
    suffix: str = ""


@dataclass(frozen=True)
class PromptGrid:
    prefixes: tuple[str, ...]
    descriptions: tuple[str, ...] = ("",)
    suffixes: tuple[str, ...] = ("",)

    def __len__(self) -> int:
        return len(self.prefixes) * len(self.descriptions) * len(self.suffixes)

    def templates(self, dedupe: bool = False) -> list[PromptTemplate]:
        parts = [self.prefixes, self.descriptions, self.suffixes]
        if dedupe:
            parts = [list(dict.fromkeys(p)) for p in parts]
        return [PromptTemplate(p.strip(), d.strip(), s.strip()) for p, d, s in itertools.product(*parts)]


def _sentence_end(text: str) -> str:
    return text if text.endswith((".", "!", "?")) else text + "."


def render(t: PromptTemplate, label: str) -> str:
    label = label.strip()
    if not label:
        raise ValueError("empty label")
    head = f"{t.prefix} {label}" if t.prefix else label
    if t.category_description:
        head = f"{head}, {t.category_description}"
    out = _sentence_end(head)
    if t.suffix:
        out = f"{out} {_sentence_end(t.suffix)}"
    return out


def expand_grid(g: PromptGrid, label: str, dedupe: bool = False) -> list[str]:
    """Every template combination rendered for ``label`` (prefix-major order)."""
    if not (g.prefixes and g.descriptions and g.suffixes):
        raise ValueError("every grid component needs at least one entry (use '' for none)")
    return [render(t, label) for t in g.templates(dedupe)]


def parse_grid(text: str) -> PromptGrid:
    """Read ``[prefix]``/``[description]``/``[suffix]`` sections.

    Each line is one entry and a blank line is an empty component. Lines
    starting with ``#`` are comments.
    """
    sections: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]") and line[1:-1] in SECTIONS:
            current = line[1:-1]
            if current in sections:
                raise ValueError(f"duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            if line:
                raise ValueError(f"entry outside any section: {raw!r}")
            continue
        sections[current].append(line)
    missing = [s for s in SECTIONS if not sections.get(s)]
    if missing:
        raise ValueError(f"grid is missing entries for: {', '.join(missing)}")
    return PromptGrid(tuple(sections["prefix"]), tuple(sections["description"]), tuple(sections["suffix"]))


def format_grid(g: PromptGrid) -> str:
    lines = []
    for name, entries in zip(SECTIONS, (g.prefixes, g.descriptions, g.suffixes)):
        lines.append(f"[{name}]")
        lines.extend(entries)
    return "\n".join(lines) + "\n"


def load_grid(path) -> PromptGrid:
    return parse_grid(Path(path).read_text(encoding="utf-8"))


def generic_grid() -> PromptGrid:
    return parse_grid(resources.files("filigrain").joinpath("data/generic_grid.txt").read_text(encoding="utf-8"))


def ensemble_similarity(img: EncodedFeatures, class_texts: Sequence[EncodedFeatures], include_special: bool = False) -> float:
    """Mean of the image-to-text scores over a class's rendered templates.

    Scores are averaged, not features: token sets of different templates do
    not line up row by row.
    """
    if not class_texts:
        raise ValueError("no templates for this class")
    scores = [image_to_text_sim(img, t, include_special)[0] for t in class_texts]
    # fsum is correctly rounded, hence independent of template order
    return math.fsum(scores) / len(scores)
