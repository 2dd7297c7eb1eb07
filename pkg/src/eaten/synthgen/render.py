"""Scenario description, procedural glyphs and layout rendering."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import parse_pattern, pattern_bounds

LAYOUTS = ("fixed", "template_set", "flexible")


class LayoutError(ValueError):
    pass


@dataclass
class SlotSpec:
    name: str
    charset: str = ""
    max_len: int = 0
    min_len: int = 1
    pattern: str = ""
    words: tuple[str, ...] = ()
    anchor: tuple[int, int] | None = None  # (row, col) of the first glyph's top-left
    presence: float = 1.0
    key: str = ""  # label drawn before the value, never part of the target
    shared_from: str = ""  # entity whose trailing characters prefix this one
    shared_len: int = 0
    closed: bool = False  # closed vocabulary (e.g. gender): exempt from train/test disjointness

    def __post_init__(self):
        self.words = tuple(self.words)
        if self.anchor is not None:
            self.anchor = tuple(self.anchor)
        if self.pattern:
            lo, hi = pattern_bounds(self.pattern)
            if not self.charset:
                chars = set()
                for choices, _, _ in parse_pattern(self.pattern):
                    if choices != "?":
                        chars.update(choices)
                self.charset = "".join(sorted(chars))
            self.min_len = self.min_len if self.min_len > 1 else lo
            self.max_len = max(self.max_len, hi)
        if self.words:
            chars = set("".join(self.words))
            self.charset = self.charset or "".join(sorted(chars))
            self.max_len = max(self.max_len, max(len(w) for w in self.words))
        self.max_len += self.shared_len
        if not 0.0 <= self.presence <= 1.0:
            raise LayoutError(f"slot {self.name}: presence must be in [0, 1]")
        if self.max_len < 1:
            raise LayoutError(f"slot {self.name}: max_len must be >= 1")


@dataclass
class ScenarioSpec:
    name: str
    layout_kind: str
    height: int
    width: int
    slots: list[SlotSpec]
    glyph_h: int = 6
    glyph_w: int = 6
    gap: int = 2  # glyph_w + gap = 8 puts one glyph per cell of a stride-8 feature map
    line_pitch: int = 8
    margin: int = 1
    glyph_distance: int = 8  # minimum Hamming distance between any two glyph bitmaps
    column_step: int = 1  # flexible layouts: horizontal offsets are multiples of this
    max_column_offset: int | None = None  # flexible layouts: cap on the offset from the left margin
    shuffle_rows: bool = True  # flexible layouts: False keeps slot order and packs present slots from a random row
    n_templates: int = 1
    seed: int = 0

    def __post_init__(self):
        self.slots = [s if isinstance(s, SlotSpec) else SlotSpec(**s) for s in self.slots]
        if self.layout_kind not in LAYOUTS:
            raise LayoutError(f"layout_kind must be one of {LAYOUTS}, got {self.layout_kind!r}")
        if self.column_step < 1:
            raise LayoutError("column_step must be >= 1")
        if self.max_column_offset is not None and self.max_column_offset < 0:
            raise LayoutError("max_column_offset must be >= 0")
        names = [s.name for s in self.slots]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate slot names {names}")
        for s in self.slots:
            if self.layout_kind != "flexible":
                if s.anchor is None:
                    raise LayoutError(f"slot {s.name} needs an anchor in a {self.layout_kind} layout")
                if s.presence != 1.0 and self.layout_kind == "fixed":
                    raise LayoutError(f"slot {s.name}: fixed layouts require presence 1.0")
                r, c = s.anchor
                w = self.pitch * (len(s.key) + s.max_len)
                if r < 0 or c < 0 or r + self.glyph_h > self.height or c + w > self.width:
                    raise LayoutError(f"slot {s.name} at {s.anchor} with {s.max_len} glyphs leaves the {self.height}x{self.width} image")
            if s.shared_from and s.shared_from not in names:
                raise LayoutError(f"slot {s.name} shares from unknown slot {s.shared_from}")
        if self.layout_kind == "flexible":
            if len(self.slots) > self.n_rows:
                raise LayoutError(f"{len(self.slots)} slots need more than the {self.n_rows} available rows")
            for s in self.slots:
                if self.pitch * (len(s.key) + s.max_len) + 2 * self.margin > self.width:
                    raise LayoutError(f"slot {s.name} too wide for a {self.width}-pixel row")

    @property
    def pitch(self) -> int:
        return self.glyph_w + self.gap

    @property
    def n_rows(self) -> int:
        return (self.height - 2 * self.margin - self.glyph_h) // self.line_pitch + 1

    @property
    def entity_names(self) -> list[str]:
        return [s.name for s in self.slots]

    def slot(self, name: str) -> SlotSpec:
        for s in self.slots:
            if s.name == name:
                return s
        raise KeyError(name)

    def alphabet(self) -> str:
        chars = set()
        for s in self.slots:
            chars.update(s.charset)
            for w in s.words:
                chars.update(w)
        return "".join(sorted(chars))

    def glyph_chars(self) -> str:
        chars = set(self.alphabet())
        for s in self.slots:
            chars.update(s.key)
        return "".join(sorted(chars))

    def atlas(self) -> "GlyphAtlas":
        return GlyphAtlas(self.glyph_chars(), self.glyph_h, self.glyph_w, self.seed, self.glyph_distance)

    def to_dict(self) -> dict:
        d = asdict(self)
        for s in d["slots"]:
            s["words"] = list(s["words"])
            if s["anchor"] is not None:
                s["anchor"] = list(s["anchor"])
        return d


class GlyphAtlas:
    """Fixed random bitmap per character, pairwise at least ``min_distance`` pixels apart."""

    def __init__(self, chars: str, h: int, w: int, seed: int = 0, min_distance: int = 3):
        self.h, self.w = h, w
        self.bitmaps: dict[str, np.ndarray] = {}
        accepted: list[np.ndarray] = []
        for c in sorted(set(chars)):
            rng = np.random.default_rng([seed, ord(c)])
            for _ in range(10_000):
                bm = rng.random((h, w)) < 0.5
                if bm.sum() < 3 or not bm.any(axis=0).all():
                    continue
                if all(np.count_nonzero(bm != o) >= min_distance for o in accepted):
                    break
            else:
                raise LayoutError(f"cannot fit {len(set(chars))} distinct {h}x{w} glyphs at distance {min_distance}")
            accepted.append(bm)
            self.bitmaps[c] = bm.astype(np.float64)

    def __getitem__(self, c: str) -> np.ndarray:
        try:
            return self.bitmaps[c]
        except KeyError:
            raise LayoutError(f"no glyph for character {c!r}") from None


def _template(spec: ScenarioSpec, index: int, atlas: GlyphAtlas) -> np.ndarray:
    """Procedural template background: paper tone with a few ruling lines."""
    rng = np.random.default_rng([spec.seed, 7919, index])
    bg = np.full((spec.height, spec.width), 0.85 + 0.1 * rng.random())
    for _ in range(int(rng.integers(1, 4))):
        r = int(rng.integers(0, spec.height))
        bg[r, :] -= 0.15
    return np.clip(bg, 0.0, 1.0)


def draw_text(img: np.ndarray, text: str, row: int, col: int, atlas: GlyphAtlas, ink: float, pitch: int) -> None:
    for i, ch in enumerate(text):
        c0 = col + i * pitch
        bm = atlas[ch]
        region = img[row:row + atlas.h, c0:c0 + atlas.w]
        if region.shape != bm.shape:
            raise LayoutError(f"text {text!r} at ({row},{col}) runs off the image")
        region[bm > 0] = ink


def background(spec: ScenarioSpec, rng: np.random.Generator, atlas: GlyphAtlas) -> tuple[np.ndarray, dict]:
    if spec.layout_kind == "fixed":
        return np.full((spec.height, spec.width), 0.9), {"background": "blank"}
    if spec.layout_kind == "template_set":
        idx = int(rng.integers(spec.n_templates))
        return _template(spec, idx, atlas), {"background": f"template{idx}"}
    level = float(rng.uniform(0.6, 1.0))
    return np.full((spec.height, spec.width), level), {"background": "plain", "level": level}


def place_slots(spec: ScenarioSpec, texts: Mapping[str, str], rng: np.random.Generator) -> dict[str, tuple[int, int]]:
    """Top-left (row, col) for every slot: anchors, or random rows for flexible layouts.

    With shuffle_rows the slots land on random distinct rows. Otherwise they keep
    their order, absent slots take no row, and the block starts at a random row.
    """
    if spec.layout_kind != "flexible":
        return {s.name: s.anchor for s in spec.slots}
    if spec.shuffle_rows:
        rows = rng.permutation(spec.n_rows)[:len(spec.slots)]
    else:
        present = np.array([bool(texts.get(s.name)) for s in spec.slots])
        start = int(rng.integers(spec.n_rows - int(present.sum()) + 1))
        rows = start + np.cumsum(present) - present
    out = {}
    for s, r in zip(spec.slots, rows):
        span = spec.pitch * (len(s.key) + s.max_len)
        room = spec.width - 2 * spec.margin - span
        if spec.max_column_offset is not None:
            room = min(room, spec.max_column_offset)
        n_cols = room // spec.column_step + 1
        col = spec.margin + spec.column_step * int(rng.integers(n_cols))
        out[s.name] = (spec.margin + int(r) * spec.line_pitch, col)
    return out


def render(spec: ScenarioSpec, texts: Mapping[str, str], rng: np.random.Generator,
           atlas: GlyphAtlas | None = None) -> tuple[np.ndarray, dict]:
    """Clean image with every entity drawn at its slot, plus a placement record."""
    atlas = atlas or spec.atlas()
    img, meta = background(spec, rng, atlas)
    positions = place_slots(spec, texts, rng)
    ink = float(max(img.mean() - 0.7, 0.0))
    for s in spec.slots:
        text = texts.get(s.name, "")
        if len(text) > s.max_len:
            raise LayoutError(f"slot {s.name}: {len(text)} characters exceed max_len {s.max_len}")
        for c in text:
            if c not in atlas.bitmaps:
                raise LayoutError(f"slot {s.name}: character {c!r} has no glyph")
        if not text:
            continue
        r, c = positions[s.name]
        if s.key:
            draw_text(img, s.key, r, c, atlas, ink, spec.pitch)
        draw_text(img, text, r, c + len(s.key) * spec.pitch, atlas, ink, spec.pitch)
    meta["positions"] = {k: list(v) for k, v in positions.items()}
    meta["ink"] = ink
    return img, meta
