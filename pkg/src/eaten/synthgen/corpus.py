"""Entity text sampling from charsets, pattern grammars and word lists."""
from __future__ import annotations

import re
import string

import numpy as np

CLASSES = {
    "D": string.digits,
    "U": string.ascii_uppercase,
    "L": string.ascii_lowercase,
}

_TOKEN = re.compile(r"(\\.|[^{\\])(\{(\d+)(?:,(\d+))?\})?")


def parse_pattern(pattern: str) -> list[tuple[str, int, int]]:
    """Split a pattern into (choices, min_repeat, max_repeat) tokens.

    ``D``/``U``/``L`` are digit/upper/lower classes, ``?`` means "any character
    of the slot charset" (resolved later), ``\\x`` is a literal ``x``, anything
    else is literal. ``{n}`` or ``{a,b}`` repeats the previous token.
    """
    out = []
    pos = 0
    while pos < len(pattern):
        m = _TOKEN.match(pattern, pos)
        if m is None:
            raise ValueError(f"bad pattern {pattern!r} at offset {pos}")
        tok = m.group(1)
        if tok.startswith("\\"):
            choices = tok[1]
        elif tok in CLASSES:
            choices = CLASSES[tok]
        else:
            choices = tok
        lo = int(m.group(3)) if m.group(3) else 1
        hi = int(m.group(4)) if m.group(4) else lo
        if hi < lo:
            raise ValueError(f"bad repeat range in {pattern!r}")
        out.append((choices, lo, hi))
        pos = m.end()
    return out


def pattern_bounds(pattern: str) -> tuple[int, int]:
    toks = parse_pattern(pattern)
    return sum(t[1] for t in toks), sum(t[2] for t in toks)


def sample_pattern(pattern: str, rng: np.random.Generator, charset: str = "") -> str:
    out = []
    for choices, lo, hi in parse_pattern(pattern):
        if choices == "?":
            choices = charset
        n = int(rng.integers(lo, hi + 1))
        out.extend(choices[int(i)] for i in rng.integers(0, len(choices), n))
    return "".join(out)


def sample_corpus(slot, rng: np.random.Generator) -> str:
    """Draw one string for ``slot``: from its word list, its pattern, or its charset."""
    if not slot.charset:
        raise ValueError(f"slot {slot.name!r} has an empty charset")
    if slot.words:
        return slot.words[int(rng.integers(len(slot.words)))]
    if slot.pattern:
        return sample_pattern(slot.pattern, rng, slot.charset)
    n = int(rng.integers(max(slot.min_len, 1), slot.max_len + 1))
    return "".join(slot.charset[int(i)] for i in rng.integers(0, len(slot.charset), n))
