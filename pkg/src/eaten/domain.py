"""Vocabulary, entity schema, samples and decoder state."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

EOS = "<EOS>"
WARMUP = "<WARMUP>"


class VocabularyError(ValueError):
    pass


class CapacityError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class CharVocab:
    """Character <-> index map. Index 0 is EOS, index 1 is WARMUP, then ``chars``."""

    def __init__(self, chars: Sequence[str] | str):
        chars = list(chars)
        for c in chars:
            if len(c) != 1:
                raise VocabularyError(f"vocabulary entries must be single characters, got {c!r}")
            if not c.isprintable():
                raise VocabularyError(f"non-printable character {c!r} in alphabet")
        if len(set(chars)) != len(chars):
            dupes = sorted({c for c in chars if chars.count(c) > 1})
            raise VocabularyError(f"duplicate characters in alphabet: {dupes}")
        self.chars = chars
        self.eos_id = 0
        self.warmup_id = 1
        self._tokens = [EOS, WARMUP] + chars
        self._index = {c: i + 2 for i, c in enumerate(chars)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, CharVocab) and other.chars == self.chars

    def __repr__(self) -> str:
        return f"CharVocab({''.join(self.chars)!r})"

    @property
    def alphabet(self) -> str:
        return "".join(self.chars)

    def token(self, i: int) -> str:
        return self._tokens[i]

    def index(self, ch: str) -> int:
        try:
            return self._index[ch]
        except KeyError:
            raise VocabularyError(f"character {ch!r} not in vocabulary") from None

    def encode(self, s: str) -> list[int]:
        return [self.index(c) for c in s]

    def decode(self, ids: Sequence[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < 2 or i >= len(self._tokens):
                raise VocabularyError(f"index {i} is not a printable character id")
            out.append(self._tokens[i])
        return "".join(out)

    def check_index(self, i: int) -> None:
        if not 0 <= int(i) < len(self._tokens):
            raise VocabularyError(f"index {i} outside vocabulary of size {len(self)}")


@dataclass(frozen=True)
class DecoderSpec:
    entities: tuple[str, ...]
    max_steps: int


class EntitySchema:
    """Ordered decoders, each owning one or more entity names and a step budget T_m."""

    def __init__(self, decoders: Sequence[tuple[Sequence[str], int]]):
        specs = []
        for names, steps in decoders:
            names = tuple(names)
            if not names:
                raise SchemaError("every decoder must own at least one entity")
            if int(steps) < 1:
                raise SchemaError(f"decoder {names} has non-positive max_steps {steps}")
            specs.append(DecoderSpec(names, int(steps)))
        if not specs:
            raise SchemaError("schema needs at least one decoder")
        flat = [n for d in specs for n in d.entities]
        if len(set(flat)) != len(flat):
            raise SchemaError(f"entity names must be unique, got {flat}")
        self.decoders: tuple[DecoderSpec, ...] = tuple(specs)

    @property
    def M(self) -> int:
        return len(self.decoders)

    @property
    def entity_names(self) -> list[str]:
        return [n for d in self.decoders for n in d.entities]

    @property
    def I(self) -> int:
        return len(self.entity_names)

    @property
    def steps(self) -> tuple[int, ...]:
        return tuple(d.max_steps for d in self.decoders)

    def to_dict(self) -> list[dict]:
        return [{"entities": list(d.entities), "max_steps": d.max_steps} for d in self.decoders]

    @classmethod
    def from_dict(cls, items: Sequence[Mapping]) -> "EntitySchema":
        return cls([(d["entities"], d["max_steps"]) for d in items])

    def __eq__(self, other) -> bool:
        return isinstance(other, EntitySchema) and other.decoders == self.decoders

    def __repr__(self) -> str:
        return f"EntitySchema({self.to_dict()})"


def train_ticket_schema() -> EntitySchema:
    """Decoder layout used for train tickets: 5 decoders over 8 entities."""
    return EntitySchema([
        (["TCN"], 14),
        (["SS", "TAN", "DS"], 20),
        (["DT"], 14),
        (["TR", "SC"], 12),
        (["NM"], 6),
    ])


def passport_schema() -> EntitySchema:
    return EntitySchema([
        (["PN"], 25),
        (["NAME"], 5),
        (["GENDER", "BIRTH_DATE"], 15),
        (["BIRTH_PLACE"], 35),
        (["ISSUE_PLACE", "EXPIRY_DATE"], 35),
    ])


def business_card_schema() -> EntitySchema:
    return EntitySchema([
        (["TEL"], 21),
        (["POSTCODE"], 13),
        (["MOBILE"], 21),
        (["URL"], 21),
        (["EMAIL"], 21),
        (["FAX"], 21),
        (["ADDRESS"], 32),
        (["NAME", "TITLE"], 10),
        (["COMPANY"], 21),
    ])


@dataclass
class Sample:
    image: np.ndarray
    targets: dict[str, str]
    meta: dict = field(default_factory=dict)

    def validate(self, schema: EntitySchema, vocab: CharVocab) -> None:
        known = set(schema.entity_names)
        for name, text in self.targets.items():
            if name not in known:
                raise SchemaError(f"target entity {name!r} is not in the schema")
            for c in text:
                vocab.index(c)


@dataclass
class DecoderState:
    carry: np.ndarray
    hidden: np.ndarray

    def copy(self) -> "DecoderState":
        return DecoderState(self.carry.copy(), self.hidden.copy())


def encode_targets(sample: Sample, schema: EntitySchema, vocab: CharVocab) -> list[list[int]]:
    """Per-decoder index sequences: entities joined by EOS, padded with EOS to T_m."""
    out = []
    for m, dec in enumerate(schema.decoders):
        seq: list[int] = []
        for name in dec.entities:
            seq.extend(vocab.encode(sample.targets.get(name, "")))
            seq.append(vocab.eos_id)
        if len(seq) > dec.max_steps:
            lengths = {n: len(sample.targets.get(n, "")) for n in dec.entities}
            raise CapacityError(
                f"decoder {m} {list(dec.entities)} needs {len(seq)} steps "
                f"(entity lengths {lengths} plus one EOS each) but max_steps is {dec.max_steps}"
            )
        seq.extend([vocab.eos_id] * (dec.max_steps - len(seq)))
        out.append(seq)
    return out


def split_on_eos(indices: Sequence[int], n_entities: int, vocab: CharVocab) -> list[str]:
    """Cut a decoded index sequence at EOS into ``n_entities`` strings.

    Missing segments are empty; anything after the last wanted segment is
    ignored. WARMUP ids are dropped.
    """
    if n_entities < 1:
        raise ValueError("n_entities must be >= 1")
    parts: list[str] = []
    cur: list[str] = []
    for i in indices:
        i = int(i)
        if i == vocab.eos_id:
            parts.append("".join(cur))
            cur = []
            if len(parts) == n_entities:
                break
        elif i != vocab.warmup_id:
            cur.append(vocab.token(i))
    else:
        if cur:
            parts.append("".join(cur))
    parts = parts[:n_entities]
    return parts + [""] * (n_entities - len(parts))
