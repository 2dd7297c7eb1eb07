"""Desk-scale scenario presets: ticket-like fixed layout, passport-like template, card-like flexible."""
from __future__ import annotations

from dataclasses import dataclass

from ..domain import CharVocab, EntitySchema
from .render import ScenarioSpec, SlotSpec
from .transforms import TransformSpec


@dataclass
class Scenario:
    spec: ScenarioSpec
    schema: EntitySchema
    transform: TransformSpec

    @property
    def vocab(self) -> CharVocab:
        return CharVocab(self.spec.alphabet())


def _row(i: int) -> int:
    """Top pixel of text line ``i`` on the default 8-pixel line grid."""
    return 1 + 8 * i


def ticket(seed: int = 0, correlated: bool = False) -> Scenario:
    """64x64 ticket with eight entities read by five decoders.

    Grouping follows the train-ticket decoder layout: TCN | SS TAN DS | DT |
    TR SC | NM. With ``correlated`` the train number repeats the last two
    characters of the ticket number and the name repeats the seat class
    letter, so neighbouring decoders see shared substrings.
    """
    slots = [
        SlotSpec("TCN", pattern="UD{4,5}", anchor=(_row(1), 1)),
        SlotSpec("SS", pattern="U{2,3}", anchor=(_row(2), 1)),
        SlotSpec("DS", pattern="U{2,3}", anchor=(_row(2), 33)),
        SlotSpec("TAN", pattern="UD{2,3}", anchor=(_row(3), 1)),
        SlotSpec("DT", pattern="DD-DD", anchor=(_row(4), 1)),
        SlotSpec("TR", pattern="D{3,4}", anchor=(_row(5), 1)),
        SlotSpec("SC", pattern="U{1,2}D", anchor=(_row(5), 40)),
        SlotSpec("NM", pattern="U{2,5}", anchor=(_row(6), 1)),
    ]
    if correlated:
        slots[3] = SlotSpec("TAN", pattern="U{1,2}", anchor=(_row(3), 1), shared_from="TCN", shared_len=2)
        slots[7] = SlotSpec("NM", pattern="U{2,4}", anchor=(_row(6), 1), shared_from="SC", shared_len=1)
    spec = ScenarioSpec("ticket", "fixed", 64, 64, slots, seed=seed)
    schema = EntitySchema([
        (["TCN"], 7),
        (["SS", "TAN", "DS"], 13),
        (["DT"], 6),
        (["TR", "SC"], 9),
        (["NM"], 6),
    ])
    return Scenario(spec, schema, TransformSpec())


def passport(seed: int = 0) -> Scenario:
    """64x64 single-template document, five decoders over seven entities."""
    slots = [
        SlotSpec("PN", pattern="UD{6}", anchor=(_row(0), 1)),
        SlotSpec("NAME", pattern="U{2,6}", anchor=(_row(1), 1)),
        SlotSpec("GENDER", words=("M", "F"), anchor=(_row(2), 1), closed=True),
        SlotSpec("BIRTH_DATE", pattern="DD-DD", anchor=(_row(2), 17)),
        SlotSpec("BIRTH_PLACE", pattern="U{3,6}", anchor=(_row(3), 1)),
        SlotSpec("ISSUE_PLACE", pattern="U{2,4}", anchor=(_row(4), 1)),
        SlotSpec("EXPIRY_DATE", pattern="DD-DD", anchor=(_row(5), 1)),
    ]
    spec = ScenarioSpec("passport", "template_set", 64, 64, slots, n_templates=1, seed=seed)
    schema = EntitySchema([
        (["PN"], 8),
        (["NAME"], 7),
        (["GENDER", "BIRTH_DATE"], 8),
        (["BIRTH_PLACE"], 7),
        (["ISSUE_PLACE", "EXPIRY_DATE"], 12),
    ])
    return Scenario(spec, schema, TransformSpec())


def card(seed: int = 0, presence: float = 0.7) -> Scenario:
    """96x64 card: each entity optional, so rows and offsets vary from card to card.

    Fields keep their reading order, absent fields leave no gap, and the block
    starts on a random row with a random horizontal offset of up to one glyph
    cell. Every value is preceded by a one-glyph key symbol that never occurs
    in a value, so the reader can tell digit fields apart.
    """
    slots = [
        SlotSpec("TEL", pattern="D{5,7}", key="#", presence=presence),
        SlotSpec("POSTCODE", pattern="D{4}", key="@", presence=presence),
        SlotSpec("MOBILE", pattern="D{6,8}", key="&", presence=presence),
        SlotSpec("NAME", pattern="U{3,6}", key="*", presence=presence),
        SlotSpec("TITLE", pattern="U{2,3}", key="%", presence=presence),
        SlotSpec("COMPANY", pattern="U{2,4}D", key="+", presence=presence),
    ]
    spec = ScenarioSpec("card", "flexible", 64, 96, slots, column_step=8, max_column_offset=8,
                        shuffle_rows=False, seed=seed)
    schema = EntitySchema([
        (["TEL"], 8),
        (["POSTCODE"], 5),
        (["MOBILE"], 9),
        (["NAME", "TITLE"], 11),
        (["COMPANY"], 6),
    ])
    return Scenario(spec, schema, TransformSpec())


PRESETS = {"ticket": ticket, "passport": passport, "card": card}
