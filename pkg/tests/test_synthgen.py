import dataclasses
import re

import numpy as np
import pytest

from eaten.synthgen import (GenerationError, GlyphAtlas, LayoutError, ScenarioSpec, SlotSpec, TransformSpec,
                            card, check_disjoint, generate_dataset, generate_samples, load_dataset, passport,
                            read_pgm, render, sample_corpus, ticket, transform_and_noise, write_pgm)
from eaten.synthgen.corpus import parse_pattern, pattern_bounds, sample_pattern
from eaten.synthgen.dataset import encode_pgm, quantize
from eaten.synthgen.render import place_slots


def test_pattern_grammar(rng):
    assert pattern_bounds("UD{4,5}") == (5, 6)
    assert parse_pattern("DD-DD")[2] == ("-", 1, 1)
    for _ in range(50):
        assert re.fullmatch(r"[A-Z][0-9]{4,5}", sample_pattern("UD{4,5}", rng))
        assert re.fullmatch(r"[0-9]{2}-[0-9]{2}", sample_pattern("DD-DD", rng))
    with pytest.raises(ValueError):
        parse_pattern("D{3,1}")


def test_sample_corpus_contract():
    digits = SlotSpec("N", charset="0123456789", max_len=6)
    for seed in range(100):
        s = sample_corpus(digits, np.random.default_rng(seed))
        assert re.fullmatch(r"[0-9]{1,6}", s)
    a = sample_corpus(digits, np.random.default_rng(5))
    assert a == sample_corpus(digits, np.random.default_rng(5))
    words = SlotSpec("G", words=("M", "F"))
    assert {sample_corpus(words, np.random.default_rng(i)) for i in range(30)} == {"M", "F"}


def test_glyph_atlas_injective():
    atlas = GlyphAtlas("0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ-:", 5, 4, seed=0)
    bitmaps = list(atlas.bitmaps.values())
    for i in range(len(bitmaps)):
        for j in range(i + 1, len(bitmaps)):
            assert np.count_nonzero(bitmaps[i] != bitmaps[j]) >= 3
    with pytest.raises(LayoutError):
        atlas["?"]


def test_render_absent_entity_leaves_background(rng):
    sc = card(seed=0)
    texts = {s.name: "" for s in sc.spec.slots}
    texts["NAME"] = "ABC"
    img, meta = render(sc.spec, texts, np.random.default_rng(3))
    level = meta["level"]
    r, _ = meta["positions"]["NAME"]
    outside = np.ones(img.shape[0], bool)
    outside[r:r + sc.spec.glyph_h] = False
    assert np.all(img[outside] == level)
    assert np.any(img != level)


def test_render_determinism_and_overflow():
    sc = ticket()
    texts = {s.name: "" for s in sc.spec.slots}
    texts.update(TCN="A1234", DT="12-34")
    a, _ = render(sc.spec, texts, np.random.default_rng(0))
    b, _ = render(sc.spec, texts, np.random.default_rng(0))
    assert np.array_equal(a, b)
    with pytest.raises(LayoutError):
        render(sc.spec, dict(texts, TCN="A12345678"), np.random.default_rng(0))


def test_layout_validation():
    with pytest.raises(LayoutError):
        ScenarioSpec("x", "fixed", 16, 16, [SlotSpec("A", pattern="D{9}", anchor=(0, 0))])
    with pytest.raises(LayoutError):
        ScenarioSpec("x", "fixed", 32, 32, [SlotSpec("A", pattern="D", anchor=(0, 0), presence=0.5)])
    with pytest.raises(LayoutError):
        ScenarioSpec("x", "weird", 32, 32, [])


def test_transforms_identity_and_ranges(rng):
    img = rng.random((20, 24))
    out, meta = transform_and_noise(img, TransformSpec.disabled(), rng)
    assert np.array_equal(out, img) and meta == {"rotation": 0.0, "ops": []}
    t = TransformSpec()
    for seed in range(30):
        out, meta = transform_and_noise(img, t, np.random.default_rng(seed))
        assert -5.0 <= meta["rotation"] <= 5.0
        assert out.min() >= 0.0 and out.max() <= 1.0
    a, _ = transform_and_noise(img, t, np.random.default_rng(9))
    b, _ = transform_and_noise(img, t, np.random.default_rng(9))
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        TransformSpec(rotation_deg=7)
    with pytest.raises(ValueError):
        TransformSpec(noise_prob=1.5)


def test_resize_keeps_aspect(rng):
    t = TransformSpec.disabled()
    t.out_size = (32, 32)
    out, _ = transform_and_noise(np.ones((16, 32)) * 0.5, t, rng)
    assert out.shape == (32, 32)


def test_pgm_round_trip(tmp_path, rng):
    img = quantize(rng.random((7, 5)))
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    assert encode_pgm(img)[:9] == b"P5\n5 7\n25"


def test_dataset_determinism_disjointness_and_files(tmp_path):
    sc = ticket()
    m1, s1 = generate_dataset(sc.spec, sc.transform, 100, 10, 3, tmp_path / "a", sc.schema)
    m2, _ = generate_dataset(sc.spec, sc.transform, 100, 10, 3, tmp_path / "b", sc.schema)
    assert m1["hash"] == m2["hash"]
    assert m1["counts"] == {"train": 100, "test": 10}
    m3, _ = generate_dataset(sc.spec, sc.transform, 100, 10, 4)
    assert m3["hash"] != m1["hash"]
    assert not any(check_disjoint(s1["train"], s1["test"]).values())
    manifest, loaded = load_dataset(tmp_path / "a")
    assert manifest == m1
    assert len(loaded["train"]) == 100 and len(list((tmp_path / "a" / "images").iterdir())) == 110
    for a, b in zip(s1["test"], loaded["test"]):
        assert np.array_equal(a.image, b.image) and a.targets == b.targets
    for s in s1["train"]:
        assert -5 <= s.meta["transform"]["rotation"] <= 5


def test_labels_are_the_sampled_strings():
    sc = ticket()
    d = generate_samples(sc.spec, sc.transform, 20, 5, 0)
    for s in d["train"]:
        assert re.fullmatch(r"[A-Z][0-9]{4,5}", s.targets["TCN"])
        assert re.fullmatch(r"[0-9]{2}-[0-9]{2}", s.targets["DT"])
        s.validate(sc.schema, sc.vocab)


def test_jobs_do_not_change_output():
    sc = passport()
    a = generate_samples(sc.spec, sc.transform, 12, 4, 1, jobs=1)
    b = generate_samples(sc.spec, sc.transform, 12, 4, 1, jobs=2)
    for x, y in zip(a["train"] + a["test"], b["train"] + b["test"]):
        assert np.array_equal(x.image, y.image) and x.targets == y.targets


def test_correlated_ticket_shares_substrings():
    sc = ticket(correlated=True)
    d = generate_samples(sc.spec, sc.transform, 30, 5, 0)
    for s in d["train"]:
        assert s.targets["TAN"].startswith(s.targets["TCN"][-2:])
        assert s.targets["NM"].startswith(s.targets["SC"][-1:])


def test_closed_slot_exempt_and_open_slot_exhaustion():
    sc = passport()
    d = generate_samples(sc.spec, sc.transform, 40, 10, 0)
    assert not any(check_disjoint(d["train"], d["test"], ["GENDER"]).values())
    tiny = ScenarioSpec("t", "fixed", 16, 16, [SlotSpec("A", pattern="D", anchor=(2, 2))])
    with pytest.raises(GenerationError, match="enlarge"):
        generate_samples(tiny, TransformSpec.disabled(), 200, 5, 0)


def test_card_presence_yields_absent_entities():
    sc = card(presence=0.7)
    d = generate_samples(sc.spec, sc.transform, 60, 5, 0)
    empties = sum(v == "" for s in d["train"] for v in s.targets.values())
    assert 0.15 < empties / (60 * 6) < 0.45


def test_flexible_placement_ordered_and_shuffled(rng):
    sc = card(presence=0.7)
    starts, names = set(), [s.name for s in sc.spec.slots]
    for _ in range(50):
        texts = {n: ("" if rng.random() < 0.3 else "1") for n in names}
        pos = place_slots(sc.spec, texts, rng)
        rows = [pos[n][0] for n in names if texts[n]]
        # present fields sit on consecutive lines in slot order
        assert rows == [rows[0] + i * sc.spec.line_pitch for i in range(len(rows))] if rows else True
        assert all(c in (sc.spec.margin, sc.spec.margin + 8) for _, c in pos.values())
        starts.add(rows[0] if rows else None)
    assert len(starts) > 2
    shuffled = dataclasses.replace(sc.spec, shuffle_rows=True)
    orders = set()
    for _ in range(20):
        pos = place_slots(shuffled, {n: "1" for n in names}, rng)
        rows = [pos[n][0] for n in names]
        assert len(set(rows)) == len(rows)
        orders.add(tuple(np.argsort(rows)))
    assert len(orders) > 1
