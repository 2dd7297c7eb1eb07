"""Dataset generation with train/test disjointness, plus the on-disk format.

Layout of a dataset directory::

    manifest.json           counts, seeds, scenario, schema, digests, "hash"
    labels_train.jsonl      one record per sample: id, image, targets, meta
    labels_test.jsonl
    images/<id>.pgm         binary PGM (P5): b"P5\\n<width> <height>\\n255\\n" + uint8 rows

Pixel value v in the file maps to intensity v / 255.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np

from ..domain import EntitySchema, Sample
from .corpus import sample_corpus
from .render import GlyphAtlas, ScenarioSpec, render
from .transforms import TransformSpec, transform_and_noise

DATASET_VERSION = 1
SPLITS = ("train", "test")
MAX_REJECTIONS = 2000


class GenerationError(RuntimeError):
    pass


# -------------------------------------------------------------------- raster

def write_pgm(path: str | Path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(image))


def encode_pgm(image: np.ndarray) -> bytes:
    h, w = image.shape
    return b"P5\n%d %d\n255\n" % (w, h) + to_uint8(image).tobytes()


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize(image: np.ndarray) -> np.ndarray:
    return to_uint8(image).astype(np.float64) / 255.0


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(fields[1]), int(fields[2])
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0


# -------------------------------------------------------------------- texts

def sample_texts(spec: ScenarioSpec, rng: np.random.Generator,
                 forbidden: dict[str, set[str]] | None = None) -> dict[str, str]:
    """Draw one string per slot, honouring presence, shared prefixes and forbidden sets."""
    texts: dict[str, str] = {}
    for slot in spec.slots:
        if rng.random() >= slot.presence:
            texts[slot.name] = ""
            continue
        prefix = ""
        if slot.shared_from:
            prefix = texts.get(slot.shared_from, "")[-slot.shared_len:] if slot.shared_len else ""
        banned = forbidden.get(slot.name, set()) if forbidden and not slot.closed else set()
        for _ in range(MAX_REJECTIONS):
            text = prefix + sample_corpus(slot, rng)
            text = text[:slot.max_len]
            if text not in banned:
                break
        else:
            raise GenerationError(
                f"could not draw a test string for {slot.name!r} outside the {len(banned)} training strings; "
                "enlarge its charset, length range or word list")
        texts[slot.name] = text
    return texts


def _sample_rng(seed: int, split: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, split, index, stream])


def make_sample(spec: ScenarioSpec, t: TransformSpec, texts: dict[str, str], rng: np.random.Generator,
                atlas: GlyphAtlas, seed_record) -> Sample:
    clean, render_meta = render(spec, texts, rng, atlas)
    final, tmeta = transform_and_noise(clean, t, rng)
    meta = {"seed": seed_record, "render": render_meta, "transform": tmeta}
    return Sample(quantize(final), dict(texts), meta)


def generate_samples(spec: ScenarioSpec, t: TransformSpec, n_train: int, n_test: int, seed: int,
                     atlas: GlyphAtlas | None = None, jobs: int = 1) -> dict[str, list[Sample]]:
    """In-memory dataset; test strings never repeat a training string of the same entity.

    Texts are drawn sequentially (test rejection depends on the training
    strings); rendering fans out over ``jobs`` processes and is merged in
    index order, so the result does not depend on ``jobs``.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    atlas = atlas or spec.atlas()
    seen: dict[str, set[str]] = {s.name: set() for s in spec.slots}
    work = []
    for split, n in ((0, n_train), (1, n_test)):
        for i in range(n):
            texts = sample_texts(spec, _sample_rng(seed, split, i, 0), seen if split == 1 else None)
            if split == 0:
                for k, v in texts.items():
                    if v:
                        seen[k].add(v)
            work.append((split, i, texts))
    job = partial(_render_one, spec, t, atlas, seed)
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            samples = list(pool.map(job, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        samples = [job(w) for w in work]
    return {"train": samples[:n_train], "test": samples[n_train:]}


def _render_one(spec, t, atlas, seed, item) -> Sample:
    split, i, texts = item
    return make_sample(spec, t, texts, _sample_rng(seed, split, i, 1), atlas, [seed, split, i])


def check_disjoint(train: Sequence[Sample], test: Sequence[Sample],
                   exempt: Sequence[str] = ()) -> dict[str, set[str]]:
    """Per-entity non-empty strings shared by both splits (empty dict values when disjoint)."""
    names = {k for s in list(train) + list(test) for k in s.targets} - set(exempt)
    overlap = {}
    for n in sorted(names):
        a = {s.targets.get(n, "") for s in train} - {""}
        b = {s.targets.get(n, "") for s in test} - {""}
        overlap[n] = a & b
    return overlap


# -------------------------------------------------------------------- disk

def _record(sid: str, s: Sample) -> dict:
    return {"id": sid, "image": f"images/{sid}.pgm", "targets": s.targets, "meta": s.meta}


def dataset_digest(splits: dict[str, list[Sample]]) -> dict[str, str]:
    digests = {}
    for name in SPLITS:
        lab = hashlib.sha256()
        img = hashlib.sha256()
        for i, s in enumerate(splits[name]):
            sid = f"{name}-{i:06d}"
            lab.update((json.dumps(_record(sid, s), sort_keys=True) + "\n").encode())
            img.update(encode_pgm(s.image))
        digests[f"labels_{name}.jsonl"] = lab.hexdigest()
        digests[f"images_{name}"] = img.hexdigest()
    return digests


def build_manifest(spec: ScenarioSpec, t: TransformSpec, splits: dict[str, list[Sample]], seed: int,
                   schema: EntitySchema | None = None) -> dict:
    manifest = {
        "version": DATASET_VERSION,
        "seed": seed,
        "counts": {k: len(v) for k, v in splits.items()},
        "scenario": spec.to_dict(),
        "transform": t.to_dict(),
        "schema": schema.to_dict() if schema is not None else None,
        "alphabet": spec.alphabet(),
        "digests": dataset_digest(splits),
    }
    manifest["hash"] = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()
    return manifest


def generate_dataset(spec: ScenarioSpec, t: TransformSpec, n_train: int, n_test: int, seed: int,
                     out_dir: str | Path | None = None, schema: EntitySchema | None = None, jobs: int = 1):
    """Generate both splits and, with ``out_dir``, persist them. Returns (manifest, splits)."""
    splits = generate_samples(spec, t, n_train, n_test, seed, jobs=jobs)
    overlap = check_disjoint(splits["train"], splits["test"], [s.name for s in spec.slots if s.closed])
    if any(overlap.values()):
        raise GenerationError(f"train/test overlap: { {k: sorted(v) for k, v in overlap.items() if v} }")
    manifest = build_manifest(spec, t, splits, seed, schema)
    if out_dir is not None:
        write_dataset(out_dir, manifest, splits)
    return manifest, splits


def write_dataset(out_dir: str | Path, manifest: dict, splits: dict[str, list[Sample]]) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        with open(out / f"labels_{name}.jsonl", "w") as fh:
            for i, s in enumerate(splits[name]):
                sid = f"{name}-{i:06d}"
                write_pgm(out / "images" / f"{sid}.pgm", s.image)
                fh.write(json.dumps(_record(sid, s), sort_keys=True) + "\n")
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_dataset(path: str | Path) -> tuple[dict, dict[str, list[Sample]]]:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    splits = {}
    for name in SPLITS:
        samples = []
        with open(root / f"labels_{name}.jsonl") as fh:
            for line in fh:
                rec = json.loads(line)
                samples.append(Sample(read_pgm(root / rec["image"]), rec["targets"], rec["meta"]))
        splits[name] = samples
    return manifest, splits
