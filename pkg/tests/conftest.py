import numpy as np
import pytest

from eaten.backbone import BackboneConfig
from eaten.domain import CharVocab, EntitySchema, Sample
from eaten.model import EatenModel, ModelConfig


def tiny_config(**kw) -> ModelConfig:
    base = dict(image_size=(16, 16), backbone=BackboneConfig([(4, 2), (8, 2)]), n_h=8, n_a=6, d_c=5,
                position_channels=False)
    base.update(kw)
    return ModelConfig(**base)


def tiny_setup(seed=0, **kw):
    vocab = CharVocab("abcdefgh")  # 8 characters + EOS + WARMUP = 10
    schema = EntitySchema([(["x"], 3), (["y", "z"], 4)])
    model = EatenModel(schema, vocab, tiny_config(**kw), seed=seed)
    return model, schema, vocab


def random_samples(n, rng, size=(16, 16)):
    out = []
    for _ in range(n):
        x = "".join(rng.choice(list("abcdefgh"), rng.integers(0, 3)))
        y = "".join(rng.choice(list("abcdefgh"), rng.integers(0, 2)))
        z = "".join(rng.choice(list("abcdefgh"), rng.integers(0, 2)))
        out.append(Sample(rng.random(size), {"x": x, "y": y, "z": z}))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def record(cid: str, ok: bool, detail: str) -> bool:
        line = f"{cid} {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[cid] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
            terminalreporter.write_line(_ACCEPTANCE[cid])
