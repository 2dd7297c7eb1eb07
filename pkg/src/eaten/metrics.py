"""Entity-level exact-match metrics: mEA, mEP, mER, mEF."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import SchemaError


@dataclass
class EvalReport:
    mEA: float
    mEP: float
    mER: float
    mEF: float
    I: int
    I_p: int
    I_g: int
    n_samples: int = 0
    mEA_macro: float = 0.0
    per_entity: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def table(self) -> str:
        lines = [f"mEA {self.mEA:.4f}  mEP {self.mEP:.4f}  mER {self.mER:.4f}  mEF {self.mEF:.4f}",
                 f"samples {self.n_samples}  I {self.I}  I_p {self.I_p}  I_g {self.I_g}  mEA(per-sample mean) {self.mEA_macro:.4f}",
                 f"{'entity':<16}accuracy"]
        lines += [f"{name:<16}{acc:.4f}" for name, acc in self.per_entity.items()]
        return "\n".join(lines)


def _check_keys(preds: Mapping[str, str], golds: Mapping[str, str], names) -> list[str]:
    names = list(golds) if names is None else list(names)
    for side, d in (("prediction", preds), ("gold", golds)):
        missing = [n for n in names if n not in d]
        extra = [k for k in d if k not in names]
        if missing or extra:
            raise SchemaError(f"{side} keys do not match the entity list: missing {missing}, unexpected {extra}")
    return names


def mea(preds: Mapping[str, str], golds: Mapping[str, str], I: int | None = None) -> float:
    names = _check_keys(preds, golds, None)
    I = len(names) if I is None else I
    if I != len(names):
        raise SchemaError(f"I = {I} but {len(names)} entities were given")
    return sum(preds[n] == golds[n] for n in names) / I


def pr_counts(preds: Mapping[str, str], golds: Mapping[str, str]) -> tuple[int, int, int]:
    """(hits, I_p, I_g); a hit needs equal non-empty strings, so both-null never counts."""
    names = _check_keys(preds, golds, None)
    hits = sum(1 for n in names if preds[n] and preds[n] == golds[n])
    return hits, sum(1 for n in names if preds[n]), sum(1 for n in names if golds[n])


def prf(hits: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = hits / n_pred if n_pred else 0.0
    r = hits / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def mep_mer_mef(preds: Mapping[str, str], golds: Mapping[str, str]) -> tuple[float, float, float]:
    return prf(*pr_counts(preds, golds))


def score_pairs(preds: Sequence[Mapping[str, str]], golds: Sequence[Mapping[str, str]],
                names: Sequence[str] | None = None) -> EvalReport:
    """Dataset-level report, micro-averaged over every (sample, entity) pair."""
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions for {len(golds)} gold records")
    if names is None:
        names = list(golds[0]) if golds else []
    correct = dict.fromkeys(names, 0)
    hits = n_p = n_g = 0
    per_sample = []
    for p, g in zip(preds, golds):
        _check_keys(p, g, names)
        ok = 0
        for n in names:
            if p[n] == g[n]:
                correct[n] += 1
                ok += 1
        per_sample.append(ok / len(names))
        h, a, b = pr_counts(p, g)
        hits, n_p, n_g = hits + h, n_p + a, n_g + b
    total = len(golds) * len(names)
    mep, mer, mef = prf(hits, n_p, n_g)
    return EvalReport(
        mEA=sum(correct.values()) / total if total else 0.0,
        mEP=mep, mER=mer, mEF=mef,
        I=len(names), I_p=n_p, I_g=n_g, n_samples=len(golds),
        mEA_macro=float(np.mean(per_sample)) if per_sample else 0.0,
        per_entity={n: correct[n] / len(golds) if golds else 0.0 for n in names},
    )


def evaluate(model, samples, batch_size: int = 64) -> EvalReport:
    preds = model.infer_batched([s.image for s in samples], batch_size)
    names = model.schema.entity_names
    golds = [{n: s.targets.get(n, "") for n in names} for s in samples]
    return score_pairs(preds, golds, names)
