"""Loss, optimizer and the epoch loop."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .domain import Sample, VocabularyError
from .metrics import evaluate
from .model import EatenModel, encode_batch
from .numerics import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr0: float = 0.04
    lr_decay: float = 0.94
    decay_every: int = 4
    momentum: float = 0.9
    weight_decay: float = 1e-5
    label_smooth_eps: float = 0.1
    grad_clip_norm: float = 2.0
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    mask_padding: bool = False
    eval_every: int = 1

    def __post_init__(self):
        for name in ("lr0", "lr_decay", "decay_every", "grad_clip_norm", "epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("momentum", "weight_decay", "label_smooth_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def smooth_targets(targets: np.ndarray, vocab_size: int, eps: float) -> np.ndarray:
    """One-hot with 1 - eps on the target and eps / (V - 1) everywhere else."""
    targets = np.asarray(targets, dtype=np.int64)
    if np.any(targets < 0) or np.any(targets >= vocab_size):
        raise VocabularyError(f"target index outside vocabulary of size {vocab_size}")
    off = eps / (vocab_size - 1) if vocab_size > 1 else 0.0
    dist = np.full(targets.shape + (vocab_size,), off)
    np.put_along_axis(dist, targets[..., None], 1.0 - eps, axis=-1)
    return dist


def loss(logits: Sequence[Tensor], targets: Sequence[np.ndarray], eps: float = 0.0,
         masks: Sequence[np.ndarray] | None = None) -> Tensor:
    """Summed smoothed cross-entropy over every decoder and step.

    With ``eps = 0`` this is the negative log-likelihood of the target
    sequences. Padding EOS positions count unless ``masks`` zeroes them.
    """
    if len(logits) != len(targets):
        raise nx.DimensionError(f"{len(logits)} logit sequences but {len(targets)} target sequences")
    terms = []
    for m, (lg, tg) in enumerate(zip(logits, targets)):
        tg = np.asarray(tg, dtype=np.int64)
        if lg.shape[:-1] != tg.shape:
            raise nx.DimensionError(f"decoder {m}: logits {lg.shape} vs targets {tg.shape}")
        dist = smooth_targets(tg, lg.shape[-1], eps)
        if masks is not None:
            dist = dist * np.asarray(masks[m], dtype=np.float64)[..., None]
        terms.append(nx.soft_cross_entropy(lg, dist))
    return nx.add_scalars(terms)


def padding_masks(targets: Sequence[np.ndarray], eos_id: int, n_entities: Sequence[int]) -> list[np.ndarray]:
    """1 up to and including each decoder's n-th EOS (the last entity terminator), 0 on the padding after it."""
    masks = []
    for tg, n in zip(targets, n_entities):
        tg = np.atleast_2d(tg)
        count = np.cumsum(tg == eos_id, axis=1)
        # position t is real if fewer than n EOS tokens precede it
        before = np.concatenate([np.zeros((tg.shape[0], 1), dtype=count.dtype), count[:, :-1]], axis=1)
        masks.append((before < n).astype(np.float64))
    return masks


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay ** (epoch // cfg.decay_every)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if norm > max_norm:
        s = max_norm / norm
        grads = {k: g * s for k, g in grads.items()}
    return grads, norm


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], velocity: dict[str, np.ndarray],
             cfg: TrainConfig, epoch: int, decayed: set[str] = frozenset()) -> float:
    """Clip, add weight decay, apply momentum in place. Returns the pre-clip gradient norm."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {k}")
    grads, norm = clip_by_global_norm(grads, cfg.grad_clip_norm)
    lr = lr_at(epoch, cfg)
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            continue
        if k in decayed and cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        v = velocity.get(k)
        v = g.copy() if v is None else cfg.momentum * v + g
        velocity[k] = v
        p.data -= lr * v
    return norm


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}


def batch_loss(model: EatenModel, samples: Sequence[Sample], cfg: TrainConfig) -> Tensor:
    """Mean over the batch of the per-sample summed loss."""
    images = np.stack([s.image for s in samples])
    targets = encode_batch(samples, model.schema, model.vocab)
    logits = model.forward_teacher_forced(images, targets)
    masks = padding_masks(targets, model.vocab.eos_id, [len(d.entities) for d in model.schema.decoders]) \
        if cfg.mask_padding else None
    total = loss(logits, targets, cfg.label_smooth_eps, masks)
    return nx.scale(total, 1.0 / len(samples))


def train(model: EatenModel, train_set: Sequence[Sample], cfg: TrainConfig,
          val_set: Sequence[Sample] | None = None, out_dir: str | Path | None = None,
          on_epoch: Callable[[dict], None] | None = None, start_epoch: int = 0,
          velocity: dict[str, np.ndarray] | None = None, time_budget: float | None = None) -> list[dict]:
    """Run the epoch loop; returns one record per epoch.

    Shuffling uses ``np.random.default_rng(cfg.seed + epoch)`` so a resumed run
    replays the same batch order. With ``out_dir`` the log is appended to
    ``train_log.jsonl`` and ``last.ckpt`` / ``best.ckpt`` are written.
    """
    if not train_set:
        raise ValueError("training set is empty")
    params = model.parameters()
    decayed = model.decayed_parameter_names()
    velocity = {} if velocity is None else velocity
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history: list[dict] = []
    best = _previous_best(out) if out is not None and start_epoch > 0 else -math.inf
    t0 = time.monotonic()
    n = len(train_set)
    for epoch in range(start_epoch, cfg.epochs):
        order = np.random.default_rng(cfg.seed + epoch).permutation(n)
        losses = []
        for step, lo in enumerate(range(0, n, cfg.batch_size)):
            batch = [train_set[i] for i in order[lo:lo + cfg.batch_size]]
            model.zero_grad()
            value = batch_loss(model, batch, cfg)
            if not math.isfinite(float(value.data)):
                raise TrainingDiverged(f"loss became {float(value.data)} at epoch {epoch} step {step}")
            value.backward()
            sgd_step(params, collect_grads(params), velocity, cfg, epoch, decayed)
            losses.append(float(value.data))
        rec = {"epoch": epoch, "step": (epoch + 1) * math.ceil(n / cfg.batch_size),
               "loss": float(np.mean(losses)), "lr": lr_at(epoch, cfg), "val_mEA": None,
               "elapsed": round(time.monotonic() - t0, 3)}
        last = epoch == cfg.epochs - 1
        if val_set and ((epoch + 1) % cfg.eval_every == 0 or last):
            rec["val_mEA"] = evaluate(model, val_set).mEA
        history.append(rec)
        log.info("epoch %d loss %.4f lr %.5f val_mEA %s", epoch, rec["loss"], rec["lr"], rec["val_mEA"])
        if out is not None:
            with open(out / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps({k: v for k, v in rec.items() if k != "elapsed"}) + "\n")
            model.save(out / "last.ckpt", extra={"epoch": epoch, "train": cfg.to_dict()})
            np.savez(out / "last.velocity.npz", **velocity)
            score = _score(rec)
            if score > best:
                best = score
                model.save(out / "best.ckpt", extra={"epoch": epoch, "train": cfg.to_dict()})
        if on_epoch is not None:
            on_epoch(rec)
        if time_budget is not None and time.monotonic() - t0 > time_budget:
            log.warning("time budget of %.0fs exhausted after epoch %d", time_budget, epoch)
            break
    return history


def _score(rec: dict) -> float:
    return rec["val_mEA"] if rec["val_mEA"] is not None else -rec["loss"]


def _previous_best(out: Path) -> float:
    path = out / "train_log.jsonl"
    if not path.exists():
        return -math.inf
    with open(path) as fh:
        return max((_score(json.loads(line)) for line in fh if line.strip()), default=-math.inf)
