"""Backbone plus a chain of entity-aware decoders linked by state transition."""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .backbone import BackboneConfig, add_position_channels, extract_features, flatten_features, init_backbone
from .decoder import DecoderParams, StepState, decode_step, projected_features, warmup
from .domain import CharVocab, DecoderState, EntitySchema, Sample, encode_targets, split_on_eos
from .numerics import Tensor

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class ModelConfig:
    image_size: tuple[int, int] = (64, 64)  # (height, width)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    n_h: int = 64
    n_a: int = 32
    d_c: int = 32
    position_channels: bool = True
    attention_norm: str = "softmax"
    state_transition: bool = True
    share_attention: bool = False
    init_scale: float = 0.08
    invert_input: bool = True  # feed 1 - image so dark ink is the active signal
    standardize_input: bool = True  # zero mean, unit variance per image

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = BackboneConfig(**self.backbone)
        self.backbone.stages = [tuple(s) for s in self.backbone.stages]
        self.image_size = tuple(self.image_size)
        self.backbone.check_image(*self.image_size)
        if self.attention_norm not in ("softmax", "ratio"):
            raise ValueError(f"attention_norm must be softmax or ratio, got {self.attention_norm!r}")

    @property
    def feature_grid(self) -> tuple[int, int]:
        h, w, _ = self.backbone.feature_shape(*self.image_size)
        return h, w

    @property
    def context_dim(self) -> int:
        h, w, c = self.backbone.feature_shape(*self.image_size)
        return c + (h + w if self.position_channels else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["image_size"] = list(self.image_size)
        d["backbone"]["stages"] = [list(s) for s in self.backbone.stages]
        return d


def state_transition(prev: DecoderState, enabled: bool = True) -> DecoderState:
    """Initial state handed to the next decoder: a copy of ``prev``, or zeros when ablated."""
    if enabled:
        return prev.copy()
    return DecoderState(np.zeros_like(prev.carry), np.zeros_like(prev.hidden))


def _transfer(state: StepState, enabled: bool) -> StepState:
    if enabled:
        return state
    return StepState(Tensor(np.zeros(state.carry.shape)), Tensor(np.zeros(state.hidden.shape)))


class EatenModel:
    def __init__(self, schema: EntitySchema, vocab: CharVocab, config: ModelConfig | None = None,
                 seed: int = 0):
        self.schema = schema
        self.vocab = vocab
        self.config = config or ModelConfig()
        rng = np.random.default_rng(seed)
        cfg = self.config
        self.backbone = init_backbone(cfg.backbone, rng)
        c = cfg.context_dim
        shared = None
        self.decoders: list[DecoderParams] = []
        for m in range(schema.M):
            dec = DecoderParams.init(len(vocab), c, cfg.n_h, cfg.n_a, cfg.d_c, rng, cfg.init_scale,
                                     prefix=f"dec{m}", attention=shared)
            if cfg.share_attention and shared is None:
                shared = dec.attention
            self.decoders.append(dec)

    # ------------------------------------------------------------ parameters

    def parameters(self) -> dict[str, Tensor]:
        out = {f"backbone.{k}": v for k, v in self.backbone.items()}
        for m, dec in enumerate(self.decoders):
            for k, v in dec.own_tensors().items():
                out[f"dec{m}.{k}"] = v
            if self.config.share_attention and m > 0:
                continue
            prefix = "att" if self.config.share_attention else f"dec{m}.att"
            for k, v in dec.attention.tensors().items():
                out[f"{prefix}.{k}"] = v
        return out

    def decayed_parameter_names(self) -> set[str]:
        """Backbone and character-softmax projections."""
        names = set()
        for k in self.parameters():
            if k.startswith("backbone.") or k.rsplit(".", 1)[-1] in ("W_o", "W_ct2"):
                names.add(k)
        return names

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # ----------------------------------------------------------------- passes

    def features(self, images) -> Tensor:
        """Flattened feature rows (B, K, C) for a batch of images (B, h, w)."""
        images = np.asarray(images, dtype=np.float64)
        if images.shape[-2:] != self.config.image_size:
            raise nx.DimensionError(f"image extent {images.shape[-2:]} != configured {self.config.image_size}")
        if images.ndim == 2:
            images = images[None]
        if self.config.invert_input:
            images = 1.0 - images
        if self.config.standardize_input:
            # Keeps backbone activations O(1) so the attention tanh leaves its linear
            # regime; with raw [0, 1] input the scores barely depend on the query.
            mu = images.mean(axis=(-2, -1), keepdims=True)
            sd = images.std(axis=(-2, -1), keepdims=True)
            images = (images - mu) / np.maximum(sd, 1e-6)
        feat = extract_features(images, self.config.backbone, self.backbone)
        if self.config.position_channels:
            feat = add_position_channels(feat)
        return flatten_features(feat)

    def _rollout(self, flat: Tensor, feed: Callable[[int, int, np.ndarray | None], np.ndarray],
                 state_hook=None, record_attention: bool = False):
        cfg = self.config
        batch = flat.shape[0]
        all_logits: list[list[Tensor]] = []
        attn: list[list[np.ndarray]] = []
        state: StepState | None = None
        for m, (spec, dec) in enumerate(zip(self.schema.decoders, self.decoders)):
            projected = projected_features(flat, dec)
            if m == 0:
                state = warmup(flat, dec, cfg.attention_norm, projected)
            else:
                state = _transfer(state, cfg.state_transition)
                if state_hook is not None:
                    state = state_hook(m, state)
            ctx = Tensor(np.zeros((batch, cfg.context_dim)))
            prev = np.full(batch, self.vocab.warmup_id, dtype=np.int64)
            logits_m, attn_m = [], []
            for t in range(spec.max_steps):
                state, ctx, logits, weights = decode_step(prev, state, ctx, flat, dec, cfg.attention_norm, projected)
                logits_m.append(logits)
                if record_attention:
                    attn_m.append(weights.data.copy())
                prev = feed(m, t, logits.data)
            all_logits.append(logits_m)
            attn.append(attn_m)
        return all_logits, attn

    def forward_teacher_forced(self, images, targets: Sequence[np.ndarray], state_hook=None,
                               record_attention: bool = False):
        """Per-decoder logits (B, T_m, vocab) with ground-truth characters fed back.

        ``targets[m]`` is an integer array (B, T_m) as built by :func:`encode_batch`.
        ``state_hook(m, state)`` may replace the state handed to decoder m > 0.
        """
        flat = self.features(images)
        targets = [np.asarray(t, dtype=np.int64).reshape(flat.shape[0], -1) for t in targets]
        for m, (t, spec) in enumerate(zip(targets, self.schema.decoders)):
            if t.shape[1] != spec.max_steps:
                raise nx.DimensionError(f"decoder {m} targets have {t.shape[1]} steps, expected {spec.max_steps}")
        logits, attn = self._rollout(flat, lambda m, t, _: targets[m][:, t], state_hook, record_attention)
        stacked = [nx.stack(lm, axis=1) for lm in logits]
        return (stacked, attn) if record_attention else stacked

    def decode_ids(self, images) -> list[np.ndarray]:
        """Greedy fixed-length rollout; returns per-decoder predicted ids (B, T_m)."""
        warm = self.vocab.warmup_id
        picked: list[list[np.ndarray]] = [[] for _ in self.decoders]

        def feed(m, t, logits):
            scores = logits.copy()
            scores[:, warm] = -np.inf  # never emitted
            ids = np.argmax(scores, axis=-1)  # ties -> lowest index
            picked[m].append(ids)
            return ids

        with nx.no_grad():
            self._rollout(self.features(images), feed)
        return [np.stack(p, axis=1) for p in picked]

    def infer(self, images) -> list[dict[str, str]] | dict[str, str]:
        """Entity strings for one image (h, w) or a batch (B, h, w)."""
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 2
        ids = self.decode_ids(images)
        results = []
        for b in range(ids[0].shape[0]):
            out = {}
            for spec, seq in zip(self.schema.decoders, ids):
                parts = split_on_eos(seq[b], len(spec.entities), self.vocab)
                out.update(zip(spec.entities, parts))
            results.append(out)
        return results[0] if single else results

    def infer_batched(self, images, batch_size: int = 64) -> list[dict[str, str]]:
        out = []
        for i in range(0, len(images), batch_size):
            out.extend(self.infer(np.asarray(images[i:i + batch_size])))
        return out

    # ------------------------------------------------------------ checkpoint

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise CheckpointError(f"checkpoint parameter names differ: missing {missing}, unexpected {extra}")
        for k, p in params.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != p.shape:
                raise CheckpointError(f"parameter {k}: checkpoint shape {a.shape} != model shape {p.shape}")
        for k, p in params.items():
            p.data[...] = arrays[k]

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "schema": self.schema.to_dict(),
            "alphabet": self.vocab.alphabet,
            "config": self.config.to_dict(),
            "shapes": {k: list(v.shape) for k, v in self.parameters().items()},
            "extra": extra or {},
        }
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **self.state_dict())
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path: str | Path, schema: EntitySchema | None = None, vocab: CharVocab | None = None,
             config: ModelConfig | None = None) -> "EatenModel":
        """Rebuild a model from a checkpoint, optionally checking it against an expected setup."""
        with np.load(Path(path)) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {k: z[k] for k in z.files if k != "__meta__"}
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        saved_schema = EntitySchema.from_dict(meta["schema"])
        saved_vocab = CharVocab(meta["alphabet"])
        if schema is not None and schema != saved_schema:
            raise CheckpointError(f"checkpoint schema {saved_schema} does not match {schema}")
        if vocab is not None and vocab != saved_vocab:
            raise CheckpointError("checkpoint alphabet does not match the configured vocabulary")
        model = cls(saved_schema, saved_vocab, config or ModelConfig(**meta["config"]))
        model.load_state_dict(arrays)
        model.checkpoint_extra = meta.get("extra", {})
        return model

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k, v in sorted(self.state_dict().items()):
            h.update(k.encode())
            h.update(v.tobytes())
        return h.hexdigest()


def encode_batch(samples: Sequence[Sample], schema: EntitySchema, vocab: CharVocab) -> list[np.ndarray]:
    """Stack per-decoder padded target ids for a batch: list of (B, T_m) arrays."""
    per_sample = [encode_targets(s, schema, vocab) for s in samples]
    return [np.array([seqs[m] for seqs in per_sample], dtype=np.int64) for m in range(schema.M)]
