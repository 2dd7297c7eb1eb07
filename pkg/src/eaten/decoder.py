"""One entity-aware decoder: clipped LSTM, per-step attention, character prediction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .attention import AttentionParams, attend, project_features
from .domain import DecoderState, VocabularyError
from .numerics import Tensor

CELL_CLIP = 10.0


@dataclass
class DecoderParams:
    W_c: Tensor  # (vocab, d_c) previous-character embedding
    W_ct1: Tensor  # (C, d_c) previous context into the LSTM input
    b_x: Tensor  # (d_c,)
    W_x: Tensor  # (d_c, 4 n_h) input-to-gates, gate order i, f, o, g
    W_hh: Tensor  # (n_h, 4 n_h)
    b_g: Tensor  # (4 n_h,)
    W_o: Tensor  # (n_h, vocab)
    W_ct2: Tensor  # (C, vocab)
    b_o: Tensor  # (vocab,)
    attention: AttentionParams

    @property
    def n_h(self) -> int:
        return self.W_hh.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.W_o.shape[1]

    @classmethod
    def init(cls, vocab: int, c: int, n_h: int, n_a: int, d_c: int, rng: np.random.Generator,
             scale: float = 0.08, prefix: str = "dec", attention: AttentionParams | None = None):
        u = lambda *shape: rng.uniform(-scale, scale, shape)
        b_g = np.zeros(4 * n_h)
        b_g[n_h:2 * n_h] = 1.0  # forget gate
        t = lambda data, name: Tensor(data, True, f"{prefix}.{name}")
        if attention is None:
            attention = AttentionParams.init(n_h, c, n_a, rng, scale, prefix=f"{prefix}.att")
        return cls(
            W_c=t(u(vocab, d_c), "W_c"), W_ct1=t(u(c, d_c), "W_ct1"), b_x=t(np.zeros(d_c), "b_x"),
            W_x=t(u(d_c, 4 * n_h), "W_x"), W_hh=t(u(n_h, 4 * n_h), "W_hh"), b_g=t(b_g, "b_g"),
            W_o=t(u(n_h, vocab), "W_o"), W_ct2=t(u(c, vocab), "W_ct2"), b_o=t(np.zeros(vocab), "b_o"),
            attention=attention,
        )

    def own_tensors(self) -> dict[str, Tensor]:
        names = ("W_c", "W_ct1", "b_x", "W_x", "W_hh", "b_g", "W_o", "W_ct2", "b_o")
        return {n: getattr(self, n) for n in names}

    def tensors(self) -> dict[str, Tensor]:
        out = self.own_tensors()
        out.update({f"att.{k}": v for k, v in self.attention.tensors().items()})
        return out


@dataclass
class StepState:
    """Differentiable (carry, hidden) pair flowing through a rollout."""
    carry: Tensor
    hidden: Tensor

    @classmethod
    def zeros(cls, n_h: int, batch: int | None = None) -> "StepState":
        shape = (n_h,) if batch is None else (batch, n_h)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))

    @classmethod
    def from_state(cls, s: DecoderState) -> "StepState":
        return cls(Tensor(s.carry), Tensor(s.hidden))

    def detach(self) -> DecoderState:
        return DecoderState(self.carry.data.copy(), self.hidden.data.copy())


def lstm_step(x: Tensor, state: StepState, p: DecoderParams, fused: bool = True) -> StepState:
    """LSTM update with the new carry clamped to [-10, 10] before the output tanh."""
    gates = nx.add_bias(nx.add(nx.matmul(_rows(x), p.W_x), nx.matmul(_rows(state.hidden), p.W_hh)), p.b_g)
    if fused:
        both = _lstm_cell(gates, _rows(state.carry))
        carry, hidden = nx.split_last(both, 2)
    else:
        i, f, o, g = nx.split_last(gates, 4)
        carry = nx.add(nx.mul(nx.sigmoid(f), _rows(state.carry)), nx.mul(nx.sigmoid(i), nx.tanh(g)))
        carry = nx.clip(carry, -CELL_CLIP, CELL_CLIP)
        hidden = nx.mul(nx.sigmoid(o), nx.tanh(carry))
    if x.data.ndim == 1:
        carry, hidden = nx.reshape(carry, carry.shape[1:]), nx.reshape(hidden, hidden.shape[1:])
    return StepState(carry, hidden)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_cell(gates: Tensor, carry: Tensor) -> Tensor:
    """Gate nonlinearities and state update in one node; output is [carry | hidden]."""
    n = carry.shape[-1]
    a = gates.data
    i, f, o, g = _sig(a[:, :n]), _sig(a[:, n:2 * n]), _sig(a[:, 2 * n:3 * n]), np.tanh(a[:, 3 * n:])
    raw = f * carry.data + i * g
    inside = (raw > -CELL_CLIP) & (raw < CELL_CLIP)
    c = np.clip(raw, -CELL_CLIP, CELL_CLIP)
    tc = np.tanh(c)
    h = o * tc

    def backward(grad):
        gc, gh = grad[:, :n], grad[:, n:]
        dc = (gc + gh * o * (1.0 - tc * tc)) * inside
        if gates.requires_grad:
            gates.accumulate(np.concatenate([
                dc * g * i * (1.0 - i),
                dc * carry.data * f * (1.0 - f),
                gh * tc * o * (1.0 - o),
                dc * i * (1.0 - g * g),
            ], axis=-1))
        if carry.requires_grad:
            carry.accumulate(dc * f)

    return nx._result(np.concatenate([c, h], axis=-1), (gates, carry), backward)


def _rows(t: Tensor) -> Tensor:
    return nx.reshape(t, (1,) + t.shape) if t.data.ndim == 1 else t


def lstm_input(prev_char, prev_ctx: Tensor, p: DecoderParams) -> Tensor:
    """W_c * onehot(prev_char) + W_ct1 * prev_ctx + b_x."""
    prev_char = np.asarray(prev_char)
    if np.any(prev_char < 0) or np.any(prev_char >= p.vocab_size):
        raise VocabularyError(f"previous character index {prev_char} outside vocabulary of size {p.vocab_size}")
    emb = nx.embedding(p.W_c, prev_char)
    return nx.add_bias(nx.add(emb, _match(nx.matmul(_rows(prev_ctx), p.W_ct1), emb)), p.b_x)


def _match(t: Tensor, like: Tensor) -> Tensor:
    return t if t.shape == like.shape else nx.reshape(t, like.shape)


def predict(hidden: Tensor, ctx: Tensor, p: DecoderParams) -> Tensor:
    """Character logits W_o * O_t + W_ct2 * ct_t + b_o (the concat of O_t and ct_t times a block map)."""
    a = nx.matmul(_rows(hidden), p.W_o)
    b = nx.matmul(_rows(ctx), p.W_ct2)
    logits = nx.add_bias(nx.add(a, b), p.b_o)
    return nx.reshape(logits, logits.shape[1:]) if hidden.data.ndim == 1 else logits


def decode_step(prev_char, state: StepState, prev_ctx: Tensor, flat: Tensor, p: DecoderParams,
                norm: str = "softmax", projected: Tensor | None = None):
    """One decoding step. Returns (new_state, new_ctx, logits, attention weights).

    The LSTM sees the context from the previous step; the prediction uses the
    context recomputed from the new hidden state.
    """
    x = lstm_input(prev_char, prev_ctx, p)
    new_state = lstm_step(x, state, p)
    weights, ctx = attend(new_state.hidden, flat, p.attention, norm, projected)
    logits = predict(new_state.hidden, ctx, p)
    return new_state, ctx, logits, weights


def warmup(flat: Tensor, p: DecoderParams, norm: str = "softmax", projected: Tensor | None = None) -> StepState:
    """Buffer step producing the data-dependent initial state IS_0.

    Attention is queried with a zero hidden state; the pooled features drive
    one LSTM update from the zero state. The token this step would emit is
    never scored or decoded.
    """
    batched = flat.data.ndim == 3
    batch = flat.shape[0] if batched else None
    zero = StepState.zeros(p.n_h, batch)
    _, ctx = attend(zero.hidden, flat, p.attention, norm, projected)
    x = nx.add_bias(nx.matmul(_rows(ctx), p.W_ct1), p.b_x)
    if not batched:
        x = nx.reshape(x, x.shape[1:])
    return lstm_step(x, zero, p)


def projected_features(flat: Tensor, p: DecoderParams) -> Tensor:
    return project_features(flat, p.attention)
