"""Additive spatial attention of a decoder hidden state over flattened features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import Tensor

NORMS = ("softmax", "ratio")


@dataclass
class AttentionParams:
    W_h: Tensor  # (n_h, n_a)
    W_f: Tensor  # (C, n_a), a 1x1 convolution over the feature map
    V: Tensor  # (n_a,)
    b: Tensor  # (n_a,)

    @classmethod
    def init(cls, n_h: int, c: int, n_a: int, rng: np.random.Generator, scale: float = 0.08, prefix: str = "att"):
        u = lambda *shape: rng.uniform(-scale, scale, shape)
        return cls(
            Tensor(u(n_h, n_a), True, f"{prefix}.W_h"),
            Tensor(u(c, n_a), True, f"{prefix}.W_f"),
            Tensor(u(n_a), True, f"{prefix}.V"),
            Tensor(np.zeros(n_a), True, f"{prefix}.b"),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"W_h": self.W_h, "W_f": self.W_f, "V": self.V, "b": self.b}


def project_features(flat: Tensor, p: AttentionParams) -> Tensor:
    """W_f applied at every location; depends only on the image, so decoders compute it once."""
    return nx.add_bias(nx.matmul(flat, p.W_f), p.b)


def attend(hidden: Tensor, flat: Tensor, p: AttentionParams, norm: str = "softmax",
           projected: Tensor | None = None, fused: bool = True) -> tuple[Tensor, Tensor]:
    """Attention weights over the K rows of ``flat`` and the pooled context vector.

    Shapes: hidden (n_h,) or (B, n_h); flat (K, C) or (B, K, C).
    Returns (weights (…, K), context (…, C)).
    """
    hidden, flat = nx.as_tensor(hidden), nx.as_tensor(flat)
    if flat.shape[-2] < 1:
        raise nx.DimensionError("attend: feature map has no locations")
    if projected is None:
        projected = project_features(flat, p)
    batched = flat.data.ndim == 3
    if not batched:
        hidden = nx.reshape(hidden, (1,) + hidden.shape)
        flat = nx.reshape(flat, (1,) + flat.shape)
        projected = nx.reshape(projected, (1,) + projected.shape)
    b, k, n_a = projected.shape
    query = nx.matmul(hidden, p.W_h)  # (B, n_a)
    if norm == "softmax" and fused:
        weights, ctx = _fused_softmax_attention(projected, query, p.V, flat)
    else:
        weights, ctx = _composed_attention(projected, query, p.V, flat, norm)
    if not batched:
        weights = nx.reshape(weights, (k,))
        ctx = nx.reshape(ctx, (flat.shape[-1],))
    return weights, ctx


def _composed_attention(projected, query, V, flat, norm):
    b, k, n_a = projected.shape
    z = nx.tanh(nx.broadcast_add(projected, nx.reshape(query, (b, 1, n_a))))
    scores = nx.reshape(nx.matmul(z, nx.reshape(V, (n_a, 1))), (b, k))
    if norm == "softmax":
        weights = nx.softmax(scores, axis=-1)
    elif norm == "ratio":
        weights = _ratio_normalize(scores)
    else:
        raise ValueError(f"attention norm must be one of {NORMS}, got {norm!r}")
    ctx = nx.matmul(nx.reshape(weights, (b, 1, k)), flat)
    return weights, nx.reshape(ctx, (b, flat.shape[-1]))


def _fused_softmax_attention(projected: Tensor, query: Tensor, V: Tensor, flat: Tensor):
    """Same math as the composed path in a single node; weights come back without a graph."""
    z = np.tanh(projected.data + query.data[:, None, :])
    e = z @ V.data
    w = np.exp(e - e.max(axis=-1, keepdims=True))
    w /= w.sum(axis=-1, keepdims=True)
    ctx = np.einsum("bk,bkc->bc", w, flat.data)

    def backward(g):
        dw = np.einsum("bkc,bc->bk", flat.data, g)
        de = w * (dw - (w * dw).sum(axis=-1, keepdims=True))
        if V.requires_grad:
            V.accumulate(np.einsum("bkn,bk->n", z, de))
        if projected.requires_grad or query.requires_grad:
            dpre = de[:, :, None] * V.data * (1.0 - z * z)
            if projected.requires_grad:
                projected.accumulate(dpre)
            if query.requires_grad:
                query.accumulate(dpre.sum(axis=1))
        if flat.requires_grad:
            flat.accumulate(w[:, :, None] * g[:, None, :])

    return Tensor(w), nx._result(ctx, (projected, query, V, flat), backward)


def _ratio_normalize(scores: Tensor) -> Tensor:
    """e_k / sum_i e_i with the denominator kept at least 1e-8 away from zero."""
    s = scores.data.sum(axis=-1, keepdims=True)
    sign = np.where(s < 0, -1.0, 1.0)
    denom = np.where(np.abs(s) < 1e-8, sign * 1e-8, s)
    guarded = np.abs(s) < 1e-8
    y = scores.data / denom

    def backward(g):
        # d(e_k/S)/de_j = delta_kj/S - e_k/S^2 ; the clamped denominator is constant
        gs = np.where(guarded, 0.0, (g * y).sum(axis=-1, keepdims=True))
        scores.accumulate((g - gs) / denom)

    return nx._result(y, (scores,), backward)
