"""Small reverse-mode differentiation layer over float64 numpy arrays.

Each op returns a new :class:`Tensor` holding its forward value and, when any
input requires a gradient, a closure that pushes the output gradient back to
the inputs. Gradients accumulate into ``grad``; callers zero them between
steps.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the backward graph."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Propagate ``grad`` (default ones) to every leaf reachable from here."""
        if grad is None:
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior buffers are not needed once pushed upstream
                if node._parents:
                    node.grad = None if node is not self else node.grad

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; ``a`` may carry leading batch axes, ``b`` is 2-D or batched like ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.data.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ {a.shape} vs {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            if b.data.ndim == 2:
                k = a.shape[-1]
                b.accumulate(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b.accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _result(out, (a, b), backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` with ``b`` broadcast over the leading axes of ``x``."""
    x, b = as_tensor(x), as_tensor(b)
    if x.shape[x.data.ndim - b.data.ndim:] != b.shape:
        raise DimensionError(f"add_bias: bias {b.shape} does not trail {x.shape}")

    def backward(g):
        if x.requires_grad:
            x.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.reshape((-1,) + b.shape).sum(axis=0))

    return _result(x.data + b.data, (x, b), backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def broadcast_add(a: Tensor, b: Tensor) -> Tensor:
    """``a + b`` under numpy broadcasting rules."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"broadcast_add: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return _result(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


def embedding(table: Tensor, idx: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``idx``; equals onehot(idx) @ table."""
    idx = np.asarray(idx, dtype=np.int64)
    out = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[-1]))
        table.accumulate(full)

    return _result(out, (table,), backward)


# ------------------------------------------------------------ pointwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _result(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: x.accumulate(g * (1.0 - y * y)))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), lambda g: x.accumulate(g * y * (1.0 - y)))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: x.accumulate(g * mask))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Elementwise clamp; the gradient is zero wherever the clamp is active."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: x.accumulate(g * inside))


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    return _result(x.data * c, (x,), lambda g: x.accumulate(g * c))


_BINARY = {"mul": mul, "add": add}
_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch ``mul``/``add`` (two equal-shape operands) or ``tanh``/``sigmoid``/``relu``."""
    if op in _BINARY:
        if len(args) != 2:
            raise TypeError(f"{op} takes two operands, got {len(args)}")
        return _BINARY[op](*args)
    if op in _UNARY:
        if len(args) != 1:
            raise TypeError(f"{op} takes one operand, got {len(args)}")
        return _UNARY[op](args[0])
    raise ValueError(f"unknown elementwise op {op!r}")


# -------------------------------------------------------- shape/reduction ops

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: x.accumulate(g.reshape(old)))


def take(x: Tensor, index) -> Tensor:
    """Basic-slicing view ``x[index]`` with scatter-back gradient."""
    x = as_tensor(x)

    def backward(g):
        full = np.zeros_like(x.data)
        full[index] = g
        x.accumulate(full)

    return _result(x.data[index], (x,), backward)


def split_last(x: Tensor, n: int) -> list[Tensor]:
    width = x.shape[-1] // n
    return [take(x, (Ellipsis, slice(i * width, (i + 1) * width))) for i in range(n)]


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                x.accumulate(g[tuple(sl)])

    return _result(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def backward(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                x.accumulate(np.take(g, i, axis=axis))

    return _result(np.stack([x.data for x in xs], axis=axis), xs, backward)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _result(np.array(x.data.sum()), (x,), lambda g: x.accumulate(np.broadcast_to(g, x.shape)))


def add_scalars(xs: Iterable[Tensor]) -> Tensor:
    xs = list(xs)
    total = xs[0]
    for x in xs[1:]:
        total = add(total, x)
    return total


# ------------------------------------------------------------ softmax family

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    x = as_tensor(x)
    if x.data.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax: empty input of shape {x.shape}")
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        x.accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError(f"log_softmax: empty input of shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _result(y, (x,), lambda g: x.accumulate(g - p * g.sum(axis=-1, keepdims=True)))


def soft_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Sum over all rows of ``-sum_j target_j * log softmax(logits)_j``."""
    logits = as_tensor(logits)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape:
        raise DimensionError(f"soft_cross_entropy: {logits.shape} vs target {target.shape}")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    value = -(target * logp).sum()
    p = np.exp(logp)
    mass = target.sum(axis=-1, keepdims=True)
    return _result(np.array(value), (logits,), lambda g: logits.accumulate(g * (p * mass - target)))


# --------------------------------------------------------------- convolution

def _same_pad(n: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """Same-padded cross-correlation, NHWC layout (batch axis optional).

    ``kernel`` has shape (kh, kw, c_in, c_out); output extent is ceil(n / stride).
    Taps are ``dilation`` pixels apart.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1 or dilation < 1:
        raise ValueError(f"conv2d: stride and dilation must be >= 1, got {stride}, {dilation}")
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    if xd.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(f"conv2d: expected (h,w,c) input and 4-D kernel, got {x.shape}, {kernel.shape}")
    n, h, w, cin = xd.shape
    kh, kw, kcin, cout = kernel.shape
    if kcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {kcin} ({x.shape} vs {kernel.shape})")
    eh, ew = (kh - 1) * dilation + 1, (kw - 1) * dilation + 1
    oh, pt, pb = _same_pad(h, eh, stride)
    ow, pl, pr = _same_pad(w, ew, stride)
    if eh > h + pt + pb or ew > w + pl + pr:
        raise DimensionError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    padded = np.pad(xd, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    # cols[n, i, j, dy, dx, c]
    cols = np.empty((n, oh, ow, kh, kw, cin))
    for dy in range(kh):
        for dx in range(kw):
            y0, x0 = dy * dilation, dx * dilation
            cols[:, :, :, dy, dx, :] = padded[:, y0:y0 + stride * oh:stride, x0:x0 + stride * ow:stride, :]
    cols2 = cols.reshape(n * oh * ow, kh * kw * cin)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols2 @ kmat).reshape(n, oh, ow, cout)
    if not batched:
        out = out[0]

    def backward(g):
        g2 = g.reshape(n * oh * ow, cout)
        if kernel.requires_grad:
            kernel.accumulate((cols2.T @ g2).reshape(kernel.shape))
        if x.requires_grad:
            dcols = (g2 @ kmat.T).reshape(n, oh, ow, kh, kw, cin)
            dpad = np.zeros_like(padded)
            for dy in range(kh):
                for dx in range(kw):
                    y0, x0 = dy * dilation, dx * dilation
                    dpad[:, y0:y0 + stride * oh:stride, x0:x0 + stride * ow:stride, :] += dcols[:, :, :, dy, dx, :]
            dx_ = dpad[:, pt:pt + h, pl:pl + w, :]
            x.accumulate(dx_ if batched else dx_[0])

    return _result(out, (x, kernel), backward)


# ------------------------------------------------------ finite-difference oracle

def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> list[float]:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` must rebuild the scalar loss from the current contents of ``params``.
    Returns one value per parameter; the error denominator is
    ``max(|analytic|, |numeric|, 1e-8)``. The numerator first drops the
    rounding noise of the difference quotient, ``4 eps max(|f|, 1) / step``:
    below that level the numeric estimate carries no digits at all.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.zero_grad()
        p.requires_grad = True
    out = f()
    if out.size != 1:
        raise DimensionError(f"finite_diff_check: f must be scalar, got shape {out.shape}")
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    noise = 4.0 * np.finfo(np.float64).eps * max(abs(float(out.data)), 1.0) / step

    def evaluate() -> float:
        with no_grad():
            v = float(f().data)
        if not math.isfinite(v):
            raise NumericError("finite_diff_check: f returned a non-finite value")
        return v

    worst = []
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        ga = a.reshape(-1)
        err = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            fp = evaluate()
            flat[i] = keep - step
            fm = evaluate()
            flat[i] = keep
            num = (fp - fm) / (2.0 * step)
            denom = max(abs(ga[i]), abs(num), 1e-8)
            err = max(err, max(abs(ga[i] - num) - noise, 0.0) / denom)
        worst.append(err)
    return worst
