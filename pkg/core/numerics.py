"""
Numerics
Dense double-precision tensors, a gradient tape, the forward operations the
network needs and reverse-mode gradients for them.

Usage:
    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with GradTape() as tape:
        loss = mean(square(matmul(x, w)))
    grads = backward(tape, loss)
    grads[w]        # ndarray, same shape as w

Only operations executed while a tape is active, and that touch at least one
tensor with requires_grad, are recorded. Outside a tape every op is a plain
numpy computation.

Conventions:
  - abs'(0) = 0, relu'(0) = 0
  - log clamps its argument at 1e-300, exp clamps at 700
  - softmax subtracts the row max
  - masked attention positions receive -1e30 (finite) before the softmax
"""

from __future__ import annotations
import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from scipy import special

from core.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64
LOG_FLOOR = 1e-300
EXP_CEIL = 700.0
MASK_FILL = -1e30

Vjp = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class UniformSource(Protocol):
    def uniform(self, size) -> np.ndarray: ...


class Tensor:
    """Immutable array of float64 values with an optional gradient requirement."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=DTYPE)
        arr.setflags(write=False)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"<Tensor{label} shape={self.shape}{flag}>"

    def __len__(self) -> int:
        return self.shape[0]

    def __float__(self) -> float:
        if self.size != 1:
            raise ShapeError("float", self.shape, detail="only scalar tensors convert")
        return self.item()

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=DTYPE)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Vjp


_local = threading.local()


def _active_tapes() -> list["GradTape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def current_tape() -> "GradTape | None":
    stack = _active_tapes()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of the operations applied while the tape is active."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "GradTape":
        _active_tapes().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _active_tapes()
        if stack and stack[-1] is self:
            stack.pop()

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: Vjp):
        self.entries.append(TapeEntry(op, inputs, output, vjp))

    def __len__(self) -> int:
        return len(self.entries)


class Gradients:
    """Gradient lookup keyed by tensor; untouched tensors map to zeros."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros(t.shape, dtype=DTYPE)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(tape: GradTape, output: Tensor) -> Gradients:
    """Reverse-mode sweep over the tape, seeded with d(output)/d(output) = 1."""
    if output.size != 1:
        raise ShapeError("backward", output.shape, detail="output must be a scalar")
    grads: dict[int, np.ndarray] = {id(output): np.ones(output.shape, dtype=DTYPE)}
    for entry in reversed(tape.entries):
        g = grads.get(id(entry.output))
        if g is None:
            continue
        in_grads = entry.vjp(g)
        for t, gi in zip(entry.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            gi = _unbroadcast(np.asarray(gi, dtype=DTYPE), t.shape)
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi
    return Gradients(grads)


def _emit(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Vjp) -> Tensor:
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(op, inputs, out, vjp)
    return out


def custom_op(op: str, inputs: Sequence, value: np.ndarray, vjp: Vjp) -> Tensor:
    """Register an operation whose forward value and adjoint are computed elsewhere."""
    return _emit(op, np.asarray(value, dtype=DTYPE), tuple(as_tensor(t) for t in inputs), vjp)


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _emit("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _emit("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _emit("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("square", ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(np.maximum(a.data, 0.0))
    safe = np.maximum(out, np.sqrt(LOG_FLOOR))
    return _emit("sqrt", out, (a,), lambda g: (0.5 * g / safe,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _emit("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def log(a) -> Tensor:
    a = as_tensor(a)
    safe = np.maximum(a.data, LOG_FLOOR)
    return _emit("log", np.log(safe), (a,), lambda g: (g / safe,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(np.minimum(a.data, EXP_CEIL))
    return _emit("exp", out, (a,), lambda g: (g * out,))


def clip(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = np.clip(ad, lo, hi)
    inside = np.ones_like(ad, dtype=bool)
    if lo is not None:
        inside &= ad >= lo
    if hi is not None:
        inside &= ad <= hi
    return _emit("clip", out, (a,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _emit("relu", np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("softplus", np.logaddexp(0.0, ad), (a,), lambda g: (g * special.expit(ad),))


def log_gamma(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("log_gamma", special.gammaln(ad), (a,), lambda g: (g * special.digamma(ad),))


def digamma(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit("digamma", special.digamma(ad), (a,), lambda g: (g * special.polygamma(1, ad),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), vjp)


# ---------------------------------------------------------------------------
# Reductions and shape plumbing
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _emit("sum", a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(max(count, 1)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _emit("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def index(a, idx) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradients."""
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("index", a.data[idx], (a,), vjp)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat", detail="no inputs")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in ts)) from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _emit("concat", out, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.stack([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(t.shape for t in ts)) from None
    return _emit("stack", out, ts,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))))


def stop_gradient(a) -> Tensor:
    return as_tensor(a).detach()


# ---------------------------------------------------------------------------
# Linear algebra and network ops
# ---------------------------------------------------------------------------

def matmul(a, b, fp32: bool = False) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    if fp32:
        out = (ad.astype(np.float32) @ bd.astype(np.float32)).astype(DTYPE)
    else:
        out = ad @ bd

    def vjp(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _emit("matmul", out, (a, b), vjp)


def linear(x, w, b=None, fp32: bool = False) -> Tensor:
    """x (..., in) @ w (in, out) + b (out)."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    flat = x if x.ndim >= 2 else reshape(x, (1, x.shape[0]))
    out = matmul(flat, w, fp32=fp32)
    if b is not None:
        out = add(out, b)
    if x.ndim < 2:
        out = reshape(out, (w.shape[1],))
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError("layer_norm", x.shape, gain.shape, bias.shape)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    centered = xd - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data
    n = xd.shape[-1]

    def vjp(g):
        gx_hat = g * gain.data
        gx = inv_std / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                            - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        return gx, g * xhat, g

    return _emit("layer_norm", out, (x, gain, bias), vjp)


def conv1d(x, w, b=None) -> Tensor:
    """
    Same-padded 1-D convolution over time.
    x: (T, C_in), w: (K, C_in, C_out) with odd K, b: (C_out,).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or w.ndim != 3 or x.shape[1] != w.shape[1] or w.shape[0] % 2 == 0:
        raise ShapeError("conv1d", x.shape, w.shape, detail="expects (T,C_in), (K odd,C_in,C_out)")
    k = w.shape[0]
    pad = k // 2
    t = x.shape[0]
    xp = np.pad(x.data, ((pad, pad), (0, 0)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (T, C_in, K)
    out = np.einsum("tck,kco->to", windows, w.data)

    def vjp(g):
        gw = np.einsum("tck,to->kco", windows, g)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[j:j + t] += g @ w.data[j].T
        return gxp[pad:pad + t], gw

    y = _emit("conv1d", out, (x, w), vjp)
    if b is not None:
        y = add(y, b)
    return y


def masked_attention_score(q, k, mask: np.ndarray) -> Tensor:
    """
    Scaled dot-product scores q k^T / sqrt(d) with disallowed positions
    filled with a large negative constant. mask[i, j] True means allowed.
    """
    q, k = as_tensor(q), as_tensor(k)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError("masked_attention_score", q.shape, k.shape)
    tq, tk = q.shape[-2], k.shape[-2]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (tq, tk):
        raise ShapeError("masked_attention_score", q.shape, k.shape, mask.shape,
                         detail="mask must be (T_q, T_k)")
    scale = 1.0 / np.sqrt(q.shape[-1])
    raw = (q.data @ np.swapaxes(k.data, -1, -2)) * scale
    out = np.where(mask, raw, MASK_FILL)

    def vjp(g):
        gm = np.where(mask, g, 0.0) * scale
        return gm @ k.data, np.swapaxes(gm, -1, -2) @ q.data

    return _emit("masked_attention_score", out, (q, k), vjp)


def dropout_mask(shape, p: float, rng: UniformSource) -> np.ndarray:
    """0/1 keep-mask with keep probability 1 - p, drawn from rng."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout: probability must be in [0, 1), got {p}")
    return (np.asarray(rng.uniform(size=shape)) >= p).astype(DTYPE)


def dropout(x, p: float, rng: UniformSource | None, active: bool = True) -> Tensor:
    """Inverted dropout; consumes rng only when active and p > 0."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout: probability must be in [0, 1), got {p}")
    if not active or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout: an RNG is required when active")
    scale = dropout_mask(x.shape, p, rng) / (1.0 - p)
    return _emit("dropout", x.data * scale, (x,), lambda g: (g * scale,))


# ---------------------------------------------------------------------------
# Finite-difference checker
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    rel_errors: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    coords: np.ndarray
    worst_index: int = -1
    kinks: list[int] = field(default_factory=list)
    nonfinite_index: int | None = None

    @property
    def summary(self) -> str:
        if self.nonfinite_index is not None:
            return f"FAIL: non-finite evaluation at coordinate {self.nonfinite_index}"
        if self.kinks:
            return f"FLAGGED: non-differentiable at coordinate(s) {self.kinks}"
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict}: max relative error {self.max_rel_error:.3e} over {len(self.coords)} coordinate(s)"


def _evaluate(f: Callable[[Tensor], Tensor], x: np.ndarray) -> float:
    value = f(Tensor(x))
    return float(as_array(value).reshape(-1)[0])


def analytic_gradient(f: Callable[[Tensor], Tensor], point) -> np.ndarray:
    x = Tensor(as_array(point), requires_grad=True)
    with GradTape() as tape:
        y = f(x)
    return backward(tape, as_tensor(y))[x]


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    point,
    h: float = 1e-5,
    tol: float = 1e-4,
    analytic: np.ndarray | None = None,
    coords: Sequence[int] | None = None,
    kink_tol: float = 1e-2,
) -> GradCheckReport:
    """
    Compare the tape gradient of scalar f at point with central differences.
    rel_error_i = |analytic_i - numeric_i| / (|numeric_i| + 1e-8); pass iff
    every checked coordinate is below tol. Coordinates where the one-sided
    differences disagree are flagged as kinks and fail the check.
    """
    if h <= 0:
        raise ConfigError(f"finite_difference_check: step must be positive, got {h}")
    base = np.array(as_array(point), dtype=DTYPE)
    flat = base.reshape(-1)
    if analytic is None:
        analytic = analytic_gradient(f, base)
    analytic = np.asarray(analytic, dtype=DTYPE).reshape(-1)
    coords = np.arange(flat.size) if coords is None else np.asarray(coords, dtype=int)

    f0 = _evaluate(f, base)
    numeric = np.zeros(len(coords))
    rel = np.zeros(len(coords))
    kinks: list[int] = []
    for n, i in enumerate(coords):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = _evaluate(f, plus.reshape(base.shape))
        fm = _evaluate(f, minus.reshape(base.shape))
        if not (np.isfinite(fp) and np.isfinite(fm) and np.isfinite(f0)):
            logger.warning(f"[gradcheck] non-finite f at coordinate {int(i)}")
            return GradCheckReport(False, float("inf"), rel, analytic[coords], numeric,
                                   coords, int(i), kinks, nonfinite_index=int(i))
        numeric[n] = (fp - fm) / (2.0 * h)
        one_sided_gap = abs((fp - f0) / h - (f0 - fm) / h)
        if one_sided_gap > kink_tol * (1.0 + abs(numeric[n])):
            kinks.append(int(i))
        rel[n] = abs(analytic[i] - numeric[n]) / (abs(numeric[n]) + 1e-8)

    worst = int(np.argmax(rel)) if len(rel) else -1
    max_rel = float(rel[worst]) if len(rel) else 0.0
    passed = max_rel < tol and not kinks
    return GradCheckReport(passed, max_rel, rel, analytic[coords], numeric, coords,
                           int(coords[worst]) if worst >= 0 else -1, kinks)
