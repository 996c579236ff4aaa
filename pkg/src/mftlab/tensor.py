"""Minimal dense f64 tensors with reverse-mode differentiation.

Storage is a contiguous row-major numpy array; every op copies rather than
views. A fresh Tape is created per forward pass and records backward rules in
topological order; backward() replays them once in reverse. Passing tape=None
runs the same kernels without recording (used for non-differentiated passes
such as the first pass of scheduled sampling and for generation).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AllWeightsZero, NotScalar, ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_on_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)  # keeps 0-d shape intact
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._on_tape = False

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered log of (output, backward_rule); inputs always precede use."""

    def __init__(self):
        self.ops: list[tuple[Tensor, callable]] = []

    def record(self, out: Tensor, backward_rule) -> None:
        out._on_tape = True
        self.ops.append((out, backward_rule))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad or t._on_tape:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _needs(tape: Tape | None, *inputs: Tensor) -> bool:
    return tape is not None and any(t.requires_grad or t._on_tape for t in inputs)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate grad buffers of all requires_grad leaves reachable from loss.

    Repeated calls without zeroing accumulate."""
    if loss.data.shape != ():
        raise NotScalar(f"loss has shape {loss.data.shape}")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for out, rule in reversed(tape.ops):
        if out.grad is not None:
            rule(out.grad)


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    if _needs(tape, a, b):
        def rule(g, a=a, b=b):
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)
        tape.record(out, rule)
    return out


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    """Elementwise add; b may be a row vector broadcast over a's rows."""
    out = Tensor(a.data + b.data)
    if out.data.shape != a.data.shape:
        raise ShapeMismatch(f"add {a.data.shape} + {b.data.shape}")
    if _needs(tape, a, b):
        def rule(g, a=a, b=b):
            _accum(a, g)
            if b.data.shape == g.shape:
                _accum(b, g)
            else:  # bias row broadcast over axis 0
                _accum(b, g.sum(axis=0).reshape(b.data.shape))
        tape.record(out, rule)
    return out


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"mul {a.data.shape} * {b.data.shape}")
    out = Tensor(a.data * b.data)
    if _needs(tape, a, b):
        def rule(g, a=a, b=b):
            _accum(a, g * b.data)
            _accum(b, g * a.data)
        tape.record(out, rule)
    return out


def scale(a: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data * s)
    if _needs(tape, a):
        def rule(g, a=a, s=s):
            _accum(a, g * s)
        tape.record(out, rule)
    return out


def gelu(a: Tensor, tape: Tape | None = None) -> Tensor:
    """tanh-approximation GELU (smooth, finite-difference friendly)."""
    c = math.sqrt(2.0 / math.pi)
    x = a.data
    inner = c * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + th))
    if _needs(tape, a):
        def rule(g, a=a, x=x, th=th, c=c):
            d_inner = c * (1.0 + 3 * 0.044715 * x**2)
            dx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner
            _accum(a, g * dx)
        tape.record(out, rule)
    return out


def softmax(a: Tensor, tape: Tape | None = None) -> Tensor:
    """Row-wise softmax over the last axis with max-subtraction."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    if _needs(tape, a):
        def rule(g, a=a, y=y):
            dot = (g * y).sum(axis=-1, keepdims=True)
            _accum(a, y * (g - dot))
        tape.record(out, rule)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5,
               tape: Tape | None = None) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)
    if _needs(tape, x, gain, bias):
        def rule(g, x=x, gain=gain, bias=bias, xhat=xhat, inv=inv):
            d = x.data.shape[-1]
            _accum(gain, (g * xhat).sum(axis=tuple(range(g.ndim - 1))).reshape(gain.data.shape))
            _accum(bias, g.sum(axis=tuple(range(g.ndim - 1))).reshape(bias.data.shape))
            gh = g * gain.data
            dx = inv / d * (d * gh - gh.sum(axis=-1, keepdims=True)
                            - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
            _accum(x, dx)
        tape.record(out, rule)
    return out


def cross_entropy(logits: Tensor, targets: list[int], weights,
                  tape: Tape | None = None) -> Tensor:
    """Weighted mean of -log softmax(logits)[t, targets[t]].

    Computed via a stable log-sum-exp; weights must be non-negative and not
    all zero."""
    w = np.asarray(weights, dtype=np.float64)
    t_idx = np.asarray(targets, dtype=np.intp)
    n = logits.data.shape[0]
    if len(t_idx) != n or len(w) != n:
        raise ShapeMismatch(f"cross_entropy: {n} logit rows, {len(t_idx)} targets, {len(w)} weights")
    if (w < 0).any():
        raise ValueError("negative loss weight")
    wsum = w.sum()
    if wsum == 0:
        raise AllWeightsZero("all loss weights are zero")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=-1))
    nll = lse - x[np.arange(n), t_idx]
    out = Tensor((w * nll).sum() / wsum)
    if _needs(tape, logits):
        p = np.exp(x - lse[:, None])

        def rule(g, logits=logits, p=p, t_idx=t_idx, w=w, wsum=wsum):
            d = p * (w / wsum)[:, None]
            d[np.arange(len(t_idx)), t_idx] -= w / wsum
            _accum(logits, g * d)
        tape.record(out, rule)
    return out


def gather_rows(table: Tensor, ids, tape: Tape | None = None) -> Tensor:
    """out[i] = table[ids[i]]; backward scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.intp)
    out = Tensor(table.data[idx])
    if _needs(tape, table):
        def rule(g, table=table, idx=idx):
            if table.requires_grad or table._on_tape:
                if table.grad is None:
                    table.grad = np.zeros_like(table.data)
                np.add.at(table.grad, idx, g)
        tape.record(out, rule)
    return out


def slice_rows(a: Tensor, lo: int, hi: int, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data[lo:hi].copy())
    if _needs(tape, a):
        def rule(g, a=a, lo=lo, hi=hi):
            full = np.zeros_like(a.data)
            full[lo:hi] = g
            _accum(a, full)
        tape.record(out, rule)
    return out


def slice_cols(a: Tensor, lo: int, hi: int, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data[:, lo:hi].copy())
    if _needs(tape, a):
        def rule(g, a=a, lo=lo, hi=hi):
            full = np.zeros_like(a.data)
            full[:, lo:hi] = g
            _accum(a, full)
        tape.record(out, rule)
    return out


def concat_cols(parts: list[Tensor], tape: Tape | None = None) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    if _needs(tape, *parts):
        widths = [p.data.shape[1] for p in parts]

        def rule(g, parts=parts, widths=widths):
            lo = 0
            for p, w in zip(parts, widths):
                _accum(p, g[:, lo:lo + w])
                lo += w
        tape.record(out, rule)
    return out


def transpose(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data.T.copy())
    if _needs(tape, a):
        def rule(g, a=a):
            _accum(a, g.T)
        tape.record(out, rule)
    return out


def sum_all(a: Tensor, tape: Tape | None = None) -> Tensor:
    out = Tensor(a.data.sum())
    if _needs(tape, a):
        def rule(g, a=a):
            _accum(a, np.full_like(a.data, g))
        tape.record(out, rule)
    return out


def add_const(a: Tensor, c: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Add a non-differentiated constant array (e.g. attention mask, noise)."""
    out = Tensor(a.data + c)
    if out.data.shape != a.data.shape:
        raise ShapeMismatch(f"add_const {a.data.shape} + {np.shape(c)}")
    if _needs(tape, a):
        def rule(g, a=a):
            _accum(a, g)
        tape.record(out, rule)
    return out


def mul_const(a: Tensor, c: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Multiply by a non-differentiated constant array (e.g. dropout keep mask)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.data.shape:
        raise ShapeMismatch(f"mul_const {a.data.shape} * {c.shape}")
    out = Tensor(a.data * c)
    if _needs(tape, a):
        def rule(g, a=a, c=c):
            _accum(a, g * c)
        tape.record(out, rule)
    return out


# ---------------------------------------------------------------------------
# finite-difference oracle


def grad_check(f, x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference
    gradients of the scalar function f(x, tape)."""
    tape = Tape()
    xt = Tensor(x.data.copy(), requires_grad=True)
    loss = f(xt, tape)
    backward(loss, tape)
    analytic = xt.grad if xt.grad is not None else np.zeros_like(xt.data)

    flat = x.data.copy().ravel()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(flat.reshape(x.data.shape)), None).data.item()
        flat[i] = orig - eps
        lo = f(Tensor(flat.reshape(x.data.shape)), None).data.item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
    a = analytic.ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
