"""Minimal reverse-mode automatic differentiation over numpy arrays.

Values are immutable once created; a Tape records operations in execution
order (define-by-run) and the backward pass walks it exactly once in
reverse. float32 is the default storage dtype; dot products are
accumulated in float64 to keep finite-difference checks tight.
"""

from __future__ import annotations

import numpy as np


class Tape:
    """Ordered record of tensors created during one forward pass."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def add(self, tensor):
        self.nodes.append(tensor)


class Tensor:
    """Array node on a tape. parents holds (input, vjp) pairs."""

    __slots__ = ("value", "tape", "parents", "grad", "name")

    def __init__(self, value, tape=None, parents=(), name=None):
        self.value = np.asarray(value)
        self.tape = tape
        self.parents = tuple(parents)
        self.grad = None
        self.name = name
        if tape is not None:
            tape.add(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype}, name={self.name})"


def param(value, tape, name=None):
    """Leaf tensor whose gradient is wanted."""
    return Tensor(np.asarray(value), tape=tape, name=name)


def constant(value):
    """Off-tape tensor; no gradient flows into it."""
    return Tensor(np.asarray(value), tape=None)


def _tape_of(*tensors):
    for t in tensors:
        if t.tape is not None:
            return t.tape
    return None


def _make(value, pairs, name=None):
    tape = _tape_of(*[t for t, _ in pairs])
    parents = [(t, vjp) for t, vjp in pairs if t.tape is not None]
    return Tensor(value, tape=tape, parents=parents, name=name)


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the parent's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _mm(a, b):
    # 64-bit accumulation for float32 inputs keeps gradients reproducible
    # against finite differences.
    if a.dtype == np.float32 or b.dtype == np.float32:
        return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    return a @ b


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    v = a.value + b.value
    return _make(v, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ])


def sub(a, b):
    v = a.value - b.value
    return _make(v, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(-g, b.shape)),
    ])


def mul(a, b):
    v = a.value * b.value
    return _make(v, [
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ])


def affine(a, scale=1.0, shift=0.0):
    """scale * a + shift with python-scalar coefficients."""
    v = (a.value * scale + shift).astype(a.dtype)
    return _make(v, [(a, lambda g: (g * scale).astype(g.dtype))])


def matmul(a, b):
    if a.value.shape[-1] != b.value.shape[0]:
        raise ValueError(f"matmul dim mismatch: {a.shape} @ {b.shape}")
    v = _mm(a.value, b.value)
    return _make(v, [
        (a, lambda g: _mm(g, b.value.T)),
        (b, lambda g: _mm(a.value.T, g)),
    ])


def transpose(a):
    return _make(a.value.T, [(a, lambda g: g.T)])


def sigmoid(a):
    v = 1.0 / (1.0 + np.exp(-a.value))
    return _make(v, [(a, lambda g: g * v * (1.0 - v))])


def tanh(a):
    v = np.tanh(a.value)
    return _make(v, [(a, lambda g: g * (1.0 - v * v))])


def relu(a):
    v = np.maximum(a.value, 0)
    mask = (a.value > 0).astype(a.dtype)
    return _make(v, [(a, lambda g: g * mask)])


def log(a):
    v = np.log(a.value)
    return _make(v, [(a, lambda g: g / a.value)])


def power(a, p):
    """Elementwise a**p with a python-scalar exponent."""
    v = np.power(a.value, p)

    def vjp(g):
        return g * p * np.power(a.value, p - 1)

    return _make(v, [(a, vjp)])


def row_softmax(a):
    x = a.value.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    e = np.exp(x)
    s = (e / e.sum(axis=1, keepdims=True)).astype(a.dtype)

    def vjp(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return s * (g - dot)

    return _make(s, [(a, vjp)])


def concat_cols(tensors):
    v = np.concatenate([t.value for t in tensors], axis=1)
    pairs = []
    offset = 0
    for t in tensors:
        lo, hi = offset, offset + t.value.shape[1]

        def vjp(g, lo=lo, hi=hi):
            return g[:, lo:hi]

        pairs.append((t, vjp))
        offset = hi
    return _make(v, pairs)


def take_cols(a, lo, hi):
    v = a.value[:, lo:hi]

    def vjp(g):
        out = np.zeros_like(a.value)
        out[:, lo:hi] = g
        return out

    return _make(v, [(a, vjp)])


def take_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.value.shape[0]):
        raise IndexError("row index out of range")
    v = a.value[idx]

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return _make(v, [(a, vjp)])


def set_rows(base, idx, rows):
    """Copy of base with rows at idx replaced; rows may be (1, F) broadcast."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= base.value.shape[0]):
        raise IndexError("row index out of range")
    v = base.value.copy()
    v[idx] = rows.value

    def vjp_base(g):
        out = g.copy()
        out[idx] = 0
        return out

    def vjp_rows(g):
        return _unbroadcast(g[idx], rows.shape)

    return _make(v, [(base, vjp_base), (rows, vjp_rows)])


def sum_rows(a):
    v = a.value.sum(axis=0, keepdims=True)
    return _make(v, [(a, lambda g: np.broadcast_to(g, a.shape).astype(g.dtype))])


def mean_rows(a):
    n = a.value.shape[0]
    v = a.value.mean(axis=0, keepdims=True)
    return _make(v, [(a, lambda g: np.broadcast_to(g / n, a.shape).astype(g.dtype))])


def sum_all(a):
    v = np.asarray(a.value.sum(dtype=np.float64), dtype=a.dtype).reshape(())
    return _make(v, [(a, lambda g: np.full(a.shape, g, dtype=a.dtype))])


def mean_all(a):
    n = a.value.size
    v = np.asarray(a.value.sum(dtype=np.float64) / n, dtype=a.dtype).reshape(())
    return _make(v, [(a, lambda g: np.full(a.shape, g / n, dtype=a.dtype))])


_COS_EPS = 1e-12


def cosine_rows(x, h):
    """Row-wise cosine similarity, shape (n, 1).

    Rows where either side has (near-)zero norm get similarity 0 and a
    zero gradient; callers treat the corresponding loss term as maximal.
    """
    xv = x.value.astype(np.float64)
    hv = h.value.astype(np.float64)
    nx = np.linalg.norm(xv, axis=1, keepdims=True)
    nh = np.linalg.norm(hv, axis=1, keepdims=True)
    ok = (nx > _COS_EPS) & (nh > _COS_EPS)
    denom = np.where(ok, nx * nh, 1.0)
    cos = np.where(ok, (xv * hv).sum(axis=1, keepdims=True) / denom, 0.0)
    v = cos.astype(x.dtype)

    def vjp_x(g):
        g64 = np.where(ok, g.astype(np.float64), 0.0)
        out = g64 * (hv / denom - cos * xv / np.where(ok, nx * nx, 1.0))
        return out.astype(x.dtype)

    def vjp_h(g):
        g64 = np.where(ok, g.astype(np.float64), 0.0)
        out = g64 * (xv / denom - cos * hv / np.where(ok, nh * nh, 1.0))
        return out.astype(h.dtype)

    return _make(v, [(x, vjp_x), (h, vjp_h)])


def dropout(a, rate, rng, train):
    """Inverted dropout; passthrough when train is False or rate == 0."""
    if not train or rate == 0.0:
        return _make(a.value, [(a, lambda g: g)])
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep).astype(a.dtype) / keep
    return _make(a.value * mask, [(a, lambda g: g * mask)])


def cross_entropy_logits(logits, labels):
    """Mean softmax cross-entropy; labels is an int array of shape (n,)."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.value.astype(np.float64)
    x = x - x.max(axis=1, keepdims=True)
    logz = np.log(np.exp(x).sum(axis=1, keepdims=True))
    logp = x - logz
    n = labels.shape[0]
    v = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype).reshape(())
    probs = np.exp(logp)

    def vjp(g):
        out = probs.copy()
        out[np.arange(n), labels] -= 1.0
        return (out * (float(g) / n)).astype(logits.dtype)

    return _make(v, [(logits, vjp)])


# ---------------------------------------------------------------------------
# backward


def grad(tape, loss, params):
    """Backward pass; returns {name: gradient array} for the given params.

    params is a dict name -> Tensor. Parameters unreachable from the loss
    get a zero gradient.
    """
    if loss.value.size != 1:
        raise ValueError("loss must be a scalar")
    if not np.isfinite(loss.value):
        raise FloatingPointError("non-finite loss")
    for t in tape.nodes:
        t.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is None:
            continue
        if not np.all(np.isfinite(node.grad)):
            raise FloatingPointError("NaN/Inf encountered during backward")
        for parent, vjp in node.parents:
            g = vjp(node.grad)
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
    out = {}
    for name, p in params.items():
        if p.grad is None:
            out[name] = np.zeros_like(p.value)
        else:
            out[name] = np.asarray(p.grad, dtype=p.dtype)
    return out
