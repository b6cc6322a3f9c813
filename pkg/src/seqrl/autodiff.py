"""Reverse-mode gradient engine on numpy arrays.

A recorded forward pass appends (output, backward_fn) pairs to the active
Tape in construction order; Tape.backward replays them in reverse, so the
traversal is iterative and deterministic regardless of graph depth.  With
no tape active the same ops run as plain numpy, which is the scoring path.

The op set is deliberately small: elementwise arithmetic, dense matmul,
tanh/relu/exp, concat/stack/narrow, embedding gather, softmax and
log-softmax over the last axis, per-row gather, batched attention
contractions, clip/minimum, and sum.  Everything is float64 internally;
checkpoint files narrow to float32 at save time.
"""

from __future__ import annotations

import numpy as np

_ACTIVE_TAPE = None


class Tensor:
    """Array plus accumulated gradient; leaves are created with requires_grad."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Records op order during a forward pass; replays it for backward."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor):
        """Seed d(loss)/d(loss) = 1 and push gradients back through the record."""
        if loss.data.ndim != 0:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self.nodes):
            if out.grad is not None:
                backward_fn(out.grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _tracking(*tensors) -> bool:
    return _ACTIVE_TAPE is not None and any(t.requires_grad for t in tensors)


def _record(out: Tensor, backward_fn) -> None:
    out.requires_grad = True
    _ACTIVE_TAPE.nodes.append((out, backward_fn))


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data)
    if _tracking(a, b):
        def backward(g):
            _accum(a, _unbroadcast(g, a.data.shape))
            _accum(b, _unbroadcast(g, b.data.shape))
        _record(out, backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data)
    if _tracking(a, b):
        def backward(g):
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
            _accum(b, _unbroadcast(g * a.data, b.data.shape))
        _record(out, backward)
    return out


def matmul(a, b, transpose_b: bool = False) -> Tensor:
    """2-D product a @ b, or a @ b.T when transpose_b is set."""
    a, b = _wrap(a), _wrap(b)
    bd = b.data.T if transpose_b else b.data
    out = Tensor(a.data @ bd)
    if _tracking(a, b):
        def backward(g):
            if transpose_b:
                _accum(a, g @ b.data)
                _accum(b, g.T @ a.data)
            else:
                _accum(a, g @ b.data.T)
                _accum(b, a.data.T @ g)
        _record(out, backward)
    return out


def tanh(x) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.tanh(x.data))
    if _tracking(x):
        y = out.data

        def backward(g):
            _accum(x, g * (1.0 - y * y))
        _record(out, backward)
    return out


def relu(x) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.maximum(x.data, 0.0))
    if _tracking(x):
        mask = x.data > 0.0

        def backward(g):
            _accum(x, g * mask)
        _record(out, backward)
    return out


def exp(x) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.exp(x.data))
    if _tracking(x):
        y = out.data

        def backward(g):
            _accum(x, g * y)
        _record(out, backward)
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    if _tracking(*tensors):
        sizes = [t.data.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]

        def backward(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                _accum(t, piece)
        _record(out, backward)
    return out


def stack(tensors, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))
    if _tracking(*tensors):
        def backward(g):
            for i, t in enumerate(tensors):
                _accum(t, np.take(g, i, axis=axis))
        _record(out, backward)
    return out


def narrow(x, start: int, stop: int) -> Tensor:
    """Contiguous row slice x[start:stop] along axis 0."""
    x = _wrap(x)
    out = Tensor(x.data[start:stop])
    if _tracking(x):
        def backward(g):
            full = np.zeros_like(x.data)
            full[start:stop] = g
            _accum(x, full)
        _record(out, backward)
    return out


def embedding(weight, idx) -> Tensor:
    """Row gather weight[idx]; idx is a plain integer array."""
    weight = _wrap(weight)
    idx = np.asarray(idx)
    out = Tensor(weight.data[idx])
    if _tracking(weight):
        def backward(g):
            dw = np.zeros_like(weight.data)
            np.add.at(dw, idx, g)
            _accum(weight, dw)
        _record(out, backward)
    return out


def softmax(x) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))
    if _tracking(x):
        s = out.data

        def backward(g):
            _accum(x, s * (g - (g * s).sum(axis=-1, keepdims=True)))
        _record(out, backward)
    return out


def log_softmax(x) -> Tensor:
    x = _wrap(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = Tensor(z - lse)
    if _tracking(x):
        s = np.exp(out.data)

        def backward(g):
            _accum(x, g - s * g.sum(axis=-1, keepdims=True))
        _record(out, backward)
    return out


def gather_rows(x, idx) -> Tensor:
    """out[b] = x[b, idx[b]] for a 2-D x."""
    x = _wrap(x)
    idx = np.asarray(idx)
    rows = np.arange(x.data.shape[0])
    out = Tensor(x.data[rows, idx])
    if _tracking(x):
        def backward(g):
            dx = np.zeros_like(x.data)
            np.add.at(dx, (rows, idx), g)
            _accum(x, dx)
        _record(out, backward)
    return out


def attn_scores(q, keys) -> Tensor:
    """out[b, t] = q[b] . keys[b, t] for q (B,H), keys (B,T,H)."""
    q, keys = _wrap(q), _wrap(keys)
    out = Tensor(np.einsum("bh,bth->bt", q.data, keys.data))
    if _tracking(q, keys):
        def backward(g):
            _accum(q, np.einsum("bt,bth->bh", g, keys.data))
            _accum(keys, np.einsum("bt,bh->bth", g, q.data))
        _record(out, backward)
    return out


def attn_context(weights, values) -> Tensor:
    """out[b] = sum_t weights[b, t] * values[b, t] for weights (B,T), values (B,T,H)."""
    weights, values = _wrap(weights), _wrap(values)
    out = Tensor(np.einsum("bt,bth->bh", weights.data, values.data))
    if _tracking(weights, values):
        def backward(g):
            _accum(weights, np.einsum("bh,bth->bt", g, values.data))
            _accum(values, np.einsum("bt,bh->bth", weights.data, g))
        _record(out, backward)
    return out


def minimum(a, b) -> Tensor:
    """Elementwise min; the gradient follows the smaller branch (ties go to a)."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data <= b.data
    out = Tensor(np.where(take_a, a.data, b.data))
    if _tracking(a, b):
        def backward(g):
            _accum(a, _unbroadcast(g * take_a, a.data.shape))
            _accum(b, _unbroadcast(g * ~take_a, b.data.shape))
        _record(out, backward)
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only where x is strictly inside."""
    x = _wrap(x)
    out = Tensor(np.clip(x.data, lo, hi))
    if _tracking(x):
        inside = (x.data >= lo) & (x.data <= hi)

        def backward(g):
            _accum(x, g * inside)
        _record(out, backward)
    return out


def tsum(x) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    x = _wrap(x)
    out = Tensor(x.data.sum())
    if _tracking(x):
        def backward(g):
            _accum(x, np.full_like(x.data, float(g)))
        _record(out, backward)
    return out
