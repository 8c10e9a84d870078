"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every op returns a :class:`Tensor`. A result only records its parents when
at least one input requires a gradient, so inference-only forwards build no
graph. Gradients are never updated in place, which keeps shared arrays safe.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents: tuple = (), backward_fn=None, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(value, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, tuple(parents), backward_fn, True)
    return Tensor(value)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not loss.requires_grad:
        return
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value) if grad is None else np.asarray(grad, dtype=np.float64)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            if node.parents:
                node.grad = None  # free intermediate memory


# elementwise -------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    out = a.value + b.value

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))
    return _make(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)

    def bw(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, -_unbroadcast(g, b.shape))
    return _make(a.value - b.value, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)

    def bw(g):
        _acc(a, _unbroadcast(g * b.value, a.shape))
        _acc(b, _unbroadcast(g * a.value, b.shape))
    return _make(a.value * b.value, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    pos = x.value > 0

    def bw(g):
        _acc(x, g * pos)
    return _make(np.where(pos, x.value, 0.0), (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))

    def bw(g):
        _acc(x, g * s * (1.0 - s))
    return _make(s, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.value)

    def bw(g):
        _acc(x, g * (1.0 - t * t))
    return _make(t, (x,), bw)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.value)

    def bw(g):
        _acc(x, g * e)
    return _make(e, (x,), bw)


# reductions and shape ----------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        _acc(x, np.broadcast_to(g, x.shape))
    return _make(np.sum(x.value), (x,), bw)


def sum_rows(x: Tensor) -> Tensor:
    """Sum over the last axis of a 2-D tensor."""
    def bw(g):
        _acc(x, np.broadcast_to(g[:, None], x.shape))
    return _make(x.value.sum(axis=1), (x,), bw)


def dot_const(x: Tensor, c) -> Tensor:
    """``sum(x * c)`` for a constant array ``c`` of the same shape."""
    c = np.asarray(c, dtype=np.float64)

    def bw(g):
        _acc(x, g * c)
    return _make(np.sum(x.value * c), (x,), bw)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def bw(g):
        _acc(x, g.reshape(x.shape))
    return _make(x.value.reshape(shape), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [constant(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                _acc(x, g[tuple(idx)])
    return _make(np.concatenate([x.value for x in xs], axis=axis), xs, bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(x.value)
        full[:, start:stop] = g
        _acc(x, full)
    return _make(x.value[:, start:stop], (x,), bw)


def take_rows(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(idx, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        _acc(x, full)
    return _make(x.value[idx], (x,), bw)


def gather_multi(sources: Sequence[Tensor], which, rows) -> Tensor:
    """Rows ``sources[which[i]][rows[i]]`` stacked into one 2-D tensor."""
    which = np.asarray(which, dtype=np.intp)
    rows = np.asarray(rows, dtype=np.intp)
    out = np.stack([sources[s].value[r] for s, r in zip(which, rows)])

    def bw(g):
        for s, src in enumerate(sources):
            sel = which == s
            if src.requires_grad and sel.any():
                full = np.zeros_like(src.value)
                np.add.at(full, rows[sel], g[sel])
                _acc(src, full)
    return _make(out, tuple(sources), bw)


def embedding_lookup(table: Tensor, idx) -> Tensor:
    return take_rows(table, idx)


def gather_logprob(logp: Tensor, rows, cols) -> Tensor:
    """Vector ``logp[rows[i], cols[i]]``."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def bw(g):
        full = np.zeros_like(logp.value)
        np.add.at(full, (rows, cols), g)
        _acc(logp, full)
    return _make(logp.value[rows, cols], (logp,), bw)


# linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            _acc(a, g @ b.value.T)
        if b.requires_grad:
            _acc(b, a.value.T @ g)
    return _make(a.value @ b.value, (a, b), bw)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def log_softmax(x: Tensor, mask_add=None) -> Tensor:
    """Row-wise log-softmax of ``x + mask_add`` (``mask_add`` is a constant)."""
    z = x.value if mask_add is None else x.value + mask_add
    m = z.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        _acc(x, g - p * g.sum(axis=-1, keepdims=True))
    return _make(out, (x,), bw)


def row_entropy(logp: Tensor) -> Tensor:
    """``-sum(p log p)`` per row, given row-wise log-probabilities."""
    lp = logp.value
    p = np.exp(lp)
    h = -(p * lp).sum(axis=1)

    def bw(g):
        _acc(logp, -g[:, None] * p * (lp + 1.0))
    return _make(h, (logp,), bw)


# convolutional -----------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 'same' convolution, NHWC input ``[N,H,W,C]``, weights ``[3,3,C,F]``."""
    n, h, wd, c = x.shape
    kh, kw, cw, f = w.shape
    if cw != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, kernel {cw}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.value, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # [N,H,W,C,kh,kw]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * wd, kh * kw * c)
    wm = w.value.reshape(kh * kw * c, f)
    out = (cols @ wm).reshape(n, h, wd, f) + b.value

    def bw(g):
        gf = g.reshape(n * h * wd, f)
        if w.requires_grad:
            _acc(w, (cols.T @ gf).reshape(w.shape))
        if b.requires_grad:
            _acc(b, gf.sum(axis=0))
        if x.requires_grad:
            dcols = (gf @ wm.T).reshape(n, h, wd, kh, kw, c)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, i, j, :]
            _acc(x, dxp[:, ph:ph + h, pw:pw + wd, :])
    return _make(out, (x, w, b), bw)


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    n, h, w, c = x.shape
    if h % k or w % k:
        raise ValueError(f"maxpool{k} needs dims divisible by {k}, got {h}x{w}")
    blocks = x.value.reshape(n, h // k, k, w // k, k, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // k, w // k, c, k * k)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, h // k, w // k, c, k, k).transpose(0, 1, 4, 2, 5, 3)
        _acc(x, gb.reshape(x.shape))
    return _make(out, (x,), bw)


# recurrent ---------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step. ``w`` is ``[in + hidden, 4 * hidden]`` with gate order i, f, g, o."""
    hid = h.shape[1]
    xh = np.concatenate([x.value, h.value], axis=1)
    if w.shape != (xh.shape[1], 4 * hid):
        raise ValueError(f"lstm weight shape {w.shape} does not fit input {xh.shape}")
    z = xh @ w.value + b.value
    sig = lambda v: 0.5 * (1.0 + np.tanh(0.5 * v))
    i, f, o = sig(z[:, :hid]), sig(z[:, hid:2 * hid]), sig(z[:, 3 * hid:])
    gg = np.tanh(z[:, 2 * hid:3 * hid])
    c_new = f * c.value + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    nx = x.shape[1]

    def bw(g):
        gh, gc = g[:, :hid], g[:, hid:]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c.value * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=1)
        if w.requires_grad:
            _acc(w, xh.T @ dz)
        if b.requires_grad:
            _acc(b, dz.sum(axis=0))
        dxh = dz @ w.value.T
        _acc(x, dxh[:, :nx])
        _acc(h, dxh[:, nx:])
        _acc(c, dc * f)
    joint = _make(np.concatenate([h_new, c_new], axis=1), (x, h, c, w, b), bw)
    return slice_cols(joint, 0, hid), slice_cols(joint, hid, 2 * hid)
