"""Minimal tape-free reverse-mode autodiff over numpy arrays.

Every :class:`Var` remembers its parents and a closure mapping the output
gradient to parent gradients.  :func:`grad` walks the graph in reverse
topological order.  All values are float64.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a value that must stay finite."""


def check_finite(a: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite {what} (shape {a.shape})")
    return a


class Var:
    __slots__ = ("value", "parents", "backward", "name")

    def __init__(self, value, parents: Sequence["Var"] = (), backward: Callable | None = None,
                 name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward = backward
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}{', ' + self.name if self.name else ''})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __neg__(self):
        return neg(self)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def constant(x) -> Var:
    return Var(x)


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return Var(a.value + b.value, (a, b),
               lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Var) -> Var:
    return Var(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    return Var(av * bv, (a, b),
               lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    out = av / bv
    return Var(out, (a, b),
               lambda g: (_unbroadcast(g / bv, av.shape),
                          _unbroadcast(-g * out / bv, bv.shape)))


def linear(x: Var, w: Var, b: Var) -> Var:
    """Row-batched affine map ``x @ w.T + b``; x is (N, in), w is (out, in)."""
    xv, wv = x.value, w.value

    def back(g):
        return g @ wv, g.T @ xv, g.sum(axis=0)

    return Var(xv @ wv.T + b.value, (x, w, b), back)


def relu(a: Var) -> Var:
    # subgradient at exactly 0 is 0
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def abs_(a: Var) -> Var:
    s = np.sign(a.value)
    return Var(np.abs(a.value), (a,), lambda g: (g * s,))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a: Var) -> Var:
    av = a.value
    return Var(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a: Var) -> Var:
    out = np.sqrt(a.value)

    def back(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return Var(out, (a,), back)


def maximum_const(a: Var, floor: float) -> Var:
    """Elementwise ``max(a, floor)``; gradient flows only where a > floor."""
    mask = a.value > floor
    return Var(np.where(mask, a.value, floor), (a,), lambda g: (g * mask,))


def where_zero(mask: np.ndarray, a: Var) -> Var:
    """Zero out entries where ``mask`` is true (no gradient through them)."""
    keep = ~mask
    return Var(np.where(keep, a.value, 0.0), (a,), lambda g: (g * keep,))


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Var) -> Var:
    n = a.value.size
    shape = a.shape
    return Var(a.value.mean(), (a,), lambda g: (np.full(shape, g / n),))


def log_softmax(a: Var) -> Var:
    """Row-wise log-softmax of an (N, K) array."""
    z = a.value - a.value.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(out)
    return Var(out, (a,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def softmax(a: Var) -> Var:
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return Var(p, (a,), lambda g: (p * (g - (g * p).sum(axis=1, keepdims=True)),))


def pick(a: Var, idx: np.ndarray) -> Var:
    """Select ``a[i, idx[i]]`` for every row i."""
    rows = np.arange(a.shape[0])
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return Var(a.value[rows, idx], (a,), back)


def conv2d(x: Var, kernel: Var, bias: Var, in_shape, stride: int, padding: int) -> Var:
    """2-D convolution on row-flattened (N, C*H*W) inputs.

    Output is row-flattened (N, O*OH*OW) in channel-major order.
    """
    idx, out_hw = conv_patch_index(in_shape, kernel.shape[2:], stride, padding)
    n = x.shape[0]
    o = kernel.shape[0]
    xe = np.concatenate([x.value, np.zeros((n, 1))], axis=1)
    cols = xe[:, idx]                       # (N, P, C*kh*kw)
    kmat = kernel.value.reshape(o, -1)      # (O, C*kh*kw)
    out = cols @ kmat.T + bias.value        # (N, P, O)
    flat = out.transpose(0, 2, 1).reshape(n, -1)
    kshape = kernel.shape
    width = x.shape[1]

    def back(g):
        g3 = g.reshape(n, o, -1).transpose(0, 2, 1)        # (N, P, O)
        gk = np.einsum("npo,npk->ok", g3, cols).reshape(kshape)
        gb = g3.sum(axis=(0, 1))
        gcols = g3 @ kmat                                   # (N, P, C*kh*kw)
        gx = np.zeros((n, width + 1))
        for i in range(n):
            np.add.at(gx[i], idx, gcols[i])
        return gx[:, :width], gk, gb

    return Var(flat, (x, kernel, bias), back)


_PATCH_CACHE: dict = {}


def conv_patch_index(in_shape, ksize, stride: int, padding: int):
    """Index array (P, C*kh*kw) into a flattened input with a trailing zero slot.

    Out-of-bounds (padding) taps point at index C*H*W, the zero slot.
    """
    key = (tuple(in_shape), tuple(ksize), stride, padding)
    if key in _PATCH_CACHE:
        return _PATCH_CACHE[key]
    c, h, w = in_shape
    kh, kw = ksize
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValueError(f"conv kernel {ksize} with stride {stride}, padding {padding} "
                         f"does not fit input {in_shape}")
    oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
    ci, ki, kj = np.meshgrid(np.arange(c), np.arange(kh), np.arange(kw), indexing="ij")
    rows = oi.reshape(-1, 1) * stride - padding + ki.reshape(1, -1)
    cols = oj.reshape(-1, 1) * stride - padding + kj.reshape(1, -1)
    chan = np.broadcast_to(ci.reshape(1, -1), rows.shape)
    valid = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    idx = np.where(valid, chan * h * w + rows * w + cols, c * h * w)
    _PATCH_CACHE[key] = (idx, (oh, ow))
    return idx, (oh, ow)


def grad(root: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Reverse-mode gradients of a scalar ``root`` with respect to ``wrt``.

    Leaves not connected to ``root`` get a zero gradient.
    """
    if root.value.size != 1:
        raise ValueError(f"gradient root must be scalar, got shape {root.shape}")
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node.backward is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return [np.asarray(grads.get(id(v), np.zeros_like(v.value))).reshape(v.shape) for v in wrt]
