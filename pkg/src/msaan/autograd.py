"""A small tape-free reverse-mode autodiff over the kernels module.

Each :class:`Var` remembers its parents and a closure mapping its cotangent
to theirs. :func:`backward` walks the graph in reverse topological order.
The closures delegate to the ``*_vjp`` functions in :mod:`msaan.kernels`, so
the adjoints tested there are exactly the ones used in training.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import fft as _fft
from . import kernels as K
from .errors import ContractError, DivergenceError

_GRAD_ENABLED = True
# names of ops whose adjoint is deliberately skewed; see corrupt_adjoint()
_CORRUPTED: set[str] = set()


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def corrupt_adjoint(op: str, factor: float = 1.1):
    """Scale the first input cotangent of ``op`` by ``factor``.

    Only for negative-control tests of the gradient checker.
    """
    _CORRUPTED.add(op)
    global _CORRUPT_FACTOR
    prev, _CORRUPT_FACTOR = _CORRUPT_FACTOR, factor
    try:
        yield
    finally:
        _CORRUPTED.discard(op)
        _CORRUPT_FACTOR = prev


_CORRUPT_FACTOR = 1.1


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, requires_grad: bool = False, parents: Sequence["Var"] = (),
                 backward_fn: Callable | None = None, op: str = "leaf"):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, parents, backward_fn, op) -> Var:
    parents = tuple(parents)
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if not needs:
        return Var(value, op=op)
    if op in _CORRUPTED:
        inner, factor = backward_fn, _CORRUPT_FACTOR

        def backward_fn(g):
            grads = list(inner(g))
            grads[0] = grads[0] * factor
            return grads
    return Var(value, True, parents, backward_fn, op)


def backward(loss: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf needing it."""
    if seed is None:
        if loss.value.size != 1:
            raise ContractError("backward() without a seed needs a scalar loss")
        if not np.isfinite(loss.value).all():
            raise DivergenceError(f"non-finite loss {loss.value}")
        seed = np.ones_like(loss.value)
    order: list[Var] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        v, expanded = stack.pop()
        if expanded:
            order.append(v)
            continue
        if id(v) in seen or not v.requires_grad:
            continue
        seen.add(id(v))
        stack.append((v, True))
        for p in v.parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): seed}
    for v in reversed(order):
        g = grads.pop(id(v), None)
        if g is None:
            continue
        if v.backward_fn is None:
            v.grad = g if v.grad is None else v.grad + g
            continue
        for p, gp in zip(v.parents, v.backward_fn(g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = gp if key not in grads else grads[key] + gp


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)), "mul")


def total(x) -> Var:
    x = as_var(x)
    return _node(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


def mean(x) -> Var:
    x = as_var(x)
    n = x.value.size
    return _node(x.value.mean(), (x,),
                 lambda g: (np.full(x.shape, g / n, dtype=x.value.dtype),), "mean")


def absolute(x) -> Var:
    x = as_var(x)
    return _node(np.abs(x.value), (x,), lambda g: (g * np.sign(x.value),), "abs")


def concat(xs: Sequence[Var], axis: int = 1) -> Var:
    xs = [as_var(x) for x in xs]
    edges = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _node(np.concatenate([x.value for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, edges, axis=axis)), "concat")


def channel_slice(x, start: int, stop: int) -> Var:
    x = as_var(x)

    def bw(g):
        out = np.zeros_like(x.value)
        out[:, start:stop] = g
        return (out,)
    return _node(x.value[:, start:stop], (x,), bw, "slice")


def split_channels(x, parts: int) -> list[Var]:
    x = as_var(x)
    c = x.shape[1]
    if c % parts:
        raise ContractError(f"cannot split {c} channels into {parts} equal groups")
    k = c // parts
    return [channel_slice(x, i * k, (i + 1) * k) for i in range(parts)]


def zero_pad(x, out_h: int, out_w: int) -> Var:
    """Pad bottom/right with zeros up to ``out_h x out_w``."""
    x = as_var(x)
    h, w = x.shape[2:]
    if out_h == h and out_w == w:
        return x
    val = np.pad(x.value, ((0, 0), (0, 0), (0, out_h - h), (0, out_w - w)))
    return _node(val, (x,), lambda g: (g[:, :, :h, :w],), "pad")


# ---------------------------------------------------------------------------
# kernel ops
# ---------------------------------------------------------------------------

def conv2d(x, w, b=None, stride: int = 1, pad: int = 0, groups: int = 1) -> Var:
    x, w = as_var(x), as_var(w)
    parents = (x, w) if b is None else (x, w, as_var(b))
    out = K.conv2d(x.value, w.value, None if b is None else parents[2].value, stride, pad, groups)

    def bw(g):
        gx, gw, gb = K.conv2d_vjp(g, x.value, w.value, stride, pad, groups)
        return (gx, gw) if b is None else (gx, gw, gb)
    op = "depthwise_conv2d" if groups > 1 and groups == x.shape[1] == w.shape[0] else "conv2d"
    return _node(out, parents, bw, op)


def depthwise_conv2d(x, w, b=None) -> Var:
    x = as_var(x)
    if as_var(w).shape != (x.shape[1], 1, 3, 3):
        raise ContractError(f"depthwise kernel shape {as_var(w).shape} does not match {x.shape[1]} channels")
    return conv2d(x, w, b, 1, 1, x.shape[1])


def adaptive_max_pool(x, out_h: int, out_w: int) -> Var:
    x = as_var(x)
    out, idx = K.adaptive_max_pool(x.value, out_h, out_w)
    return _node(out, (x,), lambda g: (K.adaptive_max_pool_vjp(g, idx, x.shape),), "adaptive_max_pool")


def nearest_upsample(x, out_h: int, out_w: int) -> Var:
    x = as_var(x)
    return _node(K.nearest_upsample(x.value, out_h, out_w), (x,),
                 lambda g: (K.nearest_upsample_vjp(g, x.shape),), "nearest_upsample")


def bilinear_resize(x, out_h: int, out_w: int) -> Var:
    x = as_var(x)
    return _node(K.bilinear_resize(x.value, out_h, out_w), (x,),
                 lambda g: (K.resize_vjp(g, x.shape, "bilinear"),), "bilinear_resize")


def bicubic_resize(x, out_h: int, out_w: int) -> Var:
    x = as_var(x)
    return _node(K.bicubic_resize(x.value, out_h, out_w), (x,),
                 lambda g: (K.resize_vjp(g, x.shape, "bicubic"),), "bicubic_resize")


def pixel_shuffle(x, r: int) -> Var:
    x = as_var(x)
    return _node(K.pixel_shuffle(x.value, r), (x,), lambda g: (K.pixel_unshuffle(g, r),), "pixel_shuffle")


def channel_shift(x) -> Var:
    x = as_var(x)
    return _node(K.channel_shift(x.value), (x,), lambda g: (K.channel_shift_vjp(g),), "shift")


def shift_conv(x, w, b=None) -> Var:
    return conv2d(channel_shift(x), w, b)


def layer_norm(x, scale, shift, eps: float = K.LN_EPS) -> Var:
    x, scale, shift = as_var(x), as_var(scale), as_var(shift)
    y, cache = K.layer_norm(x.value, scale.value, shift.value, eps)
    return _node(y, (x, scale, shift), lambda g: K.layer_norm_vjp(g, scale.value, cache), "layer_norm")


def gelu(x) -> Var:
    x = as_var(x)
    return _node(K.gelu(x.value), (x,), lambda g: (K.gelu_vjp(g, x.value),), "gelu")


def global_avg_pool(x) -> Var:
    x = as_var(x)
    return _node(K.global_avg_pool(x.value), (x,),
                 lambda g: (K.global_avg_pool_vjp(g, x.shape),), "global_avg_pool")


def fft2(x) -> tuple[Var, Var]:
    """Real and imaginary parts of the spectrum as two graph nodes."""
    x = as_var(x)
    spec = _fft.fft2(x.value)
    re = _node(spec.re, (x,), lambda g: (_fft.fft2_vjp(g, np.zeros_like(g)),), "fft2")
    im = _node(spec.im, (x,), lambda g: (_fft.fft2_vjp(np.zeros_like(g), g),), "fft2")
    return re, im
