"""NCHW tensor kernels and their adjoints.

Every forward kernel here is a pure function of numpy arrays. Each one that
the network differentiates through has a matching ``*_vjp`` function that maps
an output cotangent back to input (and weight) cotangents. Kernels keep the
dtype of their input, so the same code runs in float32 for training and in
float64 for finite-difference checks.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import erf

from .errors import ContractError

LN_EPS = 1e-6
SHIFT_GROUPS = 5
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def check_tensor(x: np.ndarray, name: str = "x") -> None:
    if x.ndim != 4:
        raise ContractError(f"{name} must be rank-4 NCHW, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ContractError(f"{name} has an empty dimension: {x.shape}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _conv_geometry(x, w, stride, pad, groups):
    check_tensor(x)
    if w.ndim != 4:
        raise ContractError(f"kernel must be (c_out, c_in/groups, kh, kw), got {w.shape}")
    if stride <= 0:
        raise ContractError(f"stride must be positive, got {stride}")
    if pad < 0:
        raise ContractError(f"pad must be non-negative, got {pad}")
    n, c, h, wd = x.shape
    cout, cin_g, kh, kw = w.shape
    if groups < 1 or c % groups or cout % groups:
        raise ContractError(f"groups={groups} does not divide c_in={c} and c_out={cout}")
    if c != groups * cin_g:
        raise ContractError(
            f"input has {c} channels but kernel expects {groups}*{cin_g}={groups * cin_g}")
    if kh != kw:
        raise ContractError(f"only square kernels are supported, got {kh}x{kw}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ContractError(f"kernel {kh}x{kw} larger than padded input {h}x{wd}")
    return n, c, h, wd, cout, cin_g, kh, kw, oh, ow


def _tap(xp, ky, kx, oh, ow, stride):
    return xp[..., ky:ky + stride * (oh - 1) + 1:stride, kx:kx + stride * (ow - 1) + 1:stride]


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None,
           stride: int = 1, pad: int = 0, groups: int = 1) -> np.ndarray:
    """Grouped 2-D cross-correlation with zero padding.

    ``w`` has shape ``(c_out, c_in // groups, k, k)``; ``b`` has ``c_out``
    entries or is None.
    """
    n, c, h, wd, cout, cin_g, kh, kw, oh, ow = _conv_geometry(x, w, stride, pad, groups)
    if b is not None and b.shape != (cout,):
        raise ContractError(f"bias must have shape ({cout},), got {b.shape}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cout_g = cout // groups

    if kh == 1 and stride == 1 and groups == 1:
        out = np.matmul(w[:, :, 0, 0], xp.reshape(n, c, oh * ow)).reshape(n, cout, oh, ow)
    elif cin_g == 1 and cout_g == 1:
        out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
        for ky in range(kh):
            for kx in range(kw):
                out += w[None, :, 0, ky, kx, None, None] * _tap(xp, ky, kx, oh, ow, stride)
    else:
        xg = xp.reshape(n, groups, cin_g, xp.shape[2], xp.shape[3])
        wg = w.reshape(groups, cout_g, cin_g, kh, kw)
        acc = np.zeros((n, groups, cout_g, oh * ow), dtype=x.dtype)
        for ky in range(kh):
            for kx in range(kw):
                patch = _tap(xg, ky, kx, oh, ow, stride).reshape(n, groups, cin_g, oh * ow)
                acc += np.matmul(wg[:, :, :, ky, kx], patch)
        out = acc.reshape(n, cout, oh, ow)
    if b is not None:
        out = out + b[None, :, None, None]
    return out.astype(x.dtype, copy=False)


def conv2d_vjp(g: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int = 1,
               pad: int = 0, groups: int = 1):
    """Return ``(grad_x, grad_w, grad_b)`` for :func:`conv2d`."""
    n, c, h, wd, cout, cin_g, kh, kw, oh, ow = _conv_geometry(x, w, stride, pad, groups)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cout_g = cout // groups
    gb = g.sum(axis=(0, 2, 3))

    if kh == 1 and stride == 1 and groups == 1:
        gf = g.reshape(n, cout, oh * ow)
        xf = xp.reshape(n, c, oh * ow)
        gw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0)[:, :, None, None]
        gxp = np.matmul(w[:, :, 0, 0].T, gf).reshape(xp.shape)
    elif cin_g == 1 and cout_g == 1:
        gw = np.zeros_like(w)
        gxp = np.zeros_like(xp)
        for ky in range(kh):
            for kx in range(kw):
                gw[:, 0, ky, kx] = (g * _tap(xp, ky, kx, oh, ow, stride)).sum(axis=(0, 2, 3))
                _tap(gxp, ky, kx, oh, ow, stride)[...] += w[None, :, 0, ky, kx, None, None] * g
    else:
        xg = xp.reshape(n, groups, cin_g, xp.shape[2], xp.shape[3])
        wg = w.reshape(groups, cout_g, cin_g, kh, kw)
        gg = g.reshape(n, groups, cout_g, oh * ow)
        gw = np.zeros_like(wg)
        gxg = np.zeros_like(xg)
        for ky in range(kh):
            for kx in range(kw):
                patch = _tap(xg, ky, kx, oh, ow, stride).reshape(n, groups, cin_g, oh * ow)
                gw[:, :, :, ky, kx] = np.matmul(gg, patch.transpose(0, 1, 3, 2)).sum(axis=0)
                back = np.matmul(wg[:, :, :, ky, kx].transpose(0, 2, 1), gg)
                _tap(gxg, ky, kx, oh, ow, stride)[...] += back.reshape(n, groups, cin_g, oh, ow)
        gw = gw.reshape(w.shape)
        gxp = gxg.reshape(xp.shape)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    return gx.astype(x.dtype, copy=False), gw.astype(w.dtype, copy=False), gb


def depthwise_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """3x3 per-channel convolution, stride 1, pad 1."""
    check_tensor(x)
    if w.shape != (x.shape[1], 1, 3, 3):
        raise ContractError(
            f"depthwise kernel must be ({x.shape[1]}, 1, 3, 3) for {x.shape[1]} channels, got {w.shape}")
    return conv2d(x, w, b, stride=1, pad=1, groups=x.shape[1])


def depthwise_conv2d_vjp(g, x, w):
    return conv2d_vjp(g, x, w, stride=1, pad=1, groups=x.shape[1])


# ---------------------------------------------------------------------------
# pooling and resampling
# ---------------------------------------------------------------------------

def adaptive_max_pool(x: np.ndarray, out_h: int, out_w: int):
    """Adaptive max pooling; returns ``(out, argmax)``.

    Window ``(i, j)`` spans rows ``[floor(i*h/out_h), ceil((i+1)*h/out_h))`` and
    the analogous columns. ``argmax`` holds the flat ``h*w`` index of the
    selected element within each plane; ties go to the lowest index.
    """
    check_tensor(x)
    n, c, h, w = x.shape
    if not (1 <= out_h <= h and 1 <= out_w <= w):
        raise ContractError(f"pool output {out_h}x{out_w} must lie within input {h}x{w}")
    if h % out_h == 0 and w % out_w == 0:
        kh, kw = h // out_h, w // out_w
        win = x.reshape(n, c, out_h, kh, out_w, kw).transpose(0, 1, 2, 4, 3, 5)
        win = win.reshape(n, c, out_h, out_w, kh * kw)
        a = win.argmax(axis=-1)
        out = np.take_along_axis(win, a[..., None], axis=-1)[..., 0]
        rows = np.arange(out_h)[:, None] * kh + a // kw
        cols = np.arange(out_w)[None, :] * kw + a % kw
        return out, rows * w + cols

    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    idx = np.empty((n, c, out_h, out_w), dtype=np.int64)
    for i in range(out_h):
        r0, r1 = (i * h) // out_h, -((-(i + 1) * h) // out_h)
        for j in range(out_w):
            c0, c1 = (j * w) // out_w, -((-(j + 1) * w) // out_w)
            win = x[:, :, r0:r1, c0:c1].reshape(n, c, -1)
            a = win.argmax(axis=-1)
            out[:, :, i, j] = np.take_along_axis(win, a[..., None], axis=-1)[..., 0]
            idx[:, :, i, j] = (r0 + a // (c1 - c0)) * w + c0 + a % (c1 - c0)
    return out, idx


def adaptive_max_pool_vjp(g: np.ndarray, argmax: np.ndarray, in_shape) -> np.ndarray:
    n, c, h, w = in_shape
    plane = np.arange(n * c, dtype=np.int64).reshape(n, c, 1, 1) * (h * w)
    flat = np.bincount((plane + argmax).ravel(), weights=g.ravel(), minlength=n * c * h * w)
    return flat.reshape(in_shape).astype(g.dtype, copy=False)


def _keys_cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    near = ((a + 2) * t - (a + 3)) * t * t + 1
    far = ((a * t - 5 * a) * t + 8 * a) * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


@lru_cache(maxsize=256)
def resample_matrix(n_in: int, n_out: int, kind: str) -> np.ndarray:
    """Dense ``(n_out, n_in)`` interpolation matrix along one axis.

    All kinds use half-pixel centres: output ``i`` samples the input at
    ``(i + 0.5) * n_in / n_out - 0.5``.
    """
    if n_in < 1 or n_out < 1:
        raise ContractError(f"resample sizes must be >= 1, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in))
    ratio = n_in / n_out
    rows = np.arange(n_out)
    if kind == "nearest":
        m[rows, np.minimum((rows * n_in) // n_out, n_in - 1)] = 1.0
    elif kind == "bilinear":
        src = np.clip((rows + 0.5) * ratio - 0.5, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        frac = src - i0
        np.add.at(m, (rows, i0), 1.0 - frac)
        np.add.at(m, (rows, i1), frac)
    elif kind == "bicubic":
        # antialias: stretch the kernel by the downscale factor
        stretch = max(ratio, 1.0)
        support = 2.0 * stretch
        for i in rows:
            center = (i + 0.5) * ratio
            taps = np.arange(math.floor(center - support - 0.5), math.ceil(center + support + 0.5) + 1)
            wts = _keys_cubic((taps + 0.5 - center) / stretch)
            np.add.at(m[i], np.clip(taps, 0, n_in - 1), wts)
        m /= m.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown resample kind {kind!r}")
    m.flags.writeable = False
    return m


def resize(x: np.ndarray, out_h: int, out_w: int, kind: str) -> np.ndarray:
    check_tensor(x)
    mh = resample_matrix(x.shape[2], out_h, kind).astype(x.dtype)
    mw = resample_matrix(x.shape[3], out_w, kind).astype(x.dtype)
    return np.matmul(np.matmul(mh, x), mw.T)


def resize_vjp(g: np.ndarray, in_shape, kind: str) -> np.ndarray:
    mh = resample_matrix(in_shape[2], g.shape[2], kind).astype(g.dtype)
    mw = resample_matrix(in_shape[3], g.shape[3], kind).astype(g.dtype)
    return np.matmul(np.matmul(mh.T, g), mw)


def nearest_upsample(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    check_tensor(x)
    h, w = x.shape[2:]
    if out_h < h or out_w < w:
        raise ContractError(f"nearest_upsample cannot shrink {h}x{w} to {out_h}x{out_w}")
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return x[:, :, rows][:, :, :, cols]


def nearest_upsample_vjp(g, in_shape):
    return resize_vjp(g, in_shape, "nearest")


def bilinear_resize(x, out_h, out_w):
    return resize(x, out_h, out_w, "bilinear")


def bicubic_resize(x, out_h, out_w):
    """Keys (a=-0.5) bicubic resize, antialiased when shrinking."""
    return resize(x, out_h, out_w, "bicubic")


# ---------------------------------------------------------------------------
# channel rearrangements
# ---------------------------------------------------------------------------

def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    check_tensor(x)
    n, c, h, w = x.shape
    if r < 1 or c % (r * r):
        raise ContractError(f"channels {c} not divisible by r^2={r * r}")
    co = c // (r * r)
    return x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse index map of :func:`pixel_shuffle` (and its adjoint)."""
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ContractError(f"spatial dims {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    return x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)


def channel_shift(x: np.ndarray) -> np.ndarray:
    """Shift five contiguous channel groups left, right, up, down and not at all."""
    check_tensor(x)
    c = x.shape[1]
    if c % SHIFT_GROUPS:
        raise ContractError(f"shift-conv needs channels divisible by {SHIFT_GROUPS}, got {c}")
    k = c // SHIFT_GROUPS
    out = np.zeros_like(x)
    out[:, 0 * k:1 * k, :, :-1] = x[:, 0 * k:1 * k, :, 1:]
    out[:, 1 * k:2 * k, :, 1:] = x[:, 1 * k:2 * k, :, :-1]
    out[:, 2 * k:3 * k, :-1, :] = x[:, 2 * k:3 * k, 1:, :]
    out[:, 3 * k:4 * k, 1:, :] = x[:, 3 * k:4 * k, :-1, :]
    out[:, 4 * k:] = x[:, 4 * k:]
    return out


def channel_shift_vjp(g: np.ndarray) -> np.ndarray:
    k = g.shape[1] // SHIFT_GROUPS
    out = np.zeros_like(g)
    out[:, 0 * k:1 * k, :, 1:] = g[:, 0 * k:1 * k, :, :-1]
    out[:, 1 * k:2 * k, :, :-1] = g[:, 1 * k:2 * k, :, 1:]
    out[:, 2 * k:3 * k, 1:, :] = g[:, 2 * k:3 * k, :-1, :]
    out[:, 3 * k:4 * k, :-1, :] = g[:, 3 * k:4 * k, 1:, :]
    out[:, 4 * k:] = g[:, 4 * k:]
    return out


def shift_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    if w.shape[2:] != (1, 1):
        raise ContractError(f"shift-conv uses a 1x1 kernel, got {w.shape}")
    return conv2d(channel_shift(x), w, b)


# ---------------------------------------------------------------------------
# normalisation and pointwise
# ---------------------------------------------------------------------------

def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float = LN_EPS):
    """Normalise the channel vector at every pixel; returns ``(y, cache)``."""
    check_tensor(x)
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ContractError(f"layer_norm affine params must have shape ({c},)")
    if eps < 0:
        raise ContractError("eps must be non-negative")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    xhat = xc * rstd
    y = xhat * scale[None, :, None, None] + shift[None, :, None, None]
    return y.astype(x.dtype, copy=False), (xhat, rstd)


def layer_norm_vjp(g, scale, cache):
    xhat, rstd = cache
    gs = (g * xhat).sum(axis=(0, 2, 3))
    gb = g.sum(axis=(0, 2, 3))
    gxh = g * scale[None, :, None, None]
    gx = (gxh - gxh.mean(axis=1, keepdims=True)
          - xhat * (gxh * xhat).mean(axis=1, keepdims=True)) * rstd
    return gx.astype(g.dtype, copy=False), gs, gb


def gelu(x: np.ndarray) -> np.ndarray:
    return (0.5 * x * (1.0 + erf(x / _SQRT2))).astype(x.dtype, copy=False)


def gelu_vjp(g, x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (g * (cdf + x * pdf)).astype(g.dtype, copy=False)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    check_tensor(x)
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_vjp(g, in_shape):
    h, w = in_shape[2:]
    return np.broadcast_to(g / (h * w), in_shape).copy()
