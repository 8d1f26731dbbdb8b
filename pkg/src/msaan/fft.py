"""Radix-2 FFT over the spatial axes of NCHW tensors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class ComplexTensor:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ContractError(f"re/im shape mismatch: {self.re.shape} vs {self.im.shape}")


def is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_last_axis(a: np.ndarray) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis."""
    n = a.shape[-1]
    if not is_pow2(n):
        raise ContractError(f"FFT length {n} is not a power of two")
    lead = a.shape[:-1]
    a = np.asarray(a, dtype=np.complex128)[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        size *= 2
    return a


def _fft2_complex(z: np.ndarray) -> np.ndarray:
    z = fft_last_axis(z)
    return np.swapaxes(fft_last_axis(np.swapaxes(z, -1, -2)), -1, -2)


def fft2(x: np.ndarray) -> ComplexTensor:
    """Unnormalised 2-D DFT of every (n, c) plane. Sides must be powers of two."""
    if x.ndim != 4:
        raise ContractError(f"fft2 expects NCHW, got {x.shape}")
    h, w = x.shape[2:]
    if not (is_pow2(h) and is_pow2(w)):
        raise ContractError(f"fft2 needs power-of-two sides, got {h}x{w}")
    z = _fft2_complex(x)
    return ComplexTensor(z.real.astype(x.dtype), z.imag.astype(x.dtype))


def fft2_vjp(g_re: np.ndarray, g_im: np.ndarray) -> np.ndarray:
    """Cotangent of a real input given cotangents of the spectrum's parts."""
    z = _fft2_complex(g_re - 1j * g_im)
    return z.real.astype(g_re.dtype)
