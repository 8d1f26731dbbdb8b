"""Deterministic synthetic test images (no datasets needed for desk-scale runs)."""
from __future__ import annotations

import numpy as np

from .imageio import Image


def texture_image(size: int = 64, seed: int = 0, max_cycles: float = 9.0) -> Image:
    """RGB image mixing oriented gratings, a soft disc and a hard edge.

    Grating frequencies are drawn from ``[2, max_cycles]`` cycles per image side.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    planes = []
    for _ in range(3):
        v = np.zeros((size, size))
        for _ in range(4):
            theta = rng.uniform(0, np.pi)
            freq = rng.uniform(2, max_cycles)
            phase = rng.uniform(0, 2 * np.pi)
            v += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        planes.append(v)
    img = np.stack(planes, axis=-1)
    img = (img - img.min()) / (img.max() - img.min())
    r = np.hypot(xx - 0.6, yy - 0.4)
    img = 0.75 * img + 0.25 * (r < 0.22)[..., None]
    img[:, : size // 5] *= 0.5
    return Image(np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8))


def gradient_image(height: int, width: int, channels: int = 3) -> Image:
    yy, xx = np.mgrid[0:height, 0:width]
    base = (xx * 255 // max(width - 1, 1) + yy * 255 // max(height - 1, 1)) // 2
    stack = [base, base[::-1], 255 - base][:channels]
    return Image(np.stack(stack, axis=-1).astype(np.uint8))
