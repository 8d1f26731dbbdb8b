"""Data protocol: bicubic degradation, luminance, patch sampling, augmentation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .imageio import Image
from .kernels import bicubic_resize

# ITU-R BT.601 studio swing, RGB in [0, 1] -> Y in [16, 235]
Y_COEFFS = np.array([65.481, 128.553, 24.966])
Y_OFFSET = 16.0


def quantize(x: np.ndarray) -> np.ndarray:
    """[0, 1] floats to uint8, clamping then rounding half away from zero."""
    v = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def image_to_tensor(img: Image, dtype=np.float32) -> np.ndarray:
    """``(h, w, c)`` uint8 -> ``(1, c, h, w)`` in [0, 1]."""
    return (img.pixels.transpose(2, 0, 1)[None] / 255.0).astype(dtype)


def tensor_to_image(t: np.ndarray) -> Image:
    if t.ndim != 4 or t.shape[0] != 1:
        raise ContractError(f"expected a single (1, c, h, w) tensor, got {t.shape}")
    return Image(np.ascontiguousarray(quantize(t[0]).transpose(1, 2, 0)))


def rgb_to_y(x) -> np.ndarray:
    """Luminance on the 0-255 scale.

    Accepts an :class:`Image` (returns ``(h, w)``) or an NCHW array in [0, 1]
    (returns ``(n, 1, h, w)``). Single-channel inputs are taken as luminance
    already and only rescaled.
    """
    if isinstance(x, Image):
        p = x.pixels.astype(np.float64) / 255.0
        if x.channels == 1:
            return p[..., 0] * 255.0
        return p @ Y_COEFFS + Y_OFFSET
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] == 1:
        return x * 255.0
    if x.shape[1] != 3:
        raise ContractError(f"rgb_to_y needs 1 or 3 channels, got {x.shape[1]}")
    return np.einsum("nchw,c->nhw", x, Y_COEFFS)[:, None] + Y_OFFSET


@dataclass(frozen=True)
class ImagePair:
    hr: Image
    lr: Image
    scale: int

    def __post_init__(self):
        if (self.hr.height, self.hr.width) != (self.lr.height * self.scale, self.lr.width * self.scale):
            raise ContractError(
                f"HR {self.hr.height}x{self.hr.width} is not LR {self.lr.height}x{self.lr.width} x{self.scale}")


def crop_to_multiple(img: Image, scale: int) -> Image:
    h, w = img.height - img.height % scale, img.width - img.width % scale
    top, left = (img.height - h) // 2, (img.width - w) // 2
    return Image(np.ascontiguousarray(img.pixels[top:top + h, left:left + w]))


def degrade_bicubic(hr: Image, scale: int) -> ImagePair:
    if scale not in (2, 3, 4):
        raise ContractError(f"scale must be 2, 3 or 4, got {scale}")
    if hr.height < scale or hr.width < scale:
        raise ContractError(f"image {hr.height}x{hr.width} smaller than scale {scale}")
    hr = crop_to_multiple(hr, scale)
    t = image_to_tensor(hr, np.float64)
    lr = bicubic_resize(t, hr.height // scale, hr.width // scale)
    return ImagePair(hr, tensor_to_image(lr), scale)


def sample_patch_pair(pair: ImagePair, p: int, rng: np.random.Generator):
    """Random aligned crop; returns ``(lr, hr)`` float32 arrays ``(c, p, p)``
    and ``(c, p*s, p*s)`` in [0, 1]."""
    lh, lw = pair.lr.height, pair.lr.width
    if p < 1 or p > lh or p > lw:
        raise ContractError(f"patch {p} does not fit LR image {lh}x{lw}")
    y, x = int(rng.integers(0, lh - p + 1)), int(rng.integers(0, lw - p + 1))
    s = pair.scale
    lr = pair.lr.pixels[y:y + p, x:x + p].transpose(2, 0, 1) / 255.0
    hr = pair.hr.pixels[y * s:(y + p) * s, x * s:(x + p) * s].transpose(2, 0, 1) / 255.0
    return lr.astype(np.float32), hr.astype(np.float32)


def apply_transform(a: np.ndarray, flip: bool, k: int) -> np.ndarray:
    if flip:
        a = a[..., ::-1]
    return np.ascontiguousarray(np.rot90(a, k, axes=(-2, -1)))


def augment(lr: np.ndarray, hr: np.ndarray, rng: np.random.Generator):
    """Same random horizontal flip and k*90 degree rotation on both patches."""
    flip = bool(rng.random() < 0.5)
    k = int(rng.integers(0, 4))
    return apply_transform(lr, flip, k), apply_transform(hr, flip, k)


@dataclass
class PatchBatch:
    lr: np.ndarray
    hr: np.ndarray


def make_batch(pairs: list[ImagePair], batch_size: int, patch: int,
               rng: np.random.Generator, augment_patches: bool = True) -> PatchBatch:
    lrs, hrs = [], []
    for _ in range(batch_size):
        pair = pairs[int(rng.integers(0, len(pairs)))]
        lr, hr = sample_patch_pair(pair, patch, rng)
        if augment_patches:
            lr, hr = augment(lr, hr, rng)
        lrs.append(lr)
        hrs.append(hr)
    return PatchBatch(np.stack(lrs), np.stack(hrs))
