"""Y-channel PSNR / SSIM and the evaluation report."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import rgb_to_y
from .errors import ContractError
from .imageio import Image

PEAK = 255.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * PEAK) ** 2
SSIM_C2 = (0.03 * PEAK) ** 2


def _y_planes(sr: Image, hr: Image, shave: int):
    if (sr.height, sr.width) != (hr.height, hr.width):
        raise ContractError(f"size mismatch: {sr.height}x{sr.width} vs {hr.height}x{hr.width}")
    if shave < 0 or sr.height <= 2 * shave or sr.width <= 2 * shave:
        raise ContractError(f"shave {shave} leaves nothing of a {sr.height}x{sr.width} image")
    a, b = rgb_to_y(sr), rgb_to_y(hr)
    if shave:
        a, b = a[shave:-shave, shave:-shave], b[shave:-shave, shave:-shave]
    return a, b


def psnr_y(sr: Image, hr: Image, shave: int = 0) -> float:
    """PSNR in dB on luminance; ``math.inf`` for identical planes."""
    a, b = _y_planes(sr, hr, shave)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(PEAK ** 2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    x = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(x, k, axis=1) @ g


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    g = gaussian_window()
    mu1, mu2 = _filter_valid(a, g), _filter_valid(b, g)
    s11 = _filter_valid(a * a, g) - mu1 ** 2
    s22 = _filter_valid(b * b, g) - mu2 ** 2
    s12 = _filter_valid(a * b, g) - mu1 * mu2
    num = (2 * mu1 * mu2 + SSIM_C1) * (2 * s12 + SSIM_C2)
    den = (mu1 ** 2 + mu2 ** 2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
    return num / den


def ssim_y(sr: Image, hr: Image, shave: int = 0) -> float:
    """Single-scale SSIM on luminance: 11x11 Gaussian (sigma 1.5), valid positions only."""
    a, b = _y_planes(sr, hr, shave)
    if min(a.shape) < SSIM_WINDOW:
        raise ContractError(f"SSIM needs >= {SSIM_WINDOW}px after shaving, got {a.shape}")
    return float(ssim_map(a, b).mean())


@dataclass
class EvalReport:
    shave: int
    rows: list[tuple[str, float, float]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def add(self, name: str, psnr: float, ssim: float) -> None:
        self.rows.append((name, psnr, ssim))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else math.nan

    def to_lines(self) -> str:
        """Machine-readable ``name<TAB>psnr<TAB>ssim`` rows, mean last."""
        out = [f"{n}\t{p:.6f}\t{s:.6f}" for n, p, s in self.rows]
        out.append(f"MEAN\t{self.mean_psnr:.6f}\t{self.mean_ssim:.6f}")
        return "\n".join(out) + "\n"

    def to_table(self) -> str:
        width = max([len(r[0]) for r in self.rows] + [5])
        lines = [f"{'image':<{width}}  {'PSNR(dB)':>9}  {'SSIM':>7}", "-" * (width + 20)]
        lines += [f"{n:<{width}}  {p:>9.4f}  {s:>7.4f}" for n, p, s in self.rows]
        lines.append("-" * (width + 20))
        lines.append(f"{'mean':<{width}}  {self.mean_psnr:>9.4f}  {self.mean_ssim:>7.4f}")
        lines.append(f"shave={self.shave}  images={len(self.rows)}  skipped={len(self.skipped)}")
        return "\n".join(lines)
