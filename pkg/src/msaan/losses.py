"""Training losses: L1, FFT-domain L1, and their weighted sum."""
from __future__ import annotations

from . import autograd as ag
from .autograd import Var
from .errors import ContractError
from .fft import next_pow2

DEFAULT_FFT_WEIGHT = 0.05


def _check(sr: Var, hr: Var) -> None:
    if sr.shape != hr.shape:
        raise ContractError(f"loss inputs differ in shape: {sr.shape} vs {hr.shape}")


def l1_loss(sr, hr) -> Var:
    sr, hr = ag.as_var(sr), ag.as_var(hr)
    _check(sr, hr)
    return ag.mean(ag.absolute(ag.sub(sr, hr)))


def fft_loss(sr, hr) -> Var:
    """Mean of |Re| + |Im| of the spectrum of the residual.

    Planes are zero-padded to power-of-two sides first; by linearity this is
    the same as differencing the two padded spectra.
    """
    sr, hr = ag.as_var(sr), ag.as_var(hr)
    _check(sr, hr)
    h, w = sr.shape[2:]
    diff = ag.zero_pad(ag.sub(sr, hr), next_pow2(h), next_pow2(w))
    re, im = ag.fft2(diff)
    return ag.add(ag.mean(ag.absolute(re)), ag.mean(ag.absolute(im)))


def combined_loss(sr, hr, fft_weight: float = DEFAULT_FFT_WEIGHT) -> Var:
    if fft_weight < 0:
        raise ContractError("fft_weight must be >= 0")
    loss = l1_loss(sr, hr)
    if fft_weight == 0:
        return loss
    return ag.add(loss, ag.mul(fft_weight, fft_loss(sr, hr)))
