"""Desk-scale experiments shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

from .autograd import no_grad
from .config import RunConfig, resolve
from .data import ImagePair, degrade_bicubic, image_to_tensor, tensor_to_image
from .losses import combined_loss
from .metrics import psnr_y
from .model import forward, init_weights, model_forward
from .optim import ParamStore
from .synthetic import texture_image
from .train import init_rng, train

# Single-image overfitting wants a hot learning rate: with the 1e-3 training
# default, 500 steps only bring the loss to about 15% of its starting value.
OVERFIT_DEFAULTS = dict(preset="tiny", scale=2, total_steps=500, lr_max=1e-2, batch_size=4,
                        patch_size=32, seed=0, log_every=100, out_dir="")


@dataclass
class OverfitResult:
    initial_loss: float
    final_loss: float
    baseline_psnr: float
    trained_psnr: float
    seconds: float
    losses: list[float] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.final_loss / self.initial_loss

    @property
    def gain_db(self) -> float:
        return self.trained_psnr - self.baseline_psnr


def full_image_loss(pair: ImagePair, cfg: RunConfig, store: ParamStore) -> float:
    """Combined loss of the whole SR image against the whole HR image."""
    mcfg = cfg.model_config()
    with no_grad():
        P = {k: store[k] for k in store}
        sr = forward(image_to_tensor(pair.lr), mcfg, P)
        return combined_loss(sr, image_to_tensor(pair.hr), cfg.fft_weight).item()


def psnr_of(pair: ImagePair, cfg: RunConfig, store: ParamStore) -> float:
    sr = model_forward(image_to_tensor(pair.lr), cfg.model_config(), store)
    return psnr_y(tensor_to_image(sr), pair.hr, cfg.scale)


def bilinear_baseline(cfg: RunConfig) -> ParamStore:
    """Freshly initialised weights with the reconstruction conv zeroed: output == bilinear."""
    store = init_weights(cfg.model_config(), init_rng(cfg.seed))
    for name in store:
        if name.startswith("irm."):
            store.entries[name].value[...] = 0
    return store


def overfit_single_image(size: int = 64, image_seed: int = 0, log=None, **overrides) -> OverfitResult:
    cfg = resolve(flag_values={**OVERFIT_DEFAULTS, **overrides})
    pair = degrade_bicubic(texture_image(size, seed=image_seed), cfg.scale)
    initial = full_image_loss(pair, cfg, init_weights(cfg.model_config(), init_rng(cfg.seed)))
    baseline = psnr_of(pair, cfg, bilinear_baseline(cfg))
    t0 = time.perf_counter()
    res = train(cfg, [pair], log=log or (lambda _line: None))
    seconds = time.perf_counter() - t0
    return OverfitResult(initial, full_image_loss(pair, cfg, res.store), baseline,
                         psnr_of(pair, cfg, res.store), seconds, res.losses)
