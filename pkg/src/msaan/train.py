"""Training loop: sample -> augment -> forward -> loss -> backward -> Adam."""
from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import ImagePair, PatchBatch, make_batch
from .errors import DivergenceError
from .losses import combined_loss
from .model import ModelConfig, forward, init_weights
from .optim import ParamStore, adam_step, cosine_lr

_INIT_STREAM = 0x1A17
_BATCH_STREAM = 0xBA7C


def init_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, _INIT_STREAM])


def batch_rng(seed: int, step: int) -> np.random.Generator:
    """Each step draws from its own stream, so a batch is reproducible from (seed, step)."""
    return np.random.default_rng([seed, _BATCH_STREAM, step])


@dataclass
class TrainResult:
    store: ParamStore
    losses: list[float] = field(default_factory=list)


def _batches(cfg: RunConfig, pairs: list[ImagePair]):
    def build(step):
        return make_batch(pairs, cfg.batch_size, cfg.patch_size, batch_rng(cfg.seed, step), cfg.augment)

    if cfg.prefetch <= 0:
        for step in range(cfg.total_steps):
            yield build(step)
        return
    q: queue.Queue = queue.Queue(maxsize=cfg.prefetch)
    stop = threading.Event()

    def worker():
        for step in range(cfg.total_steps):
            if stop.is_set():
                return
            q.put(build(step))

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    try:
        for _ in range(cfg.total_steps):
            yield q.get()
    finally:
        stop.set()


def train_step(store: ParamStore, mcfg: ModelConfig, batch: PatchBatch, fft_weight: float) -> float:
    leaves = store.leaves()
    loss = combined_loss(forward(batch.lr, mcfg, leaves), batch.hr, fft_weight)
    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss {value}")
    ag.backward(loss)
    store.collect_grads(leaves)
    return value


def train(cfg: RunConfig, pairs: list[ImagePair], log: Callable[[str], None] = print,
          store: ParamStore | None = None) -> TrainResult:
    mcfg, tcfg = cfg.model_config(), cfg.train_config()
    if store is None:
        store = init_weights(mcfg, init_rng(cfg.seed))
    result = TrainResult(store)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    log(f"# loss = L1 + {tcfg.fft_weight} * L_FFT; adam beta1={tcfg.beta1} beta2={tcfg.beta2}; "
        f"cosine lr {tcfg.lr_max:g} -> {tcfg.lr_min:g} over {tcfg.total_steps} steps")
    for step, batch in enumerate(_batches(cfg, pairs)):
        try:
            value = train_step(store, mcfg, batch, tcfg.fft_weight)
            lr = cosine_lr(step, tcfg)
            adam_step(store, lr, tcfg)
        except DivergenceError as exc:
            raise DivergenceError(
                f"{exc} at step {step}; batch seed (seed={cfg.seed}, stream={_BATCH_STREAM:#x}, "
                f"step={step})") from exc
        result.losses.append(value)
        if step % cfg.log_every == 0 or step == tcfg.total_steps - 1:
            log(f"step={step} lr={lr:.6g} loss={value:.6f}")
        if out_dir and cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            save_checkpoint(out_dir / f"step{step + 1:06d}.msaa", mcfg, store)
    return result
