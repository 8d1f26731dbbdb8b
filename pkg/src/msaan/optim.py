"""Parameter storage, Adam with bias correction, and cosine annealing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Var
from .errors import ContractError, DivergenceError


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray


class ParamStore:
    """Ordered named tensors with gradients and Adam moments."""

    def __init__(self):
        self.entries: dict[str, Param] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        value = np.array(value)
        self.entries[name] = Param(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def numel(self) -> int:
        return sum(p.value.size for p in self.entries.values())

    def leaves(self) -> dict[str, Var]:
        """Fresh differentiable leaves for one forward/backward pass."""
        return {k: Var(p.value, requires_grad=True) for k, p in self.entries.items()}

    def collect_grads(self, leaves: dict[str, Var]) -> None:
        for k, p in self.entries.items():
            g = leaves[k].grad
            p.grad = np.zeros_like(p.value) if g is None else np.asarray(g, dtype=p.value.dtype).reshape(p.value.shape)

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.grad = np.zeros_like(p.value)

    def astype(self, dtype=None) -> "ParamStore":
        """Deep copy, optionally casting every array to ``dtype``."""
        out = ParamStore()
        out.step = self.step
        for k, p in self.entries.items():
            arrs = (p.value, p.grad, p.m, p.v)
            out.entries[k] = Param(*(a.copy() if dtype is None else a.astype(dtype) for a in arrs))
        return out

    def copy(self) -> "ParamStore":
        return self.astype()


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    total_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    fft_weight: float = 0.05
    patch_size: int = 64
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_max:
            raise ContractError(f"need 0 < lr_min <= lr_max, got {self.lr_min}, {self.lr_max}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ContractError("Adam betas must lie in (0, 1)")
        if self.fft_weight < 0:
            raise ContractError("fft_weight must be >= 0")
        if self.total_steps < 1 or self.batch_size < 1 or self.patch_size < 1:
            raise ContractError("total_steps, batch_size and patch_size must be positive")


def adam_step(store: ParamStore, lr: float, cfg: TrainConfig) -> ParamStore:
    for name, p in store.entries.items():
        if not np.isfinite(p.grad).all():
            raise DivergenceError(f"non-finite gradient in {name}")
    store.step += 1
    t = store.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for p in store.entries.values():
        g = p.grad
        p.m = cfg.beta1 * p.m + (1.0 - cfg.beta1) * g
        p.v = cfg.beta2 * p.v + (1.0 - cfg.beta2) * g * g
        upd = lr * (p.m / c1) / (np.sqrt(p.v / c2) + cfg.adam_eps)
        p.value = (p.value - upd).astype(p.value.dtype, copy=False)
        p.m = p.m.astype(p.value.dtype, copy=False)
        p.v = p.v.astype(p.value.dtype, copy=False)
    return store


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    if not 0 <= t <= cfg.total_steps:
        raise ContractError(f"step {t} outside [0, {cfg.total_steps}]")
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * t / cfg.total_steps))
