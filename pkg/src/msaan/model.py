"""The MSAAN super-resolution network.

Layout::

    F0   = conv3x3(I_LR)                       sfem
    Fi   = SFM_i(F_{i-1}),  i = 1..n            sfm{i}
    I_SR = shuffle(conv3x3(Fn + F0)) + bilinear(I_LR)

and each SFM is ``z1 = LEB(x); z2 = MSAA(LN(z1)) + z1; y = FIGFF(LN(z2)) + z2``.

Block functions take a mapping from parameter name to :class:`Var` (or plain
array) so the same code serves training and inference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import autograd as ag
from .autograd import Var, no_grad
from .errors import ContractError
from .optim import ParamStore

ABLATABLE = ("leb", "gfm", "mfa", "fg")


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 12
    channels: int = 40
    scale: int = 4
    use_leb: bool = True
    use_gfm: bool = True
    use_mfa: bool = True
    use_fg: bool = True
    figff_expansion: int = 2

    def __post_init__(self):
        c, e = self.channels, self.expanded
        if self.n_blocks < 1:
            raise ContractError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.scale not in (2, 3, 4):
            raise ContractError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.figff_expansion < 1:
            raise ContractError("figff_expansion must be >= 1")
        if c < 1 or c % 4:
            raise ContractError(f"channels={c} must be divisible by 4 (MFA four-way split)")
        if c % 5:
            raise ContractError(f"channels={c} must be divisible by 5 (shift-conv groups)")
        if e % 10:
            raise ContractError(
                f"expanded width {e} = {self.figff_expansion}*{c} must be divisible by 2 (gate split) "
                "and by 5 (shift-conv groups)")

    @property
    def expanded(self) -> int:
        return self.figff_expansion * self.channels

    def ablate(self, *parts: str) -> "ModelConfig":
        for p in parts:
            if p not in ABLATABLE:
                raise ContractError(f"unknown ablation {p!r}; choose from {ABLATABLE}")
        return replace(self, **{f"use_{p}": False for p in parts})

    @classmethod
    def light(cls, scale: int = 4) -> "ModelConfig":
        return cls(n_blocks=12, channels=40, scale=scale)

    @classmethod
    def standard(cls, scale: int = 4) -> "ModelConfig":
        return cls(n_blocks=24, channels=60, scale=scale)

    @classmethod
    def tiny(cls, scale: int = 2) -> "ModelConfig":
        # smallest width satisfying both the 4-way split and 5-way shift
        return cls(n_blocks=4, channels=20, scale=scale)


PRESETS = {"light": ModelConfig.light, "standard": ModelConfig.standard, "tiny": ModelConfig.tiny}


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------

def _conv(name, cin, cout, k, groups=1):
    return [(f"{name}.kernel", (cout, cin // groups, k, k)), (f"{name}.bias", (cout,))]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs of every learnable tensor."""
    c, e = cfg.channels, cfg.expanded
    q = c // 4
    shapes = _conv("sfem.w", 3, c, 3)
    for i in range(cfg.n_blocks):
        p = f"sfm{i}"
        if cfg.use_leb:
            shapes += _conv(f"{p}.leb.dw", c, c, 3, groups=c)
        shapes += [(f"{p}.ln1.scale", (c,)), (f"{p}.ln1.shift", (c,))]
        shapes += _conv(f"{p}.gfm.proj", c, c, 1)
        if cfg.use_gfm:
            shapes.append((f"{p}.gfm.gamma", ()))
        if cfg.use_mfa:
            for j in range(4):
                shapes += _conv(f"{p}.mfa.dw{j}", q, q, 3, groups=q)
            shapes += _conv(f"{p}.mfa.fuse", c, c, 1)
            shapes += _conv(f"{p}.mfa.attn_proj", c, c, 1)
        shapes += _conv(f"{p}.mfa.out", c, c, 1)
        shapes += [(f"{p}.ln2.scale", (c,)), (f"{p}.ln2.shift", (c,))]
        shapes += _conv(f"{p}.figff.sc1", c, e, 1)
        gated = e // 2 if cfg.use_fg else e
        shapes += _conv(f"{p}.figff.dw", gated, gated, 3, groups=gated)
        shapes += _conv(f"{p}.figff.sc2", gated, c, 1)
    shapes += _conv("irm.w", c, 3 * cfg.scale ** 2, 3)
    return shapes


def param_count(cfg: ModelConfig) -> tuple[int, dict[str, int]]:
    """Closed-form parameter count and per-module breakdown.

    Computed from layer formulas alone; :func:`param_shapes` is not consulted,
    so the two can be checked against each other.
    """
    c, e, n = cfg.channels, cfg.expanded, cfg.n_blocks

    def conv(cin, cout, k, groups=1):
        return cout * (cin // groups) * k * k + cout

    gated = e // 2 if cfg.use_fg else e
    per_block = {
        "leb": conv(c, c, 3, c) if cfg.use_leb else 0,
        "ln": 4 * c,
        "gfm": conv(c, c, 1) + (1 if cfg.use_gfm else 0),
        "mfa": conv(c, c, 1) + ((10 * c + 2 * conv(c, c, 1)) if cfg.use_mfa else 0),
        "figff": conv(c, e, 1) + conv(gated, gated, 3, gated) + conv(gated, c, 1),
    }
    breakdown = {"sfem": conv(3, c, 3)}
    breakdown.update({f"sfm.{k}": n * v for k, v in per_block.items()})
    breakdown["irm"] = conv(c, 3 * cfg.scale ** 2, 3)
    return sum(breakdown.values()), breakdown


def init_weights(cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> ParamStore:
    """Uniform(+-sqrt(1/fan_in)) convs, LN scale 1 / shift 0, gamma 0."""
    store = ParamStore()
    fan_in: dict[str, int] = {}
    for name, shape in param_shapes(cfg):
        base, _, leaf = name.rpartition(".")
        if leaf == "kernel":
            fan_in[base] = int(np.prod(shape[1:]))
            bound = math.sqrt(1.0 / fan_in[base])
            value = rng.uniform(-bound, bound, size=shape)
        elif leaf == "bias":
            bound = math.sqrt(1.0 / fan_in[base])
            value = rng.uniform(-bound, bound, size=shape)
        elif leaf == "scale":
            value = np.ones(shape)
        else:  # ln shift, gamma
            value = np.zeros(shape)
        store.add(name, value.astype(dtype))
    return store


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

Params = Mapping[str, "Var | np.ndarray"]


def _conv_apply(x, P: Params, name: str, pad: int = 0, groups: int = 1) -> Var:
    return ag.conv2d(x, P[f"{name}.kernel"], P[f"{name}.bias"], pad=pad, groups=groups)


def _dw(x, P, name):
    return ag.depthwise_conv2d(x, P[f"{name}.kernel"], P[f"{name}.bias"])


def leb_forward(x, cfg: ModelConfig, P: Params, prefix: str) -> Var:
    x = ag.as_var(x)
    if not cfg.use_leb:
        return x
    return ag.add(_dw(x, P, f"{prefix}.leb.dw"), x)


def gfm_forward(x, cfg: ModelConfig, P: Params, prefix: str) -> Var:
    x1 = _conv_apply(x, P, f"{prefix}.gfm.proj")
    if not cfg.use_gfm:
        return ag.gelu(x1)
    diff = ag.sub(x1, ag.global_avg_pool(x1))
    return ag.gelu(ag.add(x1, ag.mul(P[f"{prefix}.gfm.gamma"], diff)))


def mfa_forward(m1, cfg: ModelConfig, P: Params, prefix: str) -> Var:
    m1 = ag.as_var(m1)
    if not cfg.use_mfa:
        return _conv_apply(m1, P, f"{prefix}.mfa.out")
    h, w = m1.shape[2:]
    branches = []
    for i, xi in enumerate(ag.split_channels(m1, 4)):
        ph, pw = -(-h // 2 ** i), -(-w // 2 ** i)
        if (ph, pw) != (h, w):
            xi = ag.adaptive_max_pool(xi, ph, pw)
        xi = _dw(xi, P, f"{prefix}.mfa.dw{i}")
        if (ph, pw) != (h, w):
            xi = ag.nearest_upsample(xi, h, w)
        branches.append(xi)
    fused = _conv_apply(ag.concat(branches), P, f"{prefix}.mfa.fuse")
    attn = ag.gelu(_conv_apply(m1, P, f"{prefix}.mfa.attn_proj"))
    return _conv_apply(ag.mul(ag.gelu(fused), attn), P, f"{prefix}.mfa.out")


def msaa_forward(x, cfg: ModelConfig, P: Params, prefix: str) -> Var:
    return mfa_forward(gfm_forward(x, cfg, P, prefix), cfg, P, prefix)


def _shift_conv(x, P, name):
    return ag.shift_conv(x, P[f"{name}.kernel"], P[f"{name}.bias"])


def figff_forward(x, cfg: ModelConfig, P: Params, prefix: str) -> Var:
    z = ag.gelu(_shift_conv(x, P, f"{prefix}.figff.sc1"))
    if cfg.use_fg:
        z1, z2 = ag.split_channels(z, 2)
        z = ag.mul(z1, _dw(z2, P, f"{prefix}.figff.dw"))
    else:
        z = _dw(z, P, f"{prefix}.figff.dw")
    return _shift_conv(z, P, f"{prefix}.figff.sc2")


def _ln(x, P, name):
    return ag.layer_norm(x, P[f"{name}.scale"], P[f"{name}.shift"])


def sfm_forward(x, cfg: ModelConfig, P: Params, prefix: str) -> Var:
    z1 = leb_forward(x, cfg, P, prefix)
    z2 = ag.add(msaa_forward(_ln(z1, P, f"{prefix}.ln1"), cfg, P, prefix), z1)
    return ag.add(figff_forward(_ln(z2, P, f"{prefix}.ln2"), cfg, P, prefix), z2)


def forward(i_lr, cfg: ModelConfig, P: Params) -> Var:
    """Differentiable network forward: ``(n, 3, h, w) -> (n, 3, s*h, s*w)``."""
    i_lr = ag.as_var(i_lr)
    if i_lr.value.ndim != 4 or i_lr.shape[1] != 3:
        raise ContractError(f"model input must be (n, 3, h, w), got {i_lr.shape}")
    f0 = _conv_apply(i_lr, P, "sfem.w", pad=1)
    f = f0
    for i in range(cfg.n_blocks):
        f = sfm_forward(f, cfg, P, f"sfm{i}")
    f_df = ag.add(f, f0)
    up = ag.pixel_shuffle(_conv_apply(f_df, P, "irm.w", pad=1), cfg.scale)
    h, w = i_lr.shape[2:]
    return ag.add(up, ag.bilinear_resize(i_lr, cfg.scale * h, cfg.scale * w))


def model_forward(i_lr: np.ndarray, cfg: ModelConfig, weights: ParamStore) -> np.ndarray:
    """Inference-only forward pass on plain arrays."""
    with no_grad():
        P = {k: weights[k] for k in weights}
        return forward(np.asarray(i_lr, dtype=next(iter(P.values())).dtype), cfg, P).value
