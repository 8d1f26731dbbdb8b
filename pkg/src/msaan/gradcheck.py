"""Finite-difference validation of the analytic adjoints.

``grad_check`` compares backprop against central differences. The error for
one input tensor is ``max|analytic - numeric| / max(|analytic|_inf, |numeric|_inf)``,
i.e. relative to the tensor's largest gradient entry, which keeps near-zero
entries from dominating the verdict.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from . import losses
from .autograd import Var, no_grad
from .model import ModelConfig, forward, init_weights


@dataclass
class TensorReport:
    name: str
    max_rel_err: float
    checked: int
    skipped: int
    passed: bool


@dataclass
class GradReport:
    tensors: list[TensorReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tensors)

    @property
    def max_rel_err(self) -> float:
        return max((t.max_rel_err for t in self.tensors), default=0.0)


def grad_check(f: Callable[..., Var], point: Sequence[np.ndarray], step: float = 1e-3,
               tol: float = 1e-3, names: Sequence[str] | None = None,
               sample: int | None = None, rng: np.random.Generator | None = None,
               detect_kinks: bool = False) -> GradReport:
    """Check d f / d point[k] for every k.

    ``f`` receives one :class:`Var` per entry of ``point`` and returns a scalar
    Var. With ``sample`` set, only that many random entries per tensor are
    perturbed. With ``detect_kinks``, entries whose step-``h`` and step-``h/2``
    differences disagree (the function is not smooth there, e.g. a max-pool
    tie) are skipped and counted.
    """
    point = [np.array(p, dtype=np.float64) for p in point]
    names = list(names) if names is not None else [f"arg{i}" for i in range(len(point))]
    rng = rng if rng is not None else np.random.default_rng(0)

    leaves = [Var(p, requires_grad=True) for p in point]
    ag.backward(f(*leaves))
    analytic = [np.zeros_like(p) if v.grad is None else np.asarray(v.grad, dtype=np.float64)
                for p, v in zip(point, leaves)]

    def evaluate(args):
        with no_grad():
            return float(f(*[Var(a) for a in args]).value)

    def central(k, idx, h):
        args = list(point)
        args[k] = point[k].copy()
        args[k][idx] += h
        plus = evaluate(args)
        args[k][idx] -= 2 * h
        minus = evaluate(args)
        return (plus - minus) / (2 * h)

    report = GradReport()
    for k, p in enumerate(point):
        flat = np.arange(p.size)
        if sample is not None and sample < p.size:
            flat = np.sort(rng.choice(p.size, size=sample, replace=False))
        num, ana, skipped = [], [], 0
        for fi in flat:
            idx = np.unravel_index(fi, p.shape)
            d = central(k, idx, step)
            if detect_kinks:
                d2 = central(k, idx, step / 2)
                if abs(d - d2) > tol * max(abs(d), abs(d2), 1e-8):
                    skipped += 1
                    continue
            num.append(d)
            ana.append(analytic[k][idx])
        num, ana = np.array(num), np.array(ana)
        scale = max(np.abs(analytic[k]).max(initial=0.0), np.abs(num).max(initial=0.0))
        err = 0.0 if num.size == 0 or scale == 0 else float(np.abs(ana - num).max() / scale)
        report.tensors.append(TensorReport(names[k], err, int(num.size), skipped, err <= tol))
    return report


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def _distinct(rng, shape, gap=0.01):
    """Random values with pairwise gaps >= ``gap`` (no max-pool ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, n)).reshape(shape) - n * gap / 2


def kernel_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """Small random instances of every differentiable kernel.

    Each case is ``(f, point)`` where ``f`` maps Vars to a scalar through a
    fixed random linear read-out of the kernel output.
    """
    def readout(shape):
        r = rng.standard_normal(shape)
        return lambda y: ag.total(ag.mul(y, r))

    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 5))
    h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
    x = rng.standard_normal((n, c, h, w))
    cases = {}

    co, groups = int(rng.integers(1, 4)) * c, 1
    k = int(rng.choice([1, 3]))
    wk = rng.standard_normal((co, c, k, k))
    b = rng.standard_normal(co)
    pad = k // 2
    ro = readout((n, co, h, w))
    cases["conv2d"] = (lambda x_, w_, b_: ro(ag.conv2d(x_, w_, b_, pad=pad, groups=groups)), [x, wk, b])

    wd = rng.standard_normal((c, 1, 3, 3))
    bd = rng.standard_normal(c)
    ro_d = readout((n, c, h, w))
    cases["depthwise_conv2d"] = (lambda x_, w_, b_: ro_d(ag.depthwise_conv2d(x_, w_, b_)), [x, wd, bd])

    oh, ow = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
    ro_p = readout((n, c, oh, ow))
    cases["adaptive_max_pool"] = (lambda x_: ro_p(ag.adaptive_max_pool(x_, oh, ow)),
                                  [_distinct(rng, (n, c, h, w))])

    uh, uw = h + int(rng.integers(0, 9)), w + int(rng.integers(0, 9))
    ro_u = readout((n, c, uh, uw))
    cases["nearest_upsample"] = (lambda x_: ro_u(ag.nearest_upsample(x_, uh, uw)), [x])

    rh, rw = int(rng.integers(1, 17)), int(rng.integers(1, 17))
    ro_r = readout((n, c, rh, rw))
    cases["bilinear_resize"] = (lambda x_: ro_r(ag.bilinear_resize(x_, rh, rw)), [x])
    cases["bicubic_resize"] = (lambda x_: ro_r(ag.bicubic_resize(x_, rh, rw)), [x])

    r = int(rng.integers(1, 4))
    xs = rng.standard_normal((n, c * r * r, h, w))
    ro_s = readout((n, c, h * r, w * r))
    cases["pixel_shuffle"] = (lambda x_: ro_s(ag.pixel_shuffle(x_, r)), [xs])

    c5 = 5 * int(rng.integers(1, 3))
    x5 = rng.standard_normal((n, c5, h, w))
    w5 = rng.standard_normal((co, c5, 1, 1))
    b5 = rng.standard_normal(co)
    ro_5 = readout((n, co, h, w))
    cases["shift_conv"] = (lambda x_, w_, b_: ro_5(ag.shift_conv(x_, w_, b_)), [x5, w5, b5])

    # two-channel LN has near-zero variance spots where step-1e-3 FD truncation dominates
    cl = int(rng.integers(3, 9))
    xl = rng.standard_normal((n, cl, h, w))
    ro_l = readout((n, cl, h, w))
    cases["layer_norm"] = (lambda x_, s_, t_: ro_l(ag.layer_norm(x_, s_, t_)),
                           [xl, rng.standard_normal(cl), rng.standard_normal(cl)])

    ro_x = readout((n, c, h, w))
    cases["gelu"] = (lambda x_: ro_x(ag.gelu(x_)), [x * 2])
    ro_g = readout((n, c, 1, 1))
    cases["global_avg_pool"] = (lambda x_: ro_g(ag.global_avg_pool(x_)), [x])

    fh, fw = 2 ** int(rng.integers(0, 4)), 2 ** int(rng.integers(0, 4))
    ro_fr, ro_fi = readout((n, c, fh, fw)), readout((n, c, fh, fw))

    def f_fft(x_):
        re, im = ag.fft2(x_)
        return ag.add(ro_fr(re), ro_fi(im))
    cases["fft2"] = (f_fft, [rng.standard_normal((n, c, fh, fw))])

    sr, hr = rng.standard_normal((n, 3, h, w)), rng.standard_normal((n, 3, h, w))
    cases["combined_loss"] = (lambda a_: losses.combined_loss(a_, hr), [sr])
    return cases


# |.| in the loss has kinks at zero residual; FD must step around them
KINKED = {"combined_loss"}


def check_kernels(seed: int, step: float = 1e-3, tol: float = 1e-3) -> dict[str, GradReport]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, (f, point) in kernel_cases(rng).items():
        out[name] = grad_check(f, point, step=step, tol=tol, detect_kinks=name in KINKED)
    return out


def check_model(seed: int, cfg: ModelConfig | None = None, size: int = 8, sample: int = 2,
                step: float = 1e-5, tol: float = 1e-3) -> GradReport:
    """End-to-end check of the full network in float64.

    Every parameter tensor gets ``sample`` random entries perturbed; gamma,
    LayerNorm affines and biases are randomised so no term is trivially zero.
    """
    cfg = cfg or ModelConfig(n_blocks=2, channels=20, scale=2)
    rng = np.random.default_rng(seed)
    store = init_weights(cfg, rng, dtype=np.float64)
    for name in store:
        if name.endswith((".gamma", ".shift", ".scale")):
            store.entries[name].value = store[name] + rng.normal(0, 0.5, store[name].shape)
    names = store.names()
    x = rng.random((1, 3, size, size))
    r = rng.standard_normal((1, 3, size * cfg.scale, size * cfg.scale))

    def f(xv, *params):
        return ag.total(ag.mul(forward(xv, cfg, dict(zip(names, params))), r))

    return grad_check(f, [x] + [store[k] for k in names], step=step, tol=tol,
                      names=["input"] + names, sample=sample, rng=rng, detect_kinks=True)


@contextlib.contextmanager
def _maybe_corrupt(op: str | None):
    if op is None:
        yield
    else:
        with ag.corrupt_adjoint(op):
            yield


def run_suite(seeds: Sequence[int], model_seeds: Sequence[int] | None = None,
              corrupt: str | None = None, tol: float = 1e-3) -> dict[str, float]:
    """Max relative error per component over the given seeds."""
    worst: dict[str, float] = {}
    with _maybe_corrupt(corrupt):
        for s in seeds:
            for name, rep in check_kernels(s, tol=tol).items():
                worst[name] = max(worst.get(name, 0.0), rep.max_rel_err)
        for s in (seeds if model_seeds is None else model_seeds):
            rep = check_model(s, tol=tol)
            worst["model_end_to_end"] = max(worst.get("model_end_to_end", 0.0), rep.max_rel_err)
    return worst
