"""Acceptance suite: one test and one printed PASS/FAIL line per criterion.

Run with ``pytest -v -s tests/test_acceptance.py`` to see the lines inline; they
are also written straight to the terminal under plain ``pytest -v``.
"""
import io
import math
import time

import numpy as np
import pytest

from msaan import gradcheck, kernels as K
from msaan.checkpoint import dumps, loads
from msaan.cli import main
from msaan.experiments import overfit_single_image
from msaan.fft import fft2
from msaan.imageio import Image, save_image
from msaan.losses import combined_loss
from msaan.metrics import psnr_y, ssim_y
from msaan.model import (ABLATABLE, ModelConfig, gfm_forward, init_weights, mfa_forward,
                         model_forward, param_count)
from msaan.synthetic import gradient_image, texture_image

import oracles

ORACLE_INSTANCES = 50


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance] {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, f"{criterion}: {detail}"
    return emit


def test_gradient_suite(report):
    t0 = time.perf_counter()
    worst = gradcheck.run_suite(range(20), tol=1e-3)
    secs = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if not v <= 1e-3}
    top = max(worst.values())
    report("gradient suite", not bad and secs < 120,
           f"20 seeds, {len(worst)} components, worst rel err {top:.2e}, {secs:.1f}s, failing {sorted(bad)}")


def test_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    errs = {"conv2d": 0.0, "depthwise_conv2d": 0.0, "bicubic_resize": 0.0, "fft2": 0.0,
            "mfa_forward": 0.0}
    for _ in range(ORACLE_INSTANCES):
        n, h, w = int(rng.integers(1, 3)), int(rng.integers(3, 9)), int(rng.integers(3, 9))
        groups = int(rng.choice([1, 2]))
        cin, cout = 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3))
        k, stride = int(rng.choice([1, 3])), int(rng.integers(1, 3))
        pad = int(rng.integers(0, 2))
        x = rng.standard_normal((n, cin, h, w))
        wt = rng.standard_normal((cout, cin // groups, k, k))
        b = rng.standard_normal(cout)
        got = K.conv2d(x, wt, b, stride=stride, pad=pad, groups=groups)
        errs["conv2d"] = max(errs["conv2d"], np.abs(got - oracles.conv2d(x, wt, b, stride, pad, groups)).max())

        c = int(rng.integers(1, 6))
        x = rng.standard_normal((n, c, h, w))
        wt, b = rng.standard_normal((c, 1, 3, 3)), rng.standard_normal(c)
        errs["depthwise_conv2d"] = max(errs["depthwise_conv2d"],
                                       np.abs(K.depthwise_conv2d(x, wt, b) - oracles.depthwise(x, wt, b)).max())

        oh, ow = int(rng.integers(1, 13)), int(rng.integers(1, 13))
        x = rng.uniform(size=(1, 2, h, w))
        errs["bicubic_resize"] = max(errs["bicubic_resize"],
                                     np.abs(K.bicubic_resize(x, oh, ow) - oracles.bicubic(x, oh, ow)).max())

        fh, fw = 2 ** int(rng.integers(0, 4)), 2 ** int(rng.integers(0, 4))
        x = rng.standard_normal((1, 2, fh, fw))
        re, im = oracles.dft2(x)
        spec = fft2(x)
        errs["fft2"] = max(errs["fft2"], np.abs(spec.re - re).max(), np.abs(spec.im - im).max())

        cfg = ModelConfig(n_blocks=1, channels=20, scale=2)
        P = {k: p.value for k, p in init_weights(cfg, rng, dtype=np.float64).entries.items()}
        m1 = rng.standard_normal((1, 20, int(rng.integers(1, 12)), int(rng.integers(1, 12))))
        errs["mfa_forward"] = max(errs["mfa_forward"],
                                  np.abs(mfa_forward(m1, cfg, P, "sfm0").value - oracles.mfa(m1, P, "sfm0")).max())
    tol = {k: (1e-4 if k == "fft2" else 1e-5) for k in errs}
    ok = all(errs[k] <= tol[k] for k in errs)
    report("oracle equivalence", ok,
           f"{ORACLE_INSTANCES} instances each; " + ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


def test_architecture_identities(report):
    cfg = ModelConfig(n_blocks=2, channels=20, scale=2)
    store = init_weights(cfg, np.random.default_rng(0), dtype=np.float64)
    P = {k: store[k] for k in store}
    x = np.random.default_rng(1).standard_normal((2, 20, 7, 5))
    gfm_ok = np.array_equal(gfm_forward(x, cfg, P, "sfm0").value,
                            K.gelu(K.conv2d(x, P["sfm0.gfm.proj.kernel"], P["sfm0.gfm.proj.bias"])))

    bil_ok = True
    for scale in (2, 3, 4):
        c = ModelConfig(n_blocks=2, channels=20, scale=scale)
        s = init_weights(c, np.random.default_rng(scale), dtype=np.float64)
        for name in s:
            if name.startswith("irm."):
                s.entries[name].value[...] = 0
        lr = np.random.default_rng(7).uniform(size=(1, 3, 6, 9))
        bil_ok &= np.array_equal(model_forward(lr, c, s), K.bilinear_resize(lr, 6 * scale, 9 * scale))

    shapes_ok, cases = True, 0
    for scale in (2, 3, 4):
        c = ModelConfig(n_blocks=1, channels=20, scale=scale)
        s = init_weights(c, np.random.default_rng(0))
        for h in range(1, 18):
            for w in range(1, 18):
                out = model_forward(np.zeros((1, 3, h, w), np.float32), c, s)
                shapes_ok &= out.shape == (1, 3, scale * h, scale * w)
                cases += 1
    report("architecture identities", gfm_ok and bil_ok and shapes_ok,
           f"gamma=0 GFM exact: {gfm_ok}; zero-IRM == bilinear at x2/x3/x4: {bil_ok}; "
           f"shape preservation over {cases} (h, w, scale) cases: {shapes_ok}")


def test_parameter_accounting(report):
    light = ModelConfig.light()
    mismatches = []
    for mask in np.ndindex(*(2,) * len(ABLATABLE)):
        cfg = light.ablate(*[p for p, off in zip(ABLATABLE, mask) if off])
        analytic = param_count(cfg)[0]
        instantiated = init_weights(cfg, np.random.default_rng(0)).numel()
        if analytic != instantiated:
            mismatches.append((mask, analytic, instantiated))
    per_block = (param_count(light)[0] - param_count(light.ablate("leb"))[0]) / light.n_blocks
    rounds_to_half_k = round(per_block / 500) * 500 == 500
    fg_up = param_count(light.ablate("fg"))[0] > param_count(light)[0]
    ok = not mismatches and per_block == 400 and rounds_to_half_k and fg_up
    report("parameter accounting", ok,
           f"16 combos analytic == instantiated: {not mismatches}; LEB per block {per_block:.0f} "
           f"(rounds to 0.5K: {rounds_to_half_k}); FG removal increases count: {fg_up}; "
           f"light total {param_count(light)[0]}")


@pytest.mark.slow
def test_desk_scale_learning(report):
    r = overfit_single_image()
    ok = r.ratio <= 0.10 and r.gain_db >= 1.0 and r.seconds < 600
    report("desk-scale learning", ok,
           f"loss {r.initial_loss:.4f} -> {r.final_loss:.4f} (ratio {r.ratio:.4f}), "
           f"PSNR {r.baseline_psnr:.2f} -> {r.trained_psnr:.2f} dB ({r.gain_db:+.2f} dB), "
           f"{r.seconds:.0f}s")


def _flat(delta):
    return (Image(np.full((16, 16, 1), 100, np.uint8)), Image(np.full((16, 16, 1), 100 + delta, np.uint8)))


def test_metric_correctness(report):
    p1 = psnr_y(*_flat(1))
    p16 = psnr_y(*_flat(16))
    derived16 = 20 * math.log10(255 / 16)
    img = texture_image(32)
    s = ssim_y(img, img)
    t = np.random.default_rng(0).uniform(size=(2, 3, 6, 10))
    loss0 = combined_loss(t, t).item()
    ok = abs(p1 - 48.131) <= 0.01 and abs(p16 - derived16) <= 0.01 and s == 1.0 and loss0 == 0.0
    report("metric correctness", ok,
           f"psnr d=1 {p1:.4f} dB; psnr d=16 {p16:.4f} dB vs 20log10(255/16) = {derived16:.4f}; "
           f"ssim(identical) = {s!r}; loss(identical) = {loss0!r}")


@pytest.mark.xfail(strict=True, reason="the quoted 24.082 equals 20*log10(256/16), not its stated "
                                       "derivation 20*log10(255/16) = 24.048")
def test_metric_delta16_quoted_literal(report):
    p16 = psnr_y(*_flat(16))
    report("metric literal d=16 -> 24.082 dB +-0.01", abs(p16 - 24.082) <= 0.01,
           f"measured {p16:.4f} dB; the quoted figure contradicts its own derivation (expected failure)")


def _cli(*argv):
    buf = io.StringIO()
    return main([str(a) for a in argv], out=buf), buf.getvalue()


def test_determinism(report, tmp_path):
    hr = tmp_path / "hr"
    hr.mkdir()
    save_image(texture_image(40, seed=4), hr / "a.png")
    save_image(texture_image(36, seed=5), hr / "b.png")
    runs = []
    for tag in ("r1", "r2"):
        code, _ = _cli("train", "--train-dir", hr, "--out", tmp_path / tag, "--steps", "20",
                       "--batch", "4", "--patch", "12", "--seed", "11", "--ckpt-every", "10")
        assert code == 0
        runs.append(tmp_path / tag)
    same_trace = (runs[0] / "losses.txt").read_bytes() == (runs[1] / "losses.txt").read_bytes()
    same_ckpt = all((runs[0] / f).read_bytes() == (runs[1] / f).read_bytes()
                    for f in ("final.msaa", "step000010.msaa", "step000020.msaa"))
    src = tmp_path / "in.png"
    save_image(gradient_image(11, 14), src)
    ckpt = runs[0] / "final.msaa"
    for tag in ("i1", "i2"):
        assert _cli("infer", ckpt, src, tmp_path / f"{tag}.png")[0] == 0
        assert _cli("eval", ckpt, hr, "--out", tmp_path / f"{tag}.tsv")[0] == 0
    infer_same = (tmp_path / "i1.png").read_bytes() == (tmp_path / "i2.png").read_bytes()
    eval_same = (tmp_path / "i1.tsv").read_bytes() == (tmp_path / "i2.tsv").read_bytes()
    report("determinism", same_trace and same_ckpt and infer_same and eval_same,
           f"loss traces identical: {same_trace}; checkpoints bit-identical: {same_ckpt}; "
           f"infer bytes identical: {infer_same}; eval bytes identical: {eval_same}")


def test_config_validity(report):
    results = []
    for make in (ModelConfig.light, ModelConfig.standard):
        for scale in (2, 3, 4):
            cfg = make(scale)
            store = init_weights(cfg, np.random.default_rng(scale))
            out = model_forward(np.random.default_rng(0).uniform(size=(1, 3, 6, 7)), cfg, store)
            back_cfg, back = loads(dumps(cfg, store), expected=cfg)
            same = all(store[k].tobytes() == back[k].tobytes() for k in store)
            results.append((cfg.n_blocks, cfg.channels, scale,
                            out.shape == (1, 3, 6 * scale, 7 * scale) and np.isfinite(out).all()
                            and back_cfg == cfg and same))
    ok = all(r[-1] for r in results)
    report("config validity", ok,
           "; ".join(f"{b} SFM/{c} ch x{s}: {'ok' if good else 'bad'}" for b, c, s, good in results))
