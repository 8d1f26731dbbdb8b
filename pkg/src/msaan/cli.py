"""Command-line entry point: ``msaan {train,infer,eval,params,gradcheck}``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import itertools
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESET_VALUES, RunConfig, load_config_file, resolve
from .data import degrade_bicubic, image_to_tensor, tensor_to_image
from .errors import CheckpointError, ContractError, DivergenceError, ImageFormatError
from .imageio import IMAGE_SUFFIXES, Image, load_image, save_image
from .metrics import EvalReport, psnr_y, ssim_y
from .model import ABLATABLE, ModelConfig, model_forward, param_count
from .train import train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--preset", choices=sorted(PRESET_VALUES))
    p.add_argument("--scale", type=int)
    p.add_argument("--blocks", type=int, dest="n_blocks")
    p.add_argument("--channels", type=int)
    p.add_argument("--ablate", action="append", choices=ABLATABLE, default=[],
                   help="disable a component (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--lr", type=float, dest="lr_max")
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--patch", type=int, dest="patch_size")
    p.add_argument("--out", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msaan", description="MSAAN super-resolution engine")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a folder of HR images")
    _add_common(p)
    p.add_argument("--train-dir", dest="train_dir")
    p.add_argument("--log-every", type=int, dest="log_every")
    p.add_argument("--ckpt-every", type=int, dest="ckpt_every")

    p = sub.add_parser("infer", help="super-resolve one image")
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--scale", type=int)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a folder of HR images")
    p.add_argument("checkpoint")
    p.add_argument("hr_dir")
    p.add_argument("--scale", type=int)
    p.add_argument("--out", help="write name<TAB>psnr<TAB>ssim lines here")

    p = sub.add_parser("params", help="parameter counts and ablation deltas")
    _add_common(p)
    p.add_argument("--all", action="store_true", help="list all 16 ablation combinations")

    p = sub.add_parser("gradcheck", help="finite-difference check of every adjoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    return parser


def _resolve(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    keys = ("preset", "scale", "n_blocks", "channels", "seed", "total_steps", "lr_max",
            "batch_size", "patch_size", "out_dir", "train_dir", "log_every", "ckpt_every")
    flags = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    for part in args.ablate:
        flags[f"use_{part}"] = False
    return resolve(file_values, flags)


def _image_files(folder) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        raise DataError(f"{folder} is not a directory")
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images in {folder}")
    return files


def _rgb(img: Image) -> Image:
    return img if img.channels == 3 else Image(np.repeat(img.pixels, 3, axis=2))


def super_resolve(img: Image, cfg: ModelConfig, store) -> Image:
    sr = model_forward(image_to_tensor(_rgb(img)), cfg, store)
    return tensor_to_image(sr)


def cmd_train(args, out) -> int:
    cfg = _resolve(args)
    print("# resolved config", file=out)
    print(cfg.echo(), file=out)
    if not cfg.train_dir:
        raise UsageError("train needs --train-dir (or train_dir in the config file)")
    pairs = []
    for path in _image_files(cfg.train_dir):
        try:
            pairs.append(degrade_bicubic(_rgb(load_image(path)), cfg.scale))
        except (OSError, ImageFormatError) as exc:
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)
    if not pairs:
        raise DataError(f"no readable images in {cfg.train_dir}")
    small = min(min(p.lr.height, p.lr.width) for p in pairs)
    if cfg.patch_size > small:
        raise UsageError(f"patch_size={cfg.patch_size} exceeds the smallest LR image side {small}")

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(cfg.echo() + "\n")
    with open(out_dir / "train.log", "w") as logf:
        logf.write(cfg.echo() + "\n")

        def log(line):
            print(line, file=out)
            logf.write(line + "\n")

        result = train(cfg, pairs, log)
    final = Path(cfg.checkpoint) if cfg.checkpoint else out_dir / "final.msaa"
    save_checkpoint(final, cfg.model_config(), result.store)
    (out_dir / "losses.txt").write_text("".join(f"{v!r}\n" for v in result.losses))
    print(f"checkpoint: {final}", file=out)
    return EXIT_OK


def _load_for_scale(path, scale):
    cfg, store = load_checkpoint(path)
    if scale is not None and scale != cfg.scale:
        raise UsageError(f"--scale {scale} conflicts with checkpoint scale {cfg.scale}")
    return cfg, store


def cmd_infer(args, out) -> int:
    cfg, store = _load_for_scale(args.checkpoint, args.scale)
    print(f"# checkpoint={args.checkpoint} scale={cfg.scale} blocks={cfg.n_blocks} "
          f"channels={cfg.channels}", file=out)
    img = load_image(args.input)
    sr = super_resolve(img, cfg, store)
    save_image(sr, args.output)
    print(f"{args.input} {img.width}x{img.height} -> {args.output} {sr.width}x{sr.height}", file=out)
    return EXIT_OK


def evaluate_folder(cfg: ModelConfig, store, hr_dir, warn=None) -> EvalReport:
    report = EvalReport(shave=cfg.scale)
    for path in _image_files(hr_dir):
        try:
            hr = _rgb(load_image(path))
        except (OSError, ImageFormatError) as exc:
            report.skipped.append(path.name)
            if warn:
                warn(f"warning: skipping {path}: {exc}")
            continue
        pair = degrade_bicubic(hr, cfg.scale)
        sr = super_resolve(pair.lr, cfg, store)
        report.add(path.name, psnr_y(sr, pair.hr, cfg.scale), ssim_y(sr, pair.hr, cfg.scale))
    return report


def cmd_eval(args, out) -> int:
    cfg, store = _load_for_scale(args.checkpoint, args.scale)
    print(f"# checkpoint={args.checkpoint} hr_dir={args.hr_dir} scale={cfg.scale} shave={cfg.scale}",
          file=out)
    report = evaluate_folder(cfg, store, args.hr_dir, warn=lambda m: print(m, file=sys.stderr))
    if not report.rows:
        raise DataError(f"no readable images in {args.hr_dir}")
    print(report.to_table(), file=out)
    if args.out:
        Path(args.out).write_text(report.to_lines())
    return EXIT_OK


def cmd_params(args, out) -> int:
    run = _resolve(args)
    cfg = run.model_config()
    print("# resolved config", file=out)
    print(run.echo(), file=out)
    total, breakdown = param_count(cfg)
    for name, n in breakdown.items():
        print(f"{name:<12} {n:>10d}", file=out)
    print(f"{'total':<12} {total:>10d}", file=out)
    if args.ablate:
        full, _ = param_count(ModelConfig(n_blocks=cfg.n_blocks, channels=cfg.channels,
                                          scale=cfg.scale, figff_expansion=cfg.figff_expansion))
        print(f"delta vs full model (ablate {','.join(args.ablate)}): {total - full:+d}", file=out)
    if args.all:
        base = ModelConfig(n_blocks=cfg.n_blocks, channels=cfg.channels, scale=cfg.scale,
                           figff_expansion=cfg.figff_expansion)
        print("\nleb gfm mfa fg      params", file=out)
        for flags in itertools.product((True, False), repeat=4):
            off = [p for p, on in zip(ABLATABLE, flags) if not on]
            n, _ = param_count(base.ablate(*off))
            marks = " ".join(f"{'on' if f else 'off':>3}" for f in flags)
            print(f"{marks}  {n:>10d}", file=out)
    return EXIT_OK


def cmd_gradcheck(args, out) -> int:
    seeds = list(range(args.seed, args.seed + args.seeds))
    print(f"# gradcheck seeds={seeds} tol={args.tol}", file=out)
    worst = gradcheck.run_suite(seeds, corrupt=args.corrupt, tol=args.tol)
    failed = []
    for name, err in worst.items():
        ok = err <= args.tol
        failed += [] if ok else [name]
        print(f"{name:<20} max_rel_err={err:.3e}  {'PASS' if ok else 'FAIL'}", file=out)
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=out)
        return EXIT_NUMERIC
    print("all components passed", file=out)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "params": cmd_params, "gradcheck": cmd_gradcheck}


def _thread_limit():
    n = os.environ.get("MSAAN_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args, out)
    except (UsageError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ImageFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
