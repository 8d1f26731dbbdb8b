"""Overfit the tiny preset on one synthetic 64x64 image at x2 and report the loss ratio and PSNR gain.

    python scripts/overfit_tiny.py [--lr 1e-2] [--batch 4] [--steps 500] [--seed 0]
"""
import argparse

from msaan.experiments import OVERFIT_DEFAULTS, overfit_single_image


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lr", type=float, default=OVERFIT_DEFAULTS["lr_max"])
    ap.add_argument("--batch", type=int, default=OVERFIT_DEFAULTS["batch_size"])
    ap.add_argument("--steps", type=int, default=OVERFIT_DEFAULTS["total_steps"])
    ap.add_argument("--seed", type=int, default=OVERFIT_DEFAULTS["seed"])
    ap.add_argument("--image-seed", type=int, default=0)
    args = ap.parse_args()
    r = overfit_single_image(image_seed=args.image_seed, log=print, lr_max=args.lr,
                             batch_size=args.batch, total_steps=args.steps, seed=args.seed)
    print(f"full-image loss  {r.initial_loss:.5f} -> {r.final_loss:.5f}  (ratio {r.ratio:.4f})")
    print(f"PSNR-Y           bilinear {r.baseline_psnr:.3f} dB, trained {r.trained_psnr:.3f} dB "
          f"(gain {r.gain_db:+.3f} dB)")
    print(f"train time       {r.seconds:.1f} s")


if __name__ == "__main__":
    main()
