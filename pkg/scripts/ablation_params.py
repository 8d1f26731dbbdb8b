"""Parameter counts for every ablation combination, with per-component breakdown.

    python scripts/ablation_params.py [--preset light|standard|tiny] [--scale 4]
"""
import argparse
import itertools

from msaan.model import ABLATABLE, PRESETS, param_count


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", choices=sorted(PRESETS), default="light")
    ap.add_argument("--scale", type=int, default=4)
    args = ap.parse_args()
    base = PRESETS[args.preset](args.scale)
    full, parts = param_count(base)
    print(f"{args.preset}: {base.n_blocks} SFMs, {base.channels} channels, x{base.scale}")
    for name, n in parts.items():
        print(f"  {name:<11}{n:>9d}")
    print(f"  {'total':<11}{full:>9d}\n")
    print("  ".join(f"{p:>3}" for p in ABLATABLE) + "     params      delta")
    for flags in itertools.product((True, False), repeat=len(ABLATABLE)):
        off = [p for p, on in zip(ABLATABLE, flags) if not on]
        n, _ = param_count(base.ablate(*off))
        print("  ".join(f"{'on' if f else 'off':>3}" for f in flags) + f"  {n:>9d}  {n - full:>+9d}")


if __name__ == "__main__":
    main()
