#!/usr/bin/env python3
"""Generate the synthetic leaf-style benchmark corpus.

Writes <out>/class_00 .. class_NN directories of PNG images. Class identity
is a (hue, brightness/shape tier) pair, so a color-sensitive classifier can
separate all classes while the planted signature region stays known exactly.
"""

import argparse
from pathlib import Path

from leafscope.synthetic import generate_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True, help="corpus root to create")
    ap.add_argument("--classes", type=int, default=21)
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    generate_corpus(args.out, num_classes=args.classes,
                    per_class=args.per_class, size=args.size, seed=args.seed)
    total = args.classes * args.per_class
    print(f"wrote {total} images ({args.classes} classes x {args.per_class}) "
          f"at {args.size}x{args.size} under {args.out}")


if __name__ == "__main__":
    main()
