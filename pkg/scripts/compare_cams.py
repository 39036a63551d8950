#!/usr/bin/env python3
"""Render every class-activation method side by side for one image.

Loads a trained model, runs all five saliency methods against the same
layer and class, and writes one overlay PNG per method plus the raw
heatmap values as TSV.
"""

import argparse
from pathlib import Path

from leafscope.model import load_weights
from leafscope.preprocess import (PreprocessConfig, load_rgb, preprocess_image,
                                  save_rgb, tensor_to_rgb)
from leafscope.xai import (CamRequest, faster_scorecam, gradcam, gradcam_pp,
                           layercam, render_overlay, scorecam,
                           write_heatmap_tsv)

METHODS = {
    "gradcam": gradcam,
    "gradcam++": gradcam_pp,
    "layercam": layercam,
    "scorecam": scorecam,
    "faster-scorecam": faster_scorecam,
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", type=Path, required=True)
    ap.add_argument("--image", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True, help="output directory")
    ap.add_argument("--layer", default="conv3")
    ap.add_argument("--target", type=int, default=None,
                    help="class index (default: the model's prediction)")
    ap.add_argument("--top-k", type=int, default=10,
                    help="channel budget for faster-score-cam")
    args = ap.parse_args()

    g = load_weights(args.model)
    size = g.input_shape[1] if g.input_shape else 128
    tensor = preprocess_image(load_rgb(args.image), PreprocessConfig(out_size=size))
    base = tensor_to_rgb(tensor)

    args.out.mkdir(parents=True, exist_ok=True)
    for method, fn in METHODS.items():
        req = CamRequest(layer=args.layer, target_class=args.target,
                         method=method, top_k=args.top_k)
        hm = fn(g, tensor, req)
        save_rgb(args.out / f"{method}.png", render_overlay(base, hm))
        write_heatmap_tsv(hm, args.out / f"{method}.tsv")
        print(f"{method:>16}: peak {hm.values.max():.3f} "
              f"target {hm.target_class}")


if __name__ == "__main__":
    main()
