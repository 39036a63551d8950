"""Command-line pipeline: preprocess, split, train, evaluate, explain.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error. Global
flags precede the subcommand (leafscope --seed 7 train ...). Deterministic
mode (the default) pins worker parallelism to one thread via
LEAFSCOPE_THREADS so repeated runs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .dataset import (SplitAssignment, load_split_arrays, read_manifest,
                      scan_dataset, split_dataset, write_manifest, IMAGE_EXTENSIONS)
from .errors import LeafscopeError
from .metrics import write_report_tsv
from .model import (TrainConfig, build_paper_cnn, evaluate, fit, load_weights,
                    save_weights, write_history_tsv)
from .preprocess import PreprocessConfig, load_rgb, preprocess_image, save_rgb, tensor_to_rgb
from .xai import (METHOD_NAMES, CamRequest, faster_scorecam, gradcam, gradcam_pp,
                  layercam, render_overlay, scorecam, write_heatmap_tsv)

_CAM_DISPATCH = {
    "gradcam": gradcam,
    "gradcam++": gradcam_pp,
    "layercam": layercam,
    "scorecam": scorecam,
    "faster-scorecam": faster_scorecam,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="leafscope",
        description="Leaf-disease classification pipeline: preprocessing, "
                    "training, evaluation, and CAM explanations.")
    p.add_argument("--seed", type=int, default=42, help="global RNG seed")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="pin worker parallelism to a single thread")
    p.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("preprocess", help="background-remove and resize a corpus")
    sp.add_argument("--input", required=True, help="source image directory")
    sp.add_argument("--output", required=True, help="destination directory (PNG)")
    sp.add_argument("--no-bg-removal", action="store_true",
                    help="skip HSV masking, only resize and normalize")
    sp.add_argument("--size", type=int, default=128, help="output side length")

    sp = sub.add_parser("split", help="scan a corpus and write a split manifest")
    sp.add_argument("--input", required=True, help="corpus root (class-per-directory)")
    sp.add_argument("--manifest", required=True, help="output manifest TSV path")
    sp.add_argument("--seed", dest="split_seed", type=int, default=None,
                    help="split seed (defaults to the global --seed)")

    sp = sub.add_parser("train", help="train the CNN from a split manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--images", required=True, help="corpus root the manifest refers to")
    sp.add_argument("--epochs", type=int, default=60)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--out", default="model.lsw", help="output weight file")
    sp.add_argument("--history", default="history.tsv", help="per-epoch history TSV")

    sp = sub.add_parser("evaluate", help="evaluate saved weights on one split")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--images", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--report", default="report.tsv", help="per-class metrics TSV")

    sp = sub.add_parser("explain", help="render a CAM overlay for one image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--method", required=True, choices=METHOD_NAMES)
    sp.add_argument("--layer", default="conv3")
    sp.add_argument("--class", dest="target_class", default="auto",
                    help="class id to explain, or 'auto' for the prediction")
    sp.add_argument("--top-k", type=int, default=10,
                    help="channel budget for faster-scorecam")
    sp.add_argument("--out", default="overlay.png", help="overlay PNG path")
    sp.add_argument("--heatmap-tsv", default=None, help="optional raw heatmap dump")
    return p


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, flush=True)


def _cmd_preprocess(args) -> int:
    cfg = PreprocessConfig(bg_removal=not args.no_bg_removal, out_size=args.size)
    src = Path(args.input)
    dst = Path(args.output)
    if not src.is_dir():
        raise LeafscopeError(f"input directory {src} does not exist")
    files = sorted(p for p in src.rglob("*")
                   if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
    if not files:
        raise LeafscopeError(f"no images under {src}")
    for f in files:
        tensor = preprocess_image(load_rgb(f), cfg)
        out_path = (dst / f.relative_to(src)).with_suffix(".png")
        out_path.parent.mkdir(parents=True, exist_ok=True)
        save_rgb(out_path, tensor_to_rgb(tensor))
    _say(args, f"preprocessed {len(files)} images into {dst}")
    return 0


def _cmd_split(args) -> int:
    seed = args.split_seed if args.split_seed is not None else args.seed
    manifest = scan_dataset(args.input)
    assignment = split_dataset(manifest, seed=seed)
    write_manifest(assignment.manifest, args.manifest)
    counts = {tag: len(assignment.indices(tag)) for tag in ("train", "val", "test")}
    _say(args, f"wrote {args.manifest}: {len(assignment.manifest)} entries, "
               f"{len(manifest.class_names)} classes, "
               f"train/val/test = {counts['train']}/{counts['val']}/{counts['test']}")
    return 0


def _load_tagged(args, tag: str):
    manifest = read_manifest(args.manifest)
    if any(e.split == "" for e in manifest.entries):
        raise LeafscopeError(
            f"manifest {args.manifest} has unsplit entries; run `leafscope split` first")
    assignment = SplitAssignment(manifest=manifest)
    x, y = load_split_arrays(assignment, tag, args.images)
    if x.shape[0] == 0:
        raise LeafscopeError(f"manifest {args.manifest} has no {tag} entries")
    return manifest, x, y


def _cmd_train(args) -> int:
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                      batch_size=args.batch, seed=args.seed)
    manifest, train_x, train_y = _load_tagged(args, "train")
    _, val_x, val_y = _load_tagged(args, "val")
    _say(args, f"training on {train_x.shape[0]} images / validating on "
               f"{val_x.shape[0]} ({len(manifest.class_names)} classes)")
    g = build_paper_cnn(num_classes=len(manifest.class_names), seed=cfg.seed)
    hist = fit(g, (train_x, train_y), (val_x, val_y), cfg, verbose=not args.quiet)
    g.params = hist.best_params          # persist the best-val-accuracy epoch
    save_weights(g, args.out)
    write_history_tsv(hist, args.history)
    _say(args, f"saved {args.out} (best epoch {hist.best_epoch + 1}, "
               f"val_acc {hist.best_val_acc:.4f}) and {args.history}")
    return 0


def _cmd_evaluate(args) -> int:
    g = load_weights(args.model)
    manifest, x, y = _load_tagged(args, args.split)
    report = evaluate(g, x, y, class_names=manifest.class_names)
    write_report_tsv(report, args.report)
    _say(args, f"{args.split}: accuracy {report.accuracy:.5f} "
               f"precision {report.macro_precision:.2f} "
               f"recall {report.macro_recall:.2f} f1 {report.macro_f1:.2f}")
    _say(args, f"wrote {args.report}")
    return 0


def _cmd_explain(args) -> int:
    g = load_weights(args.model)
    size = g.input_shape[1] if g.input_shape else 128
    tensor = preprocess_image(load_rgb(args.image), PreprocessConfig(out_size=size))
    if args.target_class == "auto":
        target = None
    else:
        try:
            target = int(args.target_class)
        except ValueError:
            raise LeafscopeError(
                f"--class must be an integer or 'auto', got {args.target_class!r}")
    req = CamRequest(layer=args.layer, target_class=target,
                     method=args.method, top_k=args.top_k)
    heatmap = _CAM_DISPATCH[args.method](g, tensor, req)
    overlay = render_overlay(tensor_to_rgb(tensor), heatmap)
    save_rgb(args.out, overlay)
    if args.heatmap_tsv:
        write_heatmap_tsv(heatmap, args.heatmap_tsv)
    _say(args, f"{args.method} @ {heatmap.source_layer} for class "
               f"{heatmap.target_class}: wrote {args.out}")
    return 0


_COMMANDS = {
    "preprocess": _cmd_preprocess,
    "split": _cmd_split,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "explain": _cmd_explain,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:        # argparse: 2 on usage error, 0 on --help
        return int(exc.code or 0)
    if args.deterministic:
        os.environ["LEAFSCOPE_THREADS"] = "1"
    try:
        return _COMMANDS[args.command](args)
    except (LeafscopeError, OSError, ValueError, KeyError) as exc:
        print(f"leafscope {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
