#!/usr/bin/env python3
"""End-to-end experiment on the synthetic corpus.

Generates (or reuses) a corpus, splits it, trains the default CNN, saves
the best-validation weights plus the training history, evaluates on the
test split, and prints the one-line summary row.

Example:
    python3 scripts/train_synthetic.py --workdir /tmp/run1 --epochs 10
"""

import argparse
import time
from pathlib import Path

from leafscope.dataset import (load_split_arrays, scan_dataset, split_dataset,
                               write_manifest)
from leafscope.metrics import (confusion_from_pairs, derive_metrics,
                               format_report, write_report_tsv)
from leafscope.model import (TrainConfig, build_paper_cnn, fit, predict,
                             save_weights, write_history_tsv)
from leafscope.synthetic import generate_corpus


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", type=Path, required=True,
                    help="directory for corpus, model, and reports")
    ap.add_argument("--classes", type=int, default=21)
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--lr", type=float, default=1e-4)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    corpus = args.workdir / "corpus"
    if not corpus.is_dir():
        print(f"generating corpus under {corpus} ...")
        generate_corpus(corpus, num_classes=args.classes,
                        per_class=args.per_class, seed=args.seed)

    assignment = split_dataset(scan_dataset(corpus), seed=args.seed)
    write_manifest(assignment.manifest, args.workdir / "manifest.tsv")
    counts = {t: len(assignment.indices(t)) for t in ("train", "val", "test")}
    print(f"split: {counts}")

    train = load_split_arrays(assignment, "train", corpus)
    val = load_split_arrays(assignment, "val", corpus)

    g = build_paper_cnn(num_classes=len(assignment.manifest.class_names),
                        seed=args.seed)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs,
                      batch_size=args.batch, seed=args.seed)
    t0 = time.monotonic()
    hist = fit(g, train, val, cfg, verbose=True)
    print(f"trained {args.epochs} epochs in {time.monotonic() - t0:.0f}s; "
          f"best val acc {hist.best_val_acc:.4f} at epoch {hist.best_epoch + 1}")

    if hist.best_params:
        g.params = hist.best_params
    save_weights(g, args.workdir / "model.lsw")
    write_history_tsv(hist, args.workdir / "history.tsv")

    test_x, test_y = load_split_arrays(assignment, "test", corpus)
    preds = predict(g, test_x).argmax(axis=1)
    report = derive_metrics(confusion_from_pairs(
        test_y, preds, len(assignment.manifest.class_names),
        assignment.manifest.class_names))
    write_report_tsv(report, args.workdir / "report.tsv")
    print(format_report("CNN", args.epochs, args.lr, report))


if __name__ == "__main__":
    main()
