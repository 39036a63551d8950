"""Confusion-matrix accumulation and classification metrics.

The confusion matrix is the single source of truth: accuracy, per-class
precision/recall/F1 and their macro averages all derive from it, so
streaming accumulation and whole-array evaluation agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError


@dataclass
class ConfusionMatrix:
    """K x K counts; rows index the true class, columns the predicted class."""

    counts: np.ndarray
    class_names: list | None = None

    @classmethod
    def zeros(cls, num_classes: int, class_names=None) -> "ConfusionMatrix":
        if num_classes < 1:
            raise ValueError("need at least one class")
        if class_names is not None and len(class_names) != num_classes:
            raise DimensionError(f"{len(class_names)} names for {num_classes} classes")
        return cls(counts=np.zeros((num_classes, num_classes), dtype=np.int64),
                   class_names=list(class_names) if class_names else None)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    def total(self) -> int:
        return int(self.counts.sum())


def confusion_accumulate(cm: ConfusionMatrix, true_labels, pred_labels) -> ConfusionMatrix:
    """Fold a batch of (true, pred) pairs into a fresh matrix."""
    t = np.asarray(true_labels, dtype=np.int64).ravel()
    p = np.asarray(pred_labels, dtype=np.int64).ravel()
    if t.shape != p.shape:
        raise DimensionError(f"label arrays differ: {t.shape} vs {p.shape}")
    k = cm.num_classes
    if t.size and (t.min() < 0 or t.max() >= k or p.min() < 0 or p.max() >= k):
        raise ValueError(f"label outside [0,{k})")
    add = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts=cm.counts + add, class_names=cm.class_names)


def confusion_from_pairs(true_labels, pred_labels, num_classes: int,
                         class_names=None) -> ConfusionMatrix:
    return confusion_accumulate(ConfusionMatrix.zeros(num_classes, class_names),
                                true_labels, pred_labels)


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    if a.counts.shape != b.counts.shape:
        raise DimensionError(f"cannot merge {a.counts.shape} with {b.counts.shape}")
    return ConfusionMatrix(counts=a.counts + b.counts, class_names=a.class_names)


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray       # (K,) per class
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    support: np.ndarray         # (K,) true-class counts
    class_names: list | None = None


def derive_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Accuracy = trace/total; per-class P/R/F1 with 0/0 defined as 0."""
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(c)
    pred_tot = c.sum(axis=0)
    true_tot = c.sum(axis=1)
    precision = np.divide(diag, pred_tot, out=np.zeros_like(diag), where=pred_tot > 0)
    recall = np.divide(diag, true_tot, out=np.zeros_like(diag), where=true_tot > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(diag), where=pr > 0)
    return MetricsReport(
        accuracy=float(diag.sum() / total),
        precision=precision, recall=recall, f1=f1,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        support=cm.counts.sum(axis=1),
        class_names=cm.class_names)


def format_report(name: str, epochs: int, lr: float, report: MetricsReport) -> str:
    """One summary row: name, epochs, lr, accuracy to 5 places, macro P/R/F1 to 2."""
    lr_s = f"{lr:g}" if lr >= 1e-4 else np.format_float_positional(lr, trim="-")
    return (f"{name} {epochs} {lr_s} {report.accuracy:.5f} "
            f"{report.macro_precision:.2f} {report.macro_recall:.2f} "
            f"{report.macro_f1:.2f}")


def write_report_tsv(report: MetricsReport, path) -> None:
    """Per-class rows plus macro and accuracy rows; shortest round-trip floats."""
    names = report.class_names or [str(i) for i in range(len(report.precision))]
    lines = ["class\tprecision\trecall\tf1\tsupport"]
    for i, nm in enumerate(names):
        lines.append(f"{nm}\t{float(report.precision[i])!r}\t{float(report.recall[i])!r}"
                     f"\t{float(report.f1[i])!r}\t{int(report.support[i])}")
    total = int(report.support.sum())
    lines.append(f"macro\t{report.macro_precision!r}\t{report.macro_recall!r}"
                 f"\t{report.macro_f1!r}\t{total}")
    lines.append(f"accuracy\t{report.accuracy!r}\t\t\t{total}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_confusion_tsv(cm: ConfusionMatrix, path) -> None:
    names = cm.class_names or [str(i) for i in range(cm.num_classes)]
    lines = ["true\\pred\t" + "\t".join(names)]
    for i, nm in enumerate(names):
        lines.append(nm + "\t" + "\t".join(str(int(v)) for v in cm.counts[i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
