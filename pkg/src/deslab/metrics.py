"""Confusion matrix and the per-class metrics built from it.

Orientation: rows are the true class, columns the predicted class.

For class i:  TP = cm[i, i], FN = row i - TP, FP = column i - TP,
TN = everything else.  Average accuracy is the mean over classes of
(TP + TN) / total; precision and recall are ``None`` when undefined.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import MetricsError
from .faults import NUM_CLASSES

UNDEFINED = "undefined"
ORIENTATION = "rows = true class, columns = predicted class"


class ConfusionMatrix:
    def __init__(self, counts):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise MetricsError(f"confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any():
            raise MetricsError("negative confusion count")
        self.counts = counts

    @property
    def classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def __repr__(self):
        return f"ConfusionMatrix({self.counts.tolist()})"


@dataclass(frozen=True)
class PerClassCounts:
    cls: int
    tp: int
    tn: int
    fp: int
    fn: int


def confusion(predictions: Sequence[int], truths: Sequence[int], classes: int = NUM_CLASSES) -> ConfusionMatrix:
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    true = np.asarray(truths, dtype=np.int64).reshape(-1)
    if len(pred) != len(true):
        raise MetricsError(f"{len(pred)} predictions for {len(true)} truths")
    for arr in (pred, true):
        if len(arr) and (arr.min() < 0 or arr.max() >= classes):
            raise MetricsError(f"label outside [0, {classes - 1}]")
    counts = np.bincount(true * classes + pred, minlength=classes * classes)
    return ConfusionMatrix(counts.reshape(classes, classes))


def per_class(cm: ConfusionMatrix, i: int) -> PerClassCounts:
    if not 0 <= i < cm.classes:
        raise MetricsError(f"class {i} out of range")
    c = cm.counts
    tp = int(c[i, i])
    fn = int(c[i].sum()) - tp
    fp = int(c[:, i].sum()) - tp
    tn = cm.total - tp - fn - fp
    return PerClassCounts(i, tp, tn, fp, fn)


def average_accuracy(cm: ConfusionMatrix) -> float:
    if cm.classes == 0 or cm.total == 0:
        raise MetricsError("average accuracy of an empty confusion matrix")
    acc = 0.0
    for i in range(cm.classes):
        k = per_class(cm, i)
        acc += (k.tp + k.tn) / (k.tp + k.tn + k.fp + k.fn)
    return acc / cm.classes


def precision(cm: ConfusionMatrix, i: int) -> Optional[float]:
    k = per_class(cm, i)
    return None if k.tp + k.fp == 0 else k.tp / (k.tp + k.fp)


def recall(cm: ConfusionMatrix, i: int) -> Optional[float]:
    k = per_class(cm, i)
    return None if k.tp + k.fn == 0 else k.tp / (k.tp + k.fn)


def accuracy(cm: ConfusionMatrix) -> float:
    """Plain fraction of correct predictions (trace / total)."""
    return float(np.trace(cm.counts)) / cm.total


def normalize(cm: ConfusionMatrix) -> np.ndarray:
    rows = cm.counts.sum(axis=1, keepdims=True).astype(np.float64)
    out = np.zeros(cm.counts.shape)
    np.divide(cm.counts, rows, out=out, where=rows > 0)
    return out


def fold_average(cms: Sequence[ConfusionMatrix]) -> np.ndarray:
    if not cms:
        raise MetricsError("no confusion matrices to average")
    shape = cms[0].counts.shape
    for cm in cms:
        if cm.counts.shape != shape:
            raise MetricsError("confusion matrices differ in shape")
    return np.mean([normalize(cm) for cm in cms], axis=0)


def fmt(value: Optional[float], digits: int = 4) -> str:
    return UNDEFINED if value is None else f"{value:.{digits}f}"


def report(cms: Sequence[ConfusionMatrix], class_names: Optional[Sequence[str]] = None, title: str = "") -> str:
    """Plain-text report: raw counts, normalized matrix, AC and per-class P/R.

    With several matrices (one per fold) the counts are summed and the
    normalized matrix is the fold average.
    """
    total = ConfusionMatrix(sum(cm.counts for cm in cms))
    avg = fold_average(cms)
    n = total.classes
    names = list(class_names) if class_names else [f"C{i}" for i in range(n)]
    lines = []
    if title:
        lines.append(title)
    lines.append(f"orientation: {ORIENTATION}")
    lines.append(f"folds: {len(cms)}  samples: {total.total}")
    lines.append("")
    lines.append("counts:")
    lines.append("       " + " ".join(f"{f'p{j}':>6}" for j in range(n)))
    for i in range(n):
        lines.append(f"{f't{i}':>6} " + " ".join(f"{int(v):>6}" for v in total.counts[i]))
    lines.append("")
    lines.append("normalized (fold average of row-normalized matrices):")
    lines.append("       " + " ".join(f"{f'p{j}':>6}" for j in range(n)))
    for i in range(n):
        lines.append(f"{f't{i}':>6} " + " ".join(f"{v:6.4f}" for v in avg[i]))
    lines.append("")
    fold_ac = [average_accuracy(cm) for cm in cms]
    lines.append(f"AC: {np.mean(fold_ac):.4f}" + (f"  (per fold: {', '.join(f'{a:.4f}' for a in fold_ac)})" if len(cms) > 1 else ""))
    lines.append(f"accuracy (trace/total): {accuracy(total):.4f}")
    lines.append("")
    lines.append(f"{'class':<6} {'name':<18} {'precision':>10} {'recall':>10} {'support':>8}")
    for i in range(n):
        lines.append(
            f"{i:<6} {names[i]:<18} {fmt(precision(total, i)):>10} {fmt(recall(total, i)):>10} "
            f"{int(total.counts[i].sum()):>8}"
        )
    return "\n".join(lines) + "\n"


def report_csv(cms: Sequence[ConfusionMatrix]) -> str:
    total = ConfusionMatrix(sum(cm.counts for cm in cms))
    rows = ["class,tp,tn,fp,fn,precision,recall"]
    for i in range(total.classes):
        k = per_class(total, i)
        rows.append(f"{i},{k.tp},{k.tn},{k.fp},{k.fn},{fmt(precision(total, i), 6)},{fmt(recall(total, i), 6)}")
    rows.append(f"AC,{np.mean([average_accuracy(cm) for cm in cms]):.6f}")
    return "\n".join(rows) + "\n"


def matrix_csv(matrix: np.ndarray) -> str:
    n = matrix.shape[0]
    lines = ["true\\pred," + ",".join(str(j) for j in range(n))]
    for i in range(n):
        lines.append(f"{i}," + ",".join(f"{v:.6f}" for v in matrix[i]))
    return "\n".join(lines) + "\n"


def read_matrix_csv(text: str) -> np.ndarray:
    rows = [line.split(",")[1:] for line in text.strip().splitlines()[1:]]
    return np.array([[float(v) for v in r] for r in rows])
