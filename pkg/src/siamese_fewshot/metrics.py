"""Confusion counts, per-class F1, macro-F1 and fold aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0


ConfusionCounts = dict  # class id -> ClassCounts


def confusion(predictions: Sequence[int], truth: Sequence[int], classes: Iterable[int]) -> dict[int, ClassCounts]:
    """One-vs-rest TP/FP/FN/TN for every class in ``classes``."""
    pred = np.asarray(predictions, dtype=np.int64).ravel()
    true = np.asarray(truth, dtype=np.int64).ravel()
    if pred.shape != true.shape:
        raise MetricsError(f"predictions ({len(pred)}) and truth ({len(true)}) differ in length")
    classes = sorted(int(c) for c in classes)
    known = set(classes)
    stray = (set(pred.tolist()) | set(true.tolist())) - known
    if stray:
        raise MetricsError(f"labels {sorted(stray)} are outside the class set {classes}")
    out = {}
    for c in classes:
        tp = int(np.sum((pred == c) & (true == c)))
        fp = int(np.sum((pred == c) & (true != c)))
        fn = int(np.sum((pred != c) & (true == c)))
        out[c] = ClassCounts(tp, fp, fn, len(true) - tp - fp - fn)
    return out


def f1(counts: ClassCounts) -> float:
    """2TP / (2TP + FP + FN), or 0 when the denominator vanishes."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 2 * counts.tp / denom if denom else 0.0


def macro_f1(counts: dict[int, ClassCounts]) -> float:
    if not counts:
        raise MetricsError("macro_f1 needs at least one class")
    return sum(f1(c) for c in counts.values()) / len(counts)


@dataclass(frozen=True)
class FoldResults:
    folds: tuple[float, ...]
    mean: float
    std: float


def aggregate(folds: Sequence[float]) -> FoldResults:
    """Mean and population standard deviation of per-fold scores."""
    vals = np.asarray(list(folds), dtype=np.float64)
    if vals.size == 0:
        raise MetricsError("cannot aggregate an empty list of folds")
    return FoldResults(tuple(vals.tolist()), float(vals.mean()), float(vals.std()))
