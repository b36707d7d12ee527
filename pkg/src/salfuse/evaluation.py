"""Threshold sweeps: precision/recall, ROC and F-measure over a set of maps."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

THRESHOLDS = np.arange(256) / 255.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class EvalCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    f_measure: np.ndarray
    auc_roc: float
    max_f: float

    @property
    def best_threshold(self) -> float:
        return float(self.thresholds[int(np.argmax(self.f_measure))])


def _check_pair(gmap, gt):
    gmap, gt = np.asarray(gmap, dtype=np.float64), np.asarray(gt)
    if gmap.shape != gt.shape:
        raise ValueError(f"map {gmap.shape} and ground truth {gt.shape} differ in shape")
    if not np.all((gt == 0) | (gt == 1)):
        raise ValueError("ground truth must be binary")
    return gmap, gt.astype(bool)


def confusion(gmap, gt_binary, threshold: float) -> ConfusionCounts:
    """Counts with a pixel predicted positive when ``value >= threshold``."""
    gmap, gt = _check_pair(gmap, gt_binary)
    pred = gmap >= threshold
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    fn = int(np.sum(~pred & gt))
    return ConfusionCounts(tp, fp, gt.size - tp - fp - fn, fn)


def pr_point(c: ConfusionCounts):
    """``(precision, recall)``; an empty denominator yields 1."""
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 1.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    return precision, recall


def f_measure(precision, recall):
    p, r = np.asarray(precision, dtype=np.float64), np.asarray(recall, dtype=np.float64)
    s = p + r
    out = np.divide(2 * p * r, s, out=np.zeros(np.broadcast(p, r).shape), where=s > 0)
    return float(out) if out.ndim == 0 else out


def _counts(gmap, gt):
    """tp and fp at every threshold of :data:`THRESHOLDS` in one pass."""
    gmap, gt = _check_pair(gmap, gt)
    v = gmap.ravel()
    pos = np.sort(v[gt.ravel()])
    neg = np.sort(v[~gt.ravel()])
    tp = pos.size - np.searchsorted(pos, THRESHOLDS, side="left")
    fp = neg.size - np.searchsorted(neg, THRESHOLDS, side="left")
    return tp.astype(np.int64), fp.astype(np.int64), pos.size, neg.size


def _rates(tp, fp, n_pos, n_neg):
    tp, fp = np.asarray(tp, dtype=np.float64), np.asarray(fp, dtype=np.float64)
    precision = np.divide(tp, tp + fp, out=np.ones_like(tp), where=(tp + fp) > 0)
    recall = tp / n_pos if n_pos else np.ones_like(tp)
    fpr = fp / n_neg if n_neg else np.zeros_like(fp)
    return precision, recall, fpr


def auc(fpr, tpr) -> float:
    """Trapezoid area under the ROC points, closed with (0, 0) and (1, 1)."""
    x = np.concatenate([[0.0], np.asarray(fpr, dtype=np.float64), [1.0]])
    y = np.concatenate([[0.0], np.asarray(tpr, dtype=np.float64), [1.0]])
    order = np.lexsort((y, x))
    return float(np.trapezoid(y[order], x[order]))


def sweep(pairs, mode: str = "aggregate") -> EvalCurve:
    """Evaluate ``(map, binary gt)`` pairs at the 256 thresholds ``k / 255``.

    ``mode="aggregate"`` sums confusion counts over all images before
    forming rates; ``mode="mean"`` averages per-image precision, recall and
    fpr instead.  ``auc_roc`` and ``max_f`` are computed from the resulting
    curve either way.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("cannot evaluate an empty dataset")
    if mode not in ("aggregate", "mean"):
        raise ValueError(f"unknown mode {mode!r}")
    counts = [_counts(m, g) for m, g in pairs]
    if mode == "aggregate":
        tp = sum(c[0] for c in counts)
        fp = sum(c[1] for c in counts)
        precision, recall, fpr = _rates(tp, fp, sum(c[2] for c in counts),
                                        sum(c[3] for c in counts))
    else:
        per = [_rates(*c) for c in counts]
        precision, recall, fpr = (np.mean([p[i] for p in per], axis=0) for i in range(3))
    f = f_measure(precision, recall)
    return EvalCurve(THRESHOLDS.copy(), precision, recall, recall.copy(), fpr, f,
                     auc(fpr, recall), float(f.max()))


def write_csv(path, curve: EvalCurve) -> None:
    cols = np.column_stack([curve.thresholds, curve.precision, curve.recall,
                            curve.tpr, curve.fpr, curve.f_measure])
    np.savetxt(path, cols, delimiter=",", header="threshold,precision,recall,tpr,fpr,f",
               comments="", fmt="%.10g")


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=1)


def write_summary(path, curve: EvalCurve, **extra) -> None:
    data = {"max_f": curve.max_f, "auc_roc": curve.auc_roc,
            "best_threshold": curve.best_threshold, **extra}
    Path(path).write_text(json.dumps(data, indent=2) + "\n")
