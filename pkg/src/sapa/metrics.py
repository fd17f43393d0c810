"""Imbalance-aware classification metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    mcc: float
    pr_auc: float
    roc_auc: float
    threshold: float
    counts: ConfusionCounts
    flags: tuple = field(default=())

    def as_dict(self):
        row = asdict(self)
        row.update(row.pop("counts"))
        row["flags"] = ";".join(self.flags)
        return row


def _validate(labels, scores):
    y = np.asarray(labels).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape[0] != s.shape[0]:
        raise ValueError(f"length mismatch: {y.shape[0]} labels vs {s.shape[0]} scores")
    if y.shape[0] == 0:
        raise ValueError("no rows to evaluate")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    y = y.astype(np.int64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return y, s


def _require_both_classes(y):
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        raise ValueError("metric undefined: labels contain a single class")


def confusion(labels, predictions):
    y = np.asarray(labels).astype(bool)
    p = np.asarray(predictions).astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(y & p)), fp=int(np.sum(~y & p)), fn=int(np.sum(y & ~p)), tn=int(np.sum(~y & ~p))
    )


def precision_recall_f1(counts: ConfusionCounts):
    flags = []
    if counts.tp + counts.fp == 0:
        precision = 0.0
        flags.append("degenerate_precision")
    else:
        precision = counts.tp / (counts.tp + counts.fp)
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f1 = f1_score(precision, recall)
    return precision, recall, f1, flags


def f1_score(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def mcc(counts: ConfusionCounts):
    """Matthews correlation; 0.0 when any marginal is empty."""
    tp, fp, fn, tn = counts.tp, counts.fp, counts.fn, counts.tn
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def pr_auc(labels, scores):
    """Average precision: sum over distinct score thresholds of (recall step) x precision.

    Rows sharing a score form one block, so ties neither help nor hurt.
    """
    y, s = _validate(labels, scores)
    _require_both_classes(y)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of every block of equal scores
    block_end = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.shape[0] - 1]
    tp = np.cumsum(y_sorted)[block_end]
    predicted = block_end + 1
    precision = tp / predicted
    recall = tp / tp[-1]
    steps = np.diff(np.r_[0.0, recall])
    return float(np.sum(steps * precision))


def roc_auc(labels, scores):
    """Mann-Whitney form: P(score+ > score-) + 0.5 P(tie)."""
    y, s = _validate(labels, scores)
    _require_both_classes(y)
    ranks = rankdata(s)
    n_pos = int(y.sum())
    n_neg = y.shape[0] - n_pos
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_metrics(labels, scores, threshold=0.5) -> MetricsReport:
    y, s = _validate(labels, scores)
    counts = confusion(y, s >= threshold)
    precision, recall, f1, flags = precision_recall_f1(counts)
    if 0 in (counts.tp + counts.fp, counts.tp + counts.fn, counts.tn + counts.fp, counts.tn + counts.fn):
        flags.append("degenerate_mcc")
    if y.min() == y.max():
        # ranking metrics undefined on single-class data
        flags.append("single_class")
        ap = auc = float("nan")
    else:
        ap = pr_auc(y, s)
        auc = roc_auc(y, s)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        mcc=mcc(counts),
        pr_auc=ap,
        roc_auc=auc,
        threshold=float(threshold),
        counts=counts,
        flags=tuple(flags),
    )


def max_f1_threshold(labels, scores):
    """Score threshold (predict >= t) maximising F1; lowest such threshold on ties."""
    y, s = _validate(labels, scores)
    _require_both_classes(y)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    block_end = np.r_[np.nonzero(np.diff(s_sorted))[0], s_sorted.shape[0] - 1]
    tp = np.cumsum(y[order])[block_end]
    predicted = block_end + 1
    f1 = 2.0 * tp / (predicted + tp[-1])
    best = int(np.argmax(f1))
    return float(s_sorted[block_end[best]])
