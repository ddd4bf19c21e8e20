"""Binary classification metrics and Pearson correlation."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = [
    "SingleClass",
    "NoPositives",
    "ZeroVariance",
    "ConfusionCounts",
    "ThresholdMetrics",
    "MetricReport",
    "roc_auc",
    "pr_auc",
    "confusion_counts",
    "threshold_metrics",
    "cohen_kappa",
    "pearson",
    "evaluate",
    "aggregate",
    "write_fold_csv",
]

METRIC_NAMES = ("roc_auc", "pr_auc", "acc", "bacc", "prec", "tpr", "tnr", "kappa")


class SingleClass(ValueError):
    pass


class NoPositives(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    return s, y


def _average_ranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # boundaries of runs of equal scores
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = 0.5 * (a + b - 1) + 1.0
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney U over ``n_pos * n_neg``; tied pairs count one half."""
    s, y = _as_arrays(scores, labels)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC AUC needs both classes")
    ranks = _average_ranks(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Average precision: sum of ``(R_k - R_{k-1}) * P_k`` over distinct
    thresholds taken in decreasing score order."""
    s, y = _as_arrays(scores, labels)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise NoPositives("PR AUC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_run = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y == 1)[last_of_run]
    predicted = (np.arange(1, len(s) + 1))[last_of_run]
    precision = tp / predicted
    recall = tp / n_pos
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_counts(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    s, y = _as_arrays(scores, labels)
    pred = s > threshold
    pos = y == 1
    return ConfusionCounts(
        tp=int((pred & pos).sum()),
        fp=int((pred & ~pos).sum()),
        tn=int((~pred & ~pos).sum()),
        fn=int((~pred & pos).sum()),
    )


@dataclass
class ThresholdMetrics:
    acc: float
    bacc: float
    prec: float
    tpr: float
    tnr: float
    counts: ConfusionCounts
    degenerate: list[str] = field(default_factory=list)


def _ratio(num: int, den: int, name: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def metrics_from_counts(c: ConfusionCounts) -> ThresholdMetrics:
    flags: list[str] = []
    tpr = _ratio(c.tp, c.tp + c.fn, "tpr", flags)
    tnr = _ratio(c.tn, c.tn + c.fp, "tnr", flags)
    prec = _ratio(c.tp, c.tp + c.fp, "prec", flags)
    acc = _ratio(c.tp + c.tn, c.total, "acc", flags)
    return ThresholdMetrics(acc, (tpr + tnr) / 2.0, prec, tpr, tnr, c, flags)


def threshold_metrics(scores, labels, threshold: float = 0.5) -> ThresholdMetrics:
    """Confusion-matrix metrics with the strict rule ``score > threshold``.

    Undefined ratios (for example precision with no predicted positives)
    are reported as 0 and named in ``degenerate``.
    """
    return metrics_from_counts(confusion_counts(scores, labels, threshold))


def cohen_kappa(counts: ConfusionCounts) -> tuple[float, bool]:
    """Return ``(kappa, degenerate)``; kappa is 0 when chance agreement is 1."""
    n = counts.total
    if n <= 0:
        raise ValueError("kappa needs at least one sample")
    p_o = (counts.tp + counts.tn) / n
    p_e = ((counts.tp + counts.fp) * (counts.tp + counts.fn) + (counts.tn + counts.fn) * (counts.tn + counts.fp)) / (n * n)
    if p_e == 1.0:
        return 0.0, True
    return (p_o - p_e) / (1.0 - p_e), False


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape or x.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    vx, vy = np.dot(dx, dx), np.dot(dy, dy)
    if vx / x.size <= 1e-12 or vy / y.size <= 1e-12:
        raise ZeroVariance("pearson with a constant input")
    return float(np.clip(np.dot(dx, dy) / np.sqrt(vx * vy), -1.0, 1.0))


@dataclass
class MetricReport:
    roc_auc: float
    pr_auc: float
    acc: float
    bacc: float
    prec: float
    tpr: float
    tnr: float
    kappa: float
    tp: int
    fp: int
    tn: int
    fn: int
    n: int
    degenerate: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(scores, labels, threshold: float = 0.5) -> MetricReport:
    """All eight metrics for synergist probabilities ``scores``."""
    tm = threshold_metrics(scores, labels, threshold)
    kappa, kappa_degenerate = cohen_kappa(tm.counts)
    flags = list(tm.degenerate) + (["kappa"] if kappa_degenerate else [])
    c = tm.counts
    return MetricReport(
        roc_auc=roc_auc(scores, labels),
        pr_auc=pr_auc(scores, labels),
        acc=tm.acc, bacc=tm.bacc, prec=tm.prec, tpr=tm.tpr, tnr=tm.tnr,
        kappa=kappa, tp=c.tp, fp=c.fp, tn=c.tn, fn=c.fn, n=c.total,
        degenerate=flags,
    )


def aggregate(reports) -> dict[str, tuple[float, float]]:
    """Mean and population std of each metric across folds."""
    reports = list(reports)
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports])
        out[name] = (float(vals.mean()), float(vals.std()))
    return out


def write_fold_csv(path, reports, labels=None):
    """One row per fold plus a ``mean`` and ``std`` row."""
    reports = list(reports)
    labels = labels or [str(i) for i in range(len(reports))]
    summary = aggregate(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", *METRIC_NAMES])
        for label, r in zip(labels, reports):
            w.writerow([label, *(repr(getattr(r, m)) for m in METRIC_NAMES)])
        w.writerow(["mean", *(repr(summary[m][0]) for m in METRIC_NAMES)])
        w.writerow(["std", *(repr(summary[m][1]) for m in METRIC_NAMES)])
