"""ROC analysis for membership scores (higher score means "member")."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MetricError

LOW_FPRS = (0.001, 0.01)


@dataclass
class RocCurve:
    """Step ROC curve; point ``i`` classifies ``score >= thresholds[i]`` as IN."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    positives: int
    negatives: int

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-D and equally long")
    if not np.all(np.isin(y, (0, 1))):
        raise MetricError("labels must be 0 or 1")
    y = y.astype(np.int64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise MetricError("both classes must be present")
    if np.any(np.isnan(s)):
        raise MetricError("scores contain NaN")
    return s, y, n_pos, len(y) - n_pos


def roc(scores, labels) -> RocCurve:
    """Sweep thresholds over the distinct scores, highest first.

    Equal scores cross the threshold together, so ties produce one
    (possibly diagonal) step rather than an order-dependent staircase.
    """
    s, y, n_pos, n_neg = _check(scores, labels)
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    fp = np.cumsum(1 - y_sorted)[last_of_group]
    return RocCurve(
        fpr=np.r_[0.0, fp / n_neg],
        tpr=np.r_[0.0, tp / n_pos],
        thresholds=np.r_[np.inf, s_sorted[last_of_group]],
        positives=n_pos,
        negatives=n_neg,
    )


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve."""
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


def tpr_at_fpr(curve: RocCurve, fpr_target: float) -> float:
    """Largest TPR among thresholds whose FPR does not exceed the target."""
    if not 0.0 <= fpr_target <= 1.0:
        raise MetricError("fpr_target must lie in [0, 1]")
    ok = curve.fpr <= fpr_target + 1e-15
    return float(curve.tpr[ok].max())


def balanced_accuracy(scores, labels) -> float:
    """Best ``(TPR + TNR) / 2`` over all swept thresholds."""
    c = roc(scores, labels)
    return float(np.max((c.tpr + 1.0 - c.fpr) / 2.0))


def summary(scores, labels) -> dict:
    c = roc(scores, labels)
    return {
        "auc": auc(c),
        "balanced_accuracy": float(np.max((c.tpr + 1.0 - c.fpr) / 2.0)),
        "tpr_at_fpr_0p001": tpr_at_fpr(c, 0.001),
        "tpr_at_fpr_0p01": tpr_at_fpr(c, 0.01),
        "n_pos": c.positives,
        "n_neg": c.negatives,
        "balanced_accuracy_rule": "max over swept thresholds",
    }


def write_roc_csv(curve: RocCurve, path, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, th in curve.points:
            w.writerow([repr(f), repr(t), repr(th)])
