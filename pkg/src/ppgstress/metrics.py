"""Binary classification metrics: accuracy, confusion matrix, PR curve, ROC-AUC."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata


def accuracy(preds, labels) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))


def confusion_matrix(preds, labels) -> np.ndarray:
    """2x2 counts, rows = true class, columns = predicted class."""
    preds, labels = np.asarray(preds, dtype=np.int64), np.asarray(labels, dtype=np.int64)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def pr_curve(scores, labels) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) for thresholds at every unique score plus
    one above the maximum; an example is positive when ``score >= threshold``.
    Precision with no predicted positives is 1.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("PR curve needs at least one positive label")
    uniq = np.unique(scores)
    thresholds = np.append(uniq, uniq[-1] + 1.0)

    # Counts of positives/negatives at or above each threshold, via a descending cumulative sum.
    order = np.argsort(scores, kind="stable")
    s_sorted, l_sorted = scores[order], labels[order]
    tp_tail = np.concatenate((np.cumsum(l_sorted[::-1])[::-1], [0]))
    fp_tail = np.concatenate((np.cumsum(~l_sorted[::-1])[::-1], [0]))
    first = np.searchsorted(s_sorted, thresholds, side="left")
    tp, fp = tp_tail[first], fp_tail[first]
    pred_pos = tp + fp
    precision = np.where(pred_pos > 0, tp / np.maximum(pred_pos, 1), 1.0)
    recall = tp / n_pos
    return [(float(t), float(p), float(r)) for t, p, r in zip(thresholds, precision, recall)]


def auc(scores, labels) -> float:
    """ROC-AUC as the Mann-Whitney statistic (concordant + ties / 2) / (P * N).

    Mid-ranks give ties exactly half credit.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class MetricsReport:
    accuracy: float
    confusion: np.ndarray
    pr_points: list
    roc_auc: Optional[float]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "accuracy": self.accuracy,
            "confusion_matrix": self.confusion.tolist(),
            "roc_auc": self.roc_auc,
            "pr_curve": [{"threshold": t, "precision": p, "recall": r} for t, p, r in self.pr_points],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def pr_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in self.pr_points:
            w.writerow([repr(t), repr(p), repr(r)])
        return buf.getvalue()


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    preds = (scores >= threshold).astype(np.int64)
    n_pos = int(labels.sum())
    return MetricsReport(
        accuracy=accuracy(preds, labels),
        confusion=confusion_matrix(preds, labels),
        pr_points=pr_curve(scores, labels) if n_pos else [],
        roc_auc=auc(scores, labels) if 0 < n_pos < labels.size else None,
        n_samples=int(labels.size),
    )
