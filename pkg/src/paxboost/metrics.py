"""Classification and regression metrics."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import UndefinedMetricError

METRIC_KEYS = ("acc", "pre", "rec", "auc", "f1")


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve by the trapezoid rule over every distinct score.

    Tied scores form one ROC step, so ties count one half. The area is
    accumulated as an integer (twice the area times P*N) and divided once,
    which makes it bit-identical to the pairwise Mann-Whitney statistic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = int(np.sum(labels == 1))
    neg = int(labels.size - pos)
    if pos == 0 or neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    order = np.argsort(-scores, kind="mergesort")
    s, lab = scores[order], labels[order]
    # last index of each run of equal scores
    cut = np.flatnonzero(np.diff(s) != 0)
    ends = np.concatenate([cut, [s.size - 1]])
    tp = np.cumsum(lab == 1)[ends].astype(np.int64)
    fp = (ends + 1) - tp
    tp = np.concatenate([[0], tp])
    fp = np.concatenate([[0], fp])
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * pos * neg)


def classification_metrics(scores, labels, threshold: float = 0.5) -> dict:
    """ACC, PRE, REC, AUC and F1 from predicted probabilities.

    PRE/REC fall back to 0 on an empty denominator. ``auc`` is None when only
    one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.size == 0:
        raise ValueError("scores and labels must be non-empty and equally long")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be 0/1")
    pred = scores >= threshold
    truth = labels == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    acc = float(np.mean(pred == truth))
    pre = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * pre * rec / (pre + rec) if pre + rec else 0.0
    try:
        auc: Optional[float] = roc_auc(scores, labels)
    except UndefinedMetricError:
        auc = None
    return {"acc": acc, "pre": pre, "rec": rec, "auc": auc, "f1": f1}


def rmse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def average_rows(rows: Sequence[dict]) -> dict:
    """Arithmetic mean of each numeric metric across rows (None if any row lacks it)."""
    if not rows:
        raise ValueError("nothing to average")
    out = {}
    for key in rows[0]:
        vals = [r.get(key) for r in rows]
        if any(v is None for v in vals):
            out[key] = None
        else:
            out[key] = float(np.mean(vals))
    return out
