"""Binary detection metrics (rank AUC, threshold TPR/FPR) and PSNR."""

from __future__ import annotations

import json
import math

import numpy as np


class UndefinedMetricError(ValueError):
    """Raised when a metric needs both classes but got one."""


def _check_classes(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"ROC metrics need both classes (got {n_pos} positives, {n_neg} negatives)"
        )
    return n_pos, n_neg


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1 or s.size < 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: pair-win fraction with ties counted half.

    Computed via tie-averaged ranks, which agrees exactly with O(n^2) pair
    counting.
    """
    s, y = _as_arrays(scores, labels)
    n_pos, n_neg = _check_classes(y)
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _roc_points(s: np.ndarray, y: np.ndarray):
    """(fpr, tpr) at every distinct threshold t (classify score >= t)."""
    n_pos, n_neg = _check_classes(y)
    order = np.argsort(-s, kind="mergesort")
    ss = s[order]
    yy = y[order]
    tp = np.cumsum(yy == 1)
    fp = np.cumsum(yy == 0)
    last = np.nonzero(np.diff(ss, append=-np.inf))[0]  # last index of each tie block
    tpr = tp[last] / n_pos
    fpr = fp[last] / n_neg
    return fpr, tpr


def tpr_at_fpr(scores, labels, fpr_budget: float = 0.10) -> float:
    """Best TPR among observed-score thresholds with FPR within budget."""
    s, y = _as_arrays(scores, labels)
    fpr, tpr = _roc_points(s, y)
    ok = fpr <= fpr_budget
    if not ok.any():  # the implicit +inf threshold classifies nothing positive
        return 0.0
    return float(tpr[ok].max())


def fpr_at_tpr(scores, labels, tpr_floor: float = 0.90) -> float:
    """Smallest FPR among thresholds that reach the TPR floor."""
    s, y = _as_arrays(scores, labels)
    fpr, tpr = _roc_points(s, y)
    ok = tpr >= tpr_floor
    if not ok.any():
        return 1.0  # only classify-everything reaches the floor
    return float(fpr[ok].min())


def roc_metrics(scores, labels) -> dict:
    s, y = _as_arrays(scores, labels)
    n_pos, n_neg = _check_classes(y)
    return {
        "auc": auc(s, y),
        "tpr_at_fpr10": tpr_at_fpr(s, y, 0.10),
        "fpr_at_tpr90": fpr_at_tpr(s, y, 0.90),
        "n_pos": n_pos,
        "n_neg": n_neg,
    }


def write_metrics_json(metrics: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=1)
        fh.write("\n")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """20*log10(255/sqrt(MSE)) over all bytes; +inf for identical images."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(255.0 / math.sqrt(mse))
