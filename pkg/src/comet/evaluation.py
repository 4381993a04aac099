"""Detection metrics: point-adjusted F1, best-F1 threshold search, AUC-ROC/PR.

Point adjustment (the PA%K protocol): a maximal contiguous run of label-1
timesteps counts as fully detected when the fraction of predicted points in
it strictly exceeds K percent, in which case every prediction inside the run
is set to 1. K=0 is the classic lenient variant (any single detection adjusts
the whole segment); K=100 never adjusts and equals the raw point-wise metric.

The best-F1 search sweeps thresholds over the sorted unique score values
(predicting score >= threshold), optionally capped to a uniform grid for very
long series, and applies point adjustment before computing F1. AUC-ROC uses
the rank statistic with averaged ties; AUC-PR uses step-wise interpolation
over the descending-score operating points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ShapeError


def _check_pair(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.size != y.size:
        raise ShapeError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.all(np.isin(y, (0, 1))):
        raise MetricError("labels must be binary 0/1")
    return s, y.astype(np.int64)


def label_segments(labels: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, end) spans of maximal contiguous label-1 runs."""
    y = np.asarray(labels).astype(np.int64)
    padded = np.concatenate([[0], y, [0]])
    diff = np.diff(padded)
    starts = np.nonzero(diff == 1)[0]
    ends = np.nonzero(diff == -1)[0]
    return list(zip(starts.tolist(), ends.tolist()))


def point_adjust(preds: np.ndarray, labels: np.ndarray, k_percent: float) -> np.ndarray:
    """Apply PA%K adjustment to binary predictions; returns a new array."""
    p = np.asarray(preds).astype(np.int64).reshape(-1)
    y = np.asarray(labels).astype(np.int64).reshape(-1)
    if p.size != y.size:
        raise ShapeError(f"preds ({p.size}) and labels ({y.size}) differ in length")
    out = p.copy()
    for start, end in label_segments(y):
        detected = p[start:end].mean()
        if detected * 100.0 > k_percent:
            out[start:end] = 1
    return out


def f1_score(preds: np.ndarray, labels: np.ndarray) -> float:
    p = np.asarray(preds).astype(bool)
    y = np.asarray(labels).astype(bool)
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def best_f1(scores, labels, k_percent: float, threshold_grid: int = 0
            ) -> tuple[float, float]:
    """Best point-adjusted F1 over a threshold sweep; returns (f1, threshold).

    threshold_grid=0 sweeps every unique score (exact optimum); a positive
    value caps the sweep to that many uniformly spaced thresholds. Ties in F1
    resolve to the lowest threshold.
    """
    s, y = _check_pair(scores, labels)
    if y.sum() == 0:
        raise MetricError("best_f1 undefined without any positive label")
    candidates = np.unique(s)
    if threshold_grid and candidates.size > threshold_grid:
        candidates = np.linspace(s.min(), s.max(), threshold_grid)
    best, best_theta = -1.0, candidates[0]
    for theta in candidates:
        adjusted = point_adjust(s >= theta, y, k_percent)
        f1 = f1_score(adjusted, y)
        if f1 > best:
            best, best_theta = f1, float(theta)
    return best, best_theta


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic (ties averaged)."""
    s, y = _check_pair(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("auc_roc needs both classes present")
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_pr(scores, labels) -> float:
    """Area under the precision-recall curve, step-wise interpolation."""
    s, y = _check_pair(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise MetricError("auc_pr needs both classes present")
    order = np.argsort(-s, kind="stable")
    sorted_y = y[order]
    sorted_s = s[order]
    # operating points at the last index of each tie group
    boundaries = np.nonzero(np.diff(sorted_s))[0]
    cut_points = np.concatenate([boundaries, [y.size - 1]])
    tp = np.cumsum(sorted_y)[cut_points].astype(np.float64)
    counts = (cut_points + 1).astype(np.float64)
    precision = tp / counts
    recall = tp / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


@dataclass
class MetricReport:
    f1_k0: float
    f1_k100: float
    auc_roc: float
    auc_pr: float
    threshold_k0: float
    threshold_k100: float

    def lines(self) -> list[str]:
        return [
            f"f1_k0={self.f1_k0!r}",
            f"f1_k100={self.f1_k100!r}",
            f"auc_roc={self.auc_roc!r}",
            f"auc_pr={self.auc_pr!r}",
            f"threshold_k0={self.threshold_k0!r}",
            f"threshold_k100={self.threshold_k100!r}",
        ]


def evaluate(scores, labels, threshold_grid: int = 0) -> MetricReport:
    """All reported metrics for one scored series."""
    f1_0, th_0 = best_f1(scores, labels, 0.0, threshold_grid)
    f1_100, th_100 = best_f1(scores, labels, 100.0, threshold_grid)
    return MetricReport(
        f1_k0=f1_0,
        f1_k100=f1_100,
        auc_roc=auc_roc(scores, labels),
        auc_pr=auc_pr(scores, labels),
        threshold_k0=th_0,
        threshold_k100=th_100,
    )
