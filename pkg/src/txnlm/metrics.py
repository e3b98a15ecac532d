"""Evaluation metrics implemented from first principles.

Nothing here depends on sklearn; the test suite cross-checks these against
independent oracles. Metric ids follow the short table abbreviations used
throughout the project: acc, roc, pr, f1.
"""

from __future__ import annotations

import numpy as np

METRIC_IDS = ("acc", "roc", "pr", "f1")


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks of values ascending, ties receiving the average rank."""
    values = np.asarray(values)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise ValueError("accuracy of empty labels")
    return float((y_true == y_pred).mean())


def roc_auc(y_true, scores) -> float:
    """Rank-statistic ROC AUC (Mann-Whitney), ties averaged."""
    y_true = np.asarray(y_true).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(y_true.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc requires both classes present")
    ranks = average_ranks(scores)
    return float((ranks[y_true].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def pr_auc(y_true, scores) -> float:
    """Area under precision-recall by step interpolation at each threshold."""
    y_true = np.asarray(y_true).astype(bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(y_true.sum())
    if n_pos == 0:
        raise ValueError("pr_auc requires at least one positive")
    order = np.argsort(-scores, kind="stable")
    y = y_true[order]
    s = scores[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # evaluate only at the last index of each distinct score (threshold)
    last = np.flatnonzero(np.diff(s, append=np.nan) != 0)
    precision = tp[last] / (tp[last] + fp[last])
    recall = tp[last] / n_pos
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev_recall) * precision).sum())


def f1_macro(y_true, y_pred, n_classes: int) -> float:
    """Macro F1 over all n_classes; absent classes contribute 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    total = 0.0
    for c in range(n_classes):
        tp = float(((y_true == c) & (y_pred == c)).sum())
        fp = float(((y_true != c) & (y_pred == c)).sum())
        fn = float(((y_true == c) & (y_pred != c)).sum())
        denom = 2 * tp + fp + fn
        total += (2 * tp / denom) if denom > 0 else 0.0
    return total / n_classes


def ovr_macro_roc_auc(y_true, prob_matrix, n_classes: int) -> float:
    """One-vs-rest ROC AUC averaged over classes with both outcomes present.

    Classes missing a positive (or negative) example in y_true are skipped;
    with 50-class tasks on finite evaluation splits some classes can be
    absent.
    """
    y_true = np.asarray(y_true)
    prob_matrix = np.asarray(prob_matrix)
    aucs = []
    for c in range(n_classes):
        mask = y_true == c
        if mask.any() and not mask.all():
            aucs.append(roc_auc(mask, prob_matrix[:, c]))
    if not aucs:
        raise ValueError("no class has both positives and negatives")
    return float(np.mean(aucs))


def spearman_rho(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    rx = average_ranks(np.asarray(x, dtype=np.float64))
    ry = average_ranks(np.asarray(y, dtype=np.float64))
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0:
        raise ValueError("spearman undefined for constant input")
    return float((rx * ry).sum() / denom)
