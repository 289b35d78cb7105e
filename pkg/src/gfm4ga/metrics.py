"""Ranking metrics: AUROC (Mann-Whitney form) and AUPRC (average precision)."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def _check_inputs(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.int64).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.shape[0]} vs {y.shape[0]}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary {0, 1}")
    return s, y


def auroc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative; ties count 1/2.

    Undefined (raises ValueError) when only one class is present.
    """
    s, y = _check_inputs(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auroc undefined: input contains a single class")
    ranks = rankdata(s)  # average ranks handle ties as half credit
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auprc(scores, labels) -> float:
    """Area under precision-recall via the average-precision step sum.

    Equal scores are processed as one threshold block so the result matches a
    threshold-sweep computation exactly. Raises ValueError without positives.
    """
    s, y = _check_inputs(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("auprc undefined: no positive labels")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    area = 0.0
    tp = 0
    seen = 0
    i = 0
    n = s.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        block_tp = int(y_sorted[i:j].sum())
        tp += block_tp
        seen += j - i
        if block_tp > 0:
            precision = tp / seen
            area += precision * (block_tp / n_pos)
        i = j
    return area
