"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics. The numba path
is used unless ``FLASHGAN_NUMBA=0`` is set in the environment before import
(or numba is missing). ``use_numba()`` reports which path is active.
"""

from __future__ import annotations

import os

import numpy as np

_WANT_NUMBA = os.environ.get("FLASHGAN_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in a subprocess
    HAS_NUMBA = False


def use_numba() -> bool:
    return HAS_NUMBA


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------


def scatter_add_rows_np(values: np.ndarray, index: np.ndarray, n_out: int) -> np.ndarray:
    out = np.zeros((n_out, values.shape[1]), dtype=np.float64)
    np.add.at(out, index, values)
    return out


def _tie_groups(scores_sorted: np.ndarray) -> np.ndarray:
    """Start offsets of runs of equal values, plus the end sentinel."""
    if scores_sorted.size == 0:
        return np.zeros(1, dtype=np.int64)
    change = np.flatnonzero(np.diff(scores_sorted)) + 1
    return np.concatenate(([0], change, [scores_sorted.size])).astype(np.int64)


def rank_auc_np(scores: np.ndarray, positive: np.ndarray) -> float:
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    pos = positive[order]
    bounds = _tie_groups(s)
    # average 1-based rank for every tie group
    ranks = np.empty(s.size, dtype=np.float64)
    for a, b in zip(bounds[:-1], bounds[1:]):
        ranks[a:b] = 0.5 * (a + 1 + b)
    n_pos = float(pos.sum())
    n_neg = float(pos.size) - n_pos
    return float((ranks[pos].sum() - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))


def step_average_precision_np(scores: np.ndarray, positive: np.ndarray) -> float:
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    pos = positive[order].astype(np.float64)
    bounds = _tie_groups(s)
    ends = bounds[1:] - 1
    tp = np.cumsum(pos)[ends]
    seen = ends + 1.0
    precision = tp / seen
    recall = tp / pos.sum()
    d_recall = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(d_recall * precision))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _scatter_add_rows_nb(values, index, n_out):
        out = np.zeros((n_out, values.shape[1]), dtype=np.float64)
        for i in range(index.shape[0]):
            r = index[i]
            for j in range(values.shape[1]):
                out[r, j] += values[i, j]
        return out

    @njit(cache=True)
    def _rank_auc_nb(scores, positive):
        order = np.argsort(scores, kind="mergesort")
        n = scores.shape[0]
        n_pos = 0.0
        rank_sum = 0.0
        i = 0
        while i < n:
            j = i
            while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
                j += 1
            avg = 0.5 * (i + 1 + j + 1)
            for t in range(i, j + 1):
                if positive[order[t]]:
                    n_pos += 1.0
                    rank_sum += avg
            i = j + 1
        n_neg = n - n_pos
        return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)

    @njit(cache=True)
    def _step_ap_nb(scores, positive):
        order = np.argsort(-scores, kind="mergesort")
        n = scores.shape[0]
        total_pos = 0.0
        for t in range(n):
            if positive[t]:
                total_pos += 1.0
        tp = 0.0
        prev_recall = 0.0
        ap = 0.0
        i = 0
        while i < n:
            j = i
            while j + 1 < n and scores[order[j + 1]] == scores[order[i]]:
                j += 1
            for t in range(i, j + 1):
                if positive[order[t]]:
                    tp += 1.0
            recall = tp / total_pos
            ap += (recall - prev_recall) * (tp / (j + 1.0))
            prev_recall = recall
            i = j + 1
        return ap


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def scatter_add_rows(values: np.ndarray, index: np.ndarray, n_out: int) -> np.ndarray:
    """Sum rows of ``values`` into ``n_out`` buckets given by ``index``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if HAS_NUMBA:
        return _scatter_add_rows_nb(values, index, int(n_out))
    return scatter_add_rows_np(values, index, n_out)


def rank_auc(scores: np.ndarray, positive: np.ndarray) -> float:
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    positive = np.ascontiguousarray(positive, dtype=np.bool_)
    if HAS_NUMBA:
        return float(_rank_auc_nb(scores, positive))
    return rank_auc_np(scores, positive)


def step_average_precision(scores: np.ndarray, positive: np.ndarray) -> float:
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    positive = np.ascontiguousarray(positive, dtype=np.bool_)
    if HAS_NUMBA:
        return float(_step_ap_nb(scores, positive))
    return step_average_precision_np(scores, positive)
