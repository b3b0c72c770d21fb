"""Compiled per-coordinate loops for multi-Bulyan.

Numpy has no cheap way to sort many short columns, so the median and the
closest-to-median selection run here. Both work on blocks of coordinates
with the coordinate as the innermost (vectorisable) loop, and rank entries
by counting: row ``r`` beats row ``i`` if its key is smaller, or equal with
``r < i``.

Results are bit-identical to the plain definition: an even-count median is
``(lo + hi) / 2`` and selected values are summed in ascending row order
starting from 0.0 (adding +0.0 for unselected rows changes nothing), then
divided and clamped to the [min, max] of the selected values.
"""

import numpy as np
from numba import njit

BLOCK = 256


@njit(cache=True)
def column_median(batch, rows, out):
    """Median of ``batch[rows]`` per column, written to ``out``."""
    k = rows.shape[0]
    d = batch.shape[1]
    half = k // 2
    odd = k % 2 == 1
    vals = np.empty((k, BLOCK))
    cnt = np.empty(BLOCK, dtype=np.int64)
    lo = np.empty(BLOCK)
    hi = np.empty(BLOCK)
    for c0 in range(0, d, BLOCK):
        w = min(BLOCK, d - c0)
        for i in range(k):
            ri = rows[i]
            for j in range(w):
                vals[i, j] = batch[ri, c0 + j]
        for j in range(w):
            lo[j] = 0.0
            hi[j] = 0.0
        for i in range(k):
            for j in range(w):
                cnt[j] = 0
            for r in range(i):
                for j in range(w):
                    cnt[j] += vals[r, j] <= vals[i, j]
            for r in range(i + 1, k):
                for j in range(w):
                    cnt[j] += vals[r, j] < vals[i, j]
            for j in range(w):
                c = cnt[j]
                if c == half:
                    hi[j] = vals[i, j]
                if c == half - 1:
                    lo[j] = vals[i, j]
        for j in range(w):
            out[c0 + j] = hi[j] if odd else (lo[j] + hi[j]) / 2.0


@njit(cache=True)
def closest_average(rows, center, count, out):
    """Per column, mean of the ``count`` entries of ``rows`` closest to ``center``."""
    k, d = rows.shape
    dist = np.empty((k, BLOCK))
    cnt = np.empty(BLOCK, dtype=np.int64)
    total = np.empty(BLOCK)
    lo = np.empty(BLOCK)
    hi = np.empty(BLOCK)
    for c0 in range(0, d, BLOCK):
        w = min(BLOCK, d - c0)
        for i in range(k):
            for j in range(w):
                dist[i, j] = abs(rows[i, c0 + j] - center[c0 + j])
        for j in range(w):
            total[j] = 0.0
            lo[j] = np.inf
            hi[j] = -np.inf
        for i in range(k):
            for j in range(w):
                cnt[j] = 0
            for r in range(i):
                for j in range(w):
                    cnt[j] += dist[r, j] <= dist[i, j]
            for r in range(i + 1, k):
                for j in range(w):
                    cnt[j] += dist[r, j] < dist[i, j]
            for j in range(w):
                v = rows[i, c0 + j]
                keep = cnt[j] < count
                total[j] += v if keep else 0.0
                lo[j] = min(lo[j], v) if keep else lo[j]
                hi[j] = max(hi[j], v) if keep else hi[j]
        for j in range(w):
            out[c0 + j] = min(max(total[j] / count, lo[j]), hi[j])
