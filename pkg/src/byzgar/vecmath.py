"""Flat-vector numerics shared by every aggregation rule.

Gradients are plain 1-d ``float64`` numpy arrays; a batch of gradients is a
2-d array of shape ``(count, d)``. Finiteness is checked once, when external
data is converted with :func:`as_gradient` / :func:`as_batch`, so the inner
loops below stay branch-free.

Reductions accumulate row by row in a fixed order (ascending row index,
starting from zero). That makes results bit-reproducible and lets an
independent pure-Python oracle agree with them exactly.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

# column block size for the O(k d) / O(k^2 d) loops: 64 KiB per row
BLOCK = 8192

__all__ = [
    "as_gradient",
    "as_batch",
    "l2_distance_sq",
    "pairwise_sq_distances",
    "average",
    "sum_rows",
    "mean_rows",
    "coordinate_median",
    "select_k_closest",
]


def as_gradient(data) -> np.ndarray:
    """Convert ``data`` to a finite 1-d float64 gradient vector."""
    vec = np.array(data, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"gradient must be 1-dimensional, got shape {vec.shape}")
    if vec.shape[0] < 1:
        raise ValueError("gradient dimension must be >= 1")
    if not np.all(np.isfinite(vec)):
        bad = int(np.flatnonzero(~np.isfinite(vec))[0])
        raise ValueError(f"gradient component {bad} is not finite ({vec[bad]!r})")
    return vec


def as_batch(gradients, check_finite: bool = True) -> np.ndarray:
    """Stack a sequence of gradients into a ``(count, d)`` float64 array.

    Accepts a 2-d array or any sequence of equal-length vectors. Raises
    ``ValueError`` on ragged input (naming both dimensions), an empty batch,
    or, unless ``check_finite`` is off, non-finite values. Aggregation rules
    pass ``check_finite=False``: external data is validated once on entry.
    """
    if isinstance(gradients, np.ndarray) and gradients.ndim == 2:
        batch = np.asarray(gradients, dtype=np.float64)
    else:
        rows = [np.asarray(g, dtype=np.float64).reshape(-1) for g in gradients]
        if not rows:
            raise ValueError("expected at least one gradient, got an empty list")
        d = rows[0].shape[0]
        for i, row in enumerate(rows):
            if row.shape[0] != d:
                raise ValueError(
                    f"dimension mismatch: gradient 0 has d={d}, gradient {i} has d={row.shape[0]}"
                )
        batch = np.stack(rows)
    if batch.shape[0] < 1:
        raise ValueError("expected at least one gradient, got an empty list")
    if batch.shape[1] < 1:
        raise ValueError("gradient dimension must be >= 1")
    if check_finite and not _finite(batch):
        i, j = (int(v[0]) for v in np.nonzero(~np.isfinite(batch)))
        raise ValueError(f"gradient {i} component {j} is not finite ({batch[i, j]!r})")
    return batch


def l2_distance_sq(a, b) -> float:
    """Squared Euclidean distance between two vectors of equal dimension."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: d={a.size} vs d={b.size}")
    diff = a - b
    return float((diff * diff).sum())


def _finite(batch: np.ndarray) -> bool:
    # non-finite values always poison the sum; overflow of finite values is a false alarm
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(batch.sum()):
            return True
    return bool(np.isfinite(batch).all())


def pairwise_sq_distances(batch: np.ndarray) -> np.ndarray:
    """Symmetric ``(k, k)`` matrix of squared distances, zero diagonal.

    Differences are formed explicitly (no Gram-matrix shortcut) so that a
    zero distance is exactly zero and small distances keep full precision.
    Columns are processed in blocks of ``BLOCK`` to keep temporaries in
    cache. Costs O(k^2 d).
    """
    k, d = batch.shape
    dist = np.zeros((k, k), dtype=np.float64)
    for c0 in range(0, d, BLOCK):
        sub = batch[:, c0:c0 + BLOCK]
        for i in range(k - 1):
            diff = sub[i + 1:] - sub[i]
            np.square(diff, out=diff)
            dist[i, i + 1:] += diff.sum(axis=1)
    dist += dist.T
    return dist


def sum_rows(batch: np.ndarray, rows: Sequence[int] | None = None) -> np.ndarray:
    """Sum of the selected rows, accumulated in the order given, from zero."""
    if rows is None:
        rows = range(batch.shape[0])
    d = batch.shape[1]
    out = np.zeros(d, dtype=np.float64)
    for c0 in range(0, d, BLOCK):
        acc = out[c0:c0 + BLOCK]
        for r in rows:
            acc += batch[r, c0:c0 + BLOCK]
    return out


def mean_rows(batch: np.ndarray, rows: Sequence[int] | None = None) -> np.ndarray:
    """Mean of the selected rows: ordered sum from zero, divided, then clamped.

    Rounding can push ``sum / count`` an ulp outside the values it averages
    (six copies of 0.1 average to 0.09999...). The clamp to the per-column
    [min, max] of the selected rows restores the envelope, and with it exact
    results on identical inputs; it never moves a value that was in range.
    """
    rows = list(range(batch.shape[0])) if rows is None else [int(r) for r in rows]
    if not rows:
        raise ValueError("cannot average an empty list of gradients")
    d = batch.shape[1]
    count = len(rows)
    out = np.zeros(d, dtype=np.float64)
    lo = np.empty(min(BLOCK, d))
    hi = np.empty(min(BLOCK, d))
    for c0 in range(0, d, BLOCK):
        acc = out[c0:c0 + BLOCK]
        w = acc.shape[0]
        first = batch[rows[0], c0:c0 + BLOCK]
        acc += first
        lo[:w] = first
        hi[:w] = first
        for r in rows[1:]:
            row = batch[r, c0:c0 + BLOCK]
            acc += row
            np.minimum(lo[:w], row, out=lo[:w])
            np.maximum(hi[:w], row, out=hi[:w])
        acc /= count
        np.maximum(acc, lo[:w], out=acc)
        np.minimum(acc, hi[:w], out=acc)
    return out


def average(vs) -> np.ndarray:
    """Component-wise arithmetic mean of a non-empty list of gradients."""
    batch = as_batch(vs, check_finite=False)
    return mean_rows(batch)


def coordinate_median(vs) -> np.ndarray:
    """Coordinate-wise median; even counts take the mean of the two middle values."""
    batch = as_batch(vs, check_finite=False)
    if batch.shape[0] == 0:
        raise ValueError("cannot take the median of an empty list of gradients")
    return np.median(batch, axis=0)


def select_k_closest(values, center: float, k: int) -> list[int]:
    """Indices of the ``k`` values closest to ``center``, in ascending order.

    Ties in distance go to the lower index.

    >>> select_k_closest([1, 5, 9], 4, 2)
    [0, 1]
    """
    values = np.asarray(values, dtype=np.float64)
    if k < 1 or k > values.shape[0]:
        raise ValueError(f"k must lie in [1, {values.shape[0]}], got {k}")
    order = np.argsort(np.abs(values - center), kind="stable")
    return sorted(int(i) for i in order[:k])
