"""Gradient aggregation rules: average, median, Krum, multi-Krum, multi-Bulyan.

Every rule is a deterministic function of the *ordered* input list: ties in
scores, in nearest-neighbour sets and in closeness to the median all go to
the lower original index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._kernels import closest_average, column_median
from .vecmath import as_batch, coordinate_median, mean_rows, pairwise_sq_distances

__all__ = [
    "RULES",
    "GarParams",
    "ScoreTable",
    "PreconditionError",
    "krum_scores",
    "multi_krum",
    "multi_bulyan",
    "average_gar",
    "median_gar",
    "krum_gar",
    "max_f",
    "aggregate",
]

RULES = ("average", "median", "krum", "multi-krum", "multi-bulyan")


class PreconditionError(ValueError):
    """An (n, f, m) combination outside the bounds a rule can tolerate."""


@dataclass(frozen=True)
class GarParams:
    """Contract numbers of one aggregation call.

    ``theta`` and ``beta`` are only meaningful for multi-Bulyan and are left
    at 0 otherwise.
    """

    n: int
    f: int
    m: int
    theta: int = 0
    beta: int = 0

    @classmethod
    def for_multi_krum(cls, n: int, f: int, m: int | None = None) -> "GarParams":
        if f < 0:
            raise PreconditionError(f"f must be >= 0, got {f}")
        if n < 2 * f + 3:
            raise PreconditionError(f"multi-krum requires n >= 2f+3 (n={n}, f={f})")
        m_max = n - f - 2
        if m is None:
            m = m_max
        if not 1 <= m <= m_max:
            raise PreconditionError(f"multi-krum requires 1 <= m <= n-f-2 = {m_max}, got m={m}")
        return cls(n=n, f=f, m=m)

    @classmethod
    def for_multi_bulyan(cls, n: int, f: int) -> "GarParams":
        if f < 0:
            raise PreconditionError(f"f must be >= 0, got {f}")
        if n < 4 * f + 3:
            raise PreconditionError(f"multi-bulyan requires n >= 4f+3 (n={n}, f={f})")
        theta = n - 2 * f - 2
        return cls(n=n, f=f, m=n - f - 2, theta=theta, beta=theta - 2 * f)


@dataclass(frozen=True)
class ScoreTable:
    """Krum scores, one per candidate, in candidate order."""

    scores: np.ndarray
    neighbors: int

    def ranking(self) -> np.ndarray:
        """Candidate indices sorted by score, ties toward the lower index."""
        return np.argsort(self.scores, kind="stable")


def _scores_from_distances(dist: np.ndarray, f: int) -> ScoreTable:
    k = dist.shape[0]
    q = k - f - 2
    if q < 1:
        raise PreconditionError(f"krum scoring requires at least f+3 = {f + 3} gradients, got {k}")
    # which of several equidistant neighbours is picked cannot change the sum
    nearest = np.sort(dist, axis=1)[:, 1:q + 1]
    scores = np.zeros(k, dtype=np.float64)
    for j in range(q):
        scores += nearest[:, j]
    return ScoreTable(scores=scores, neighbors=q)


def krum_scores(gradients, f: int) -> ScoreTable:
    """Sum of squared distances from each gradient to its ``k - f - 2`` nearest others."""
    batch = as_batch(gradients, check_finite=False)
    if f < 0:
        raise PreconditionError(f"f must be >= 0, got {f}")
    return _scores_from_distances(pairwise_sq_distances(batch), f)


def _multi_krum_on(
    batch: np.ndarray, dist: np.ndarray, f: int, m: int | None, rows: np.ndarray | None = None
) -> tuple[int, np.ndarray]:
    # dist covers the candidates batch[rows]; the winner index is relative to them
    table = _scores_from_distances(dist, f)
    if m is None:
        m = table.neighbors
    if not 1 <= m <= table.neighbors:
        raise PreconditionError(f"multi-krum requires 1 <= m <= k-f-2 = {table.neighbors}, got m={m}")
    ranking = table.ranking()
    winner = int(ranking[0])
    selected = np.sort(ranking[:m])
    if rows is not None:
        selected = rows[selected]
    return winner, mean_rows(batch, selected)


def multi_krum(gradients, f: int, m: int | None = None) -> tuple[int, np.ndarray]:
    """Krum winner index and the average of the ``m`` best-scoring gradients.

    ``m`` defaults to ``k - f - 2``. With ``m = 1`` the output is the winner
    gradient itself (plain Krum).
    """
    batch = as_batch(gradients, check_finite=False)
    GarParams.for_multi_krum(batch.shape[0], f, m)
    return _multi_krum_on(batch, pairwise_sq_distances(batch), f, m)


def multi_bulyan(gradients, f: int) -> np.ndarray:
    """Bulyan over multi-Krum.

    Runs theta = n - 2f - 2 rounds of multi-Krum on a shrinking candidate
    set, removing each round's winner. The winners give a coordinate-wise
    median; per coordinate, the beta = theta - 2f round averages closest to
    that median are averaged into the output.
    """
    batch = as_batch(gradients, check_finite=False)
    params = GarParams.for_multi_bulyan(batch.shape[0], f)
    theta, beta = params.theta, params.beta
    dist = pairwise_sq_distances(batch)
    remaining = np.arange(batch.shape[0])
    extracted = np.empty(theta, dtype=np.intp)
    aggregated = np.empty((theta, batch.shape[1]), dtype=np.float64)
    for i in range(theta):
        winner, agr = _multi_krum_on(batch, dist[np.ix_(remaining, remaining)], f, None, rows=remaining)
        extracted[i] = remaining[winner]
        aggregated[i] = agr
        remaining = np.delete(remaining, winner)
    median = np.empty(batch.shape[1])
    column_median(batch, extracted, median)
    out = np.empty(batch.shape[1])
    closest_average(aggregated, median, beta, out)
    return out


def average_gar(gradients) -> np.ndarray:
    return mean_rows(as_batch(gradients, check_finite=False))


def median_gar(gradients) -> np.ndarray:
    return coordinate_median(as_batch(gradients, check_finite=False))


def krum_gar(gradients, f: int) -> np.ndarray:
    return multi_krum(gradients, f, m=1)[1]


def max_f(n: int, rule: str) -> int:
    """Largest number of Byzantine inputs ``rule`` admits for ``n`` workers.

    Averaging nominally accepts up to n - 1 but tolerates none in practice.
    """
    if n < 3:
        raise ValueError(f"n must be >= 3, got {n}")
    if rule in ("krum", "multi-krum"):
        return (n - 3) // 2
    if rule == "multi-bulyan":
        return (n - 3) // 4
    if rule == "median":
        return -(-n // 2) - 1
    if rule == "average":
        return n - 1
    raise ValueError(f"unknown rule {rule!r}; valid rules: {', '.join(RULES)}")


_DISPATCH: dict[str, Callable[..., np.ndarray]] = {
    "average": lambda g, f, m: average_gar(g),
    "median": lambda g, f, m: median_gar(g),
    "krum": lambda g, f, m: krum_gar(g, f),
    "multi-krum": lambda g, f, m: multi_krum(g, f, m)[1],
    "multi-bulyan": lambda g, f, m: multi_bulyan(g, f),
}


def aggregate(rule: str, gradients, f: int = 0, m: int | None = None) -> np.ndarray:
    """Common entry point: aggregate ``gradients`` with the named rule."""
    try:
        fn = _DISPATCH[rule]
    except KeyError:
        raise ValueError(f"unknown rule {rule!r}; valid rules: {', '.join(RULES)}") from None
    return fn(gradients, f, m)
