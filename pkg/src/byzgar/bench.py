"""Aggregation-time benchmark harness.

Protocol per (rule, n, d) cell: one untimed warm-up call, then ``repeats``
runs, each on ``n`` freshly sampled gradients uniform in ``(0, 1)^d``; only
the aggregation call is timed. The two timings furthest from their median are dropped and
the rest summarised by mean and (population) standard deviation. The
Byzantine bound is ``f = (n - 3) // 4`` for every rule.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import gar

log = logging.getLogger(__name__)

__all__ = [
    "BENCH_RULES",
    "BenchRecord",
    "BenchSummary",
    "drop_furthest",
    "summarize",
    "run_bench",
    "fit_power_law",
    "fit_scaling_exponent",
    "write_summaries",
    "write_records",
    "SUMMARY_HEADER",
    "RAW_HEADER",
]

SUMMARY_HEADER = ("rule", "n", "d", "f", "mean_ns", "std_ns")
RAW_HEADER = ("rule", "n", "d", "f", "run", "elapsed_ns")

# "noop" copies the first gradient; it gives the harness floor.
BENCH_RULES = gar.RULES + ("noop",)


@dataclass(frozen=True)
class BenchRecord:
    rule: str
    n: int
    d: int
    f: int
    run_index: int
    elapsed_ns: int


@dataclass(frozen=True)
class BenchSummary:
    rule: str
    n: int
    d: int
    f: int
    mean_ns: float
    std_ns: float


def drop_furthest(timings: Sequence[float], drop: int = 2) -> list[float]:
    """Remove the ``drop`` values furthest from the median, keeping input order.

    Among equally distant values the larger one goes first.

    >>> drop_furthest([10, 11, 12, 13, 14, 100, 1])
    [10, 11, 12, 13, 14]
    """
    if len(timings) < drop + 1:
        raise ValueError(f"need at least {drop + 1} timings, got {len(timings)}")
    med = float(np.median(timings))
    ranked = sorted(range(len(timings)), key=lambda i: (-abs(timings[i] - med), -timings[i]))
    dropped = set(ranked[:drop])
    return [t for i, t in enumerate(timings) if i not in dropped]


def summarize(timings: Sequence[float]) -> tuple[float, float]:
    kept = np.asarray(drop_furthest(timings), dtype=np.float64)
    return float(kept.mean()), float(kept.std())


def _call(rule: str, grads: np.ndarray, f: int):
    if rule == "noop":
        return grads[0].copy()
    return gar.aggregate(rule, grads, f)


def run_bench(
    rules: Iterable[str],
    n_list: Iterable[int],
    d_list: Iterable[int],
    repeats: int = 7,
    seed: int = 0,
    records: list[BenchRecord] | None = None,
) -> list[BenchSummary]:
    """Time every (rule, n, d) cell; raw timings are appended to ``records`` if given."""
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    rules = list(rules)
    for rule in rules:
        if rule not in BENCH_RULES:
            raise ValueError(f"unknown rule {rule!r}; valid rules: {', '.join(BENCH_RULES)}")
    summaries = []
    for d in d_list:
        for n in n_list:
            f = (n - 3) // 4
            for rule in rules:
                if rule in gar.RULES and f > gar.max_f(n, rule):
                    log.warning("skipping %s at n=%d: f=%d exceeds its bound", rule, n, f)
                    continue
                rng = np.random.default_rng([seed, n, d, BENCH_RULES.index(rule)])
                try:
                    _call(rule, rng.uniform(0.0, 1.0, size=(n, d)), f)
                    timings = []
                    for run in range(repeats):
                        grads = rng.uniform(0.0, 1.0, size=(n, d))
                        start = time.perf_counter_ns()
                        _call(rule, grads, f)
                        elapsed = max(time.perf_counter_ns() - start, 1)
                        del grads
                        timings.append(elapsed)
                        if records is not None:
                            records.append(BenchRecord(rule, n, d, f, run, elapsed))
                except MemoryError:
                    log.warning("skipping %s at n=%d d=%d: out of memory", rule, n, d)
                    continue
                mean, std = summarize(timings)
                summaries.append(BenchSummary(rule, n, d, f, mean, std))
    return summaries


def fit_power_law(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    if len(xs) < 3:
        raise ValueError(f"need at least 3 points to fit an exponent, got {len(xs)}")
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


def fit_scaling_exponent(summaries: Iterable[BenchSummary], axis: str) -> dict[tuple[str, int], float]:
    """Exponent of ``mean_ns`` along ``axis`` ('n' or 'd'), per (rule, fixed other axis).

    Groups with fewer than three points are rejected.
    """
    if axis not in ("n", "d"):
        raise ValueError(f"axis must be 'n' or 'd', got {axis!r}")
    other = "d" if axis == "n" else "n"
    groups: dict[tuple[str, int], list[tuple[int, float]]] = defaultdict(list)
    for s in summaries:
        groups[(s.rule, getattr(s, other))].append((getattr(s, axis), s.mean_ns))
    out = {}
    for key, pts in sorted(groups.items()):
        pts.sort()
        out[key] = fit_power_law([p[0] for p in pts], [p[1] for p in pts])
    return out


def _fmt(value: float) -> str:
    if isinstance(value, int) or (isinstance(value, float) and value.is_integer() and abs(value) < 1e15):
        return str(int(value))
    return repr(float(value)) if math.isfinite(value) else "nan"


def write_summaries(summaries: Iterable[BenchSummary], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    for s in summaries:
        writer.writerow([s.rule, s.n, s.d, s.f, _fmt(s.mean_ns), _fmt(s.std_ns)])


def write_records(records: Iterable[BenchRecord], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(RAW_HEADER)
    for r in records:
        writer.writerow([r.rule, r.n, r.d, r.f, r.run_index, r.elapsed_ns])
