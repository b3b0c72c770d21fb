"""Figures for the CLI reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchSummary  # noqa: E402
from .simulator import StepRecord  # noqa: E402

__all__ = ["plot_bench", "plot_trajectory"]

# metadata keys matplotlib stamps into files; blanking them keeps output byte-stable
_STABLE_META = {"png": {"Software": None}, "pdf": {"Creator": None, "Producer": None, "CreationDate": None},
                "svg": {"Creator": None, "Date": None}}


def _save(fig, path: str) -> None:
    ext = str(path).rsplit(".", 1)[-1].lower()
    fig.savefig(path, dpi=120, metadata=_STABLE_META.get(ext))
    plt.close(fig)


def plot_bench(summaries: Iterable[BenchSummary], path: str, axis: str = "n") -> None:
    """Log-log mean time against ``axis``, one line per (rule, other axis value)."""
    other = "d" if axis == "n" else "n"
    lines = defaultdict(list)
    for s in summaries:
        lines[(s.rule, getattr(s, other))].append((getattr(s, axis), s.mean_ns, s.std_ns))
    fig, ax = plt.subplots(figsize=(6.4, 4.4))
    for (rule, fixed), pts in sorted(lines.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ax.errorbar(xs, [p[1] * 1e-6 for p in pts], yerr=[p[2] * 1e-6 for p in pts],
                    marker="o", ms=3, capsize=2, label=f"{rule} ({other}={fixed:g})")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel("aggregation time (ms)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


def plot_trajectory(records: Sequence[StepRecord], path: str, title: str = "") -> None:
    """Loss (log scale) and cosine to the true gradient, per step."""
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(6.4, 5.2))
    steps = [r.step for r in records]
    top.plot(steps, [max(r.loss, 1e-300) for r in records], lw=1)
    top.set_yscale("log")
    top.set_ylabel("loss")
    if title:
        top.set_title(title)
    bottom.plot(steps, [r.cosine for r in records], lw=0.8)
    bottom.set_ylim(-1.05, 1.05)
    bottom.set_ylabel("cosine to true gradient")
    bottom.set_xlabel("step")
    for ax in (top, bottom):
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
