"""Omniscient Byzantine gradient generators.

The adversary sees every correct gradient of the current step before they
reach the server. Colluding kinds (``reversed``, ``constant_large``,
``little_is_enough``) send ``f`` identical vectors; randomised kinds draw
each vector independently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gar import krum_scores
from .vecmath import as_batch

__all__ = ["ATTACKS", "AttackSpec", "MimicResult", "gen_byzantine", "mimic_regression"]

ATTACKS = ("none", "random_gaussian", "reversed", "constant_large", "little_is_enough", "mimic_regression")

# name -> (default value, must be strictly positive)
_PARAMS: dict[str, dict[str, tuple[float, bool]]] = {
    "none": {},
    "random_gaussian": {"scale": (1.0, True)},
    "reversed": {"scale": (1.0, True)},
    "constant_large": {"scale": (1e6, True)},
    "little_is_enough": {"z": (1.5, False)},
    "mimic_regression": {"budget": (200.0, True), "step": (0.0, False), "target_seed": (-1.0, False)},
}


@dataclass(frozen=True)
class AttackSpec:
    """A named Byzantine strategy and its parameters.

    Missing parameters take their defaults. ``reversed`` reads its factor
    from ``scale``; ``little_is_enough`` from ``z``. ``mimic_regression``
    takes an evaluation ``budget``, an initial ``step`` (0 picks the mean
    coordinate spread of the correct set) and a ``target_seed`` (negative
    means "push against the correct mean").
    """

    kind: str = "none"
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _PARAMS:
            raise ValueError(f"unknown attack {self.kind!r}; valid attacks: {', '.join(ATTACKS)}")
        allowed = _PARAMS[self.kind]
        unknown = sorted(set(self.params) - set(allowed))
        if unknown:
            raise ValueError(f"attack {self.kind!r} does not take parameter(s) {unknown}")
        for name, value in self.params.items():
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(f"attack parameter {name} must be finite, got {value}")
            if allowed[name][1] and value <= 0:
                raise ValueError(f"attack parameter {name} must be > 0, got {value}")
            if name == "z" and value < 0:
                raise ValueError(f"attack parameter z must be >= 0, got {value}")

    def get(self, name: str) -> float:
        return float(self.params.get(name, _PARAMS[self.kind][name][0]))

    @classmethod
    def from_dict(cls, data: dict) -> "AttackSpec":
        return cls(kind=data.get("kind", "none"), params={k: float(v) for k, v in data.get("params", {}).items()})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass
class MimicResult:
    vector: np.ndarray
    selected: bool
    evaluations: int


def _is_selected(correct: np.ndarray, candidate: np.ndarray, f: int) -> bool:
    batch = np.vstack([correct, np.broadcast_to(candidate, (f, candidate.shape[0]))])
    n = batch.shape[0]
    if n < 2 * f + 3:
        return False
    ranking = krum_scores(batch, f).ranking()
    m = n - f - 2
    return bool(np.any(ranking[:m] >= correct.shape[0]))


def mimic_regression(
    correct: np.ndarray,
    f: int,
    budget: int,
    step: float,
    direction: np.ndarray,
) -> MimicResult:
    """Push a colluding vector along ``direction`` while multi-Krum still picks it.

    Gradient-free coordinate search starting from the correct mean: each
    evaluation tries one coordinate move that increases the projection on
    ``direction``; a full sweep without progress halves the step. Stops
    after ``budget`` selection checks.
    """
    mu = correct.mean(axis=0)
    x = mu.copy()
    evaluations = 1
    selected = _is_selected(correct, x, f)
    if not selected:
        return MimicResult(vector=x, selected=False, evaluations=evaluations)
    coords = [int(j) for j in np.argsort(-np.abs(direction), kind="stable") if direction[j] != 0.0]
    if not coords:
        return MimicResult(vector=x, selected=True, evaluations=evaluations)
    pos = 0
    stalled = 0
    while evaluations < budget and step > 0.0:
        j = coords[pos]
        trial = x.copy()
        trial[j] += step * math.copysign(1.0, direction[j])
        evaluations += 1
        if _is_selected(correct, trial, f):
            x = trial
            stalled = 0
        else:
            stalled += 1
        pos = (pos + 1) % len(coords)
        if stalled >= len(coords):
            step /= 2.0
            stalled = 0
    return MimicResult(vector=x, selected=True, evaluations=evaluations)


def gen_byzantine(
    spec: AttackSpec,
    correct,
    f: int,
    rng: np.random.Generator,
    honest: Callable[[np.random.Generator], np.ndarray] | None = None,
) -> np.ndarray:
    """Return an ``(f, d)`` array of Byzantine gradients.

    ``honest`` draws one honest stochastic gradient; the ``none`` kind uses
    it for each Byzantine slot. Without it, ``none`` falls back to a
    Gaussian fitted to the correct set.
    """
    if f < 0:
        raise ValueError(f"f must be >= 0, got {f}")
    if f > 0 and len(correct) == 0:
        raise ValueError("cannot generate Byzantine gradients from an empty correct set")
    if f == 0:
        d = np.shape(correct)[1] if len(correct) else 0
        return np.empty((0, d), dtype=np.float64)
    correct = as_batch(correct)
    d = correct.shape[1]
    mu = correct.mean(axis=0)
    kind = spec.kind
    if kind == "none":
        if honest is not None:
            return np.stack([np.asarray(honest(rng), dtype=np.float64) for _ in range(f)])
        return mu + correct.std(axis=0) * rng.standard_normal((f, d))
    if kind == "random_gaussian":
        return spec.get("scale") * rng.standard_normal((f, d))
    if kind == "reversed":
        vec = -spec.get("scale") * mu
    elif kind == "constant_large":
        vec = np.full(d, spec.get("scale"))
    elif kind == "little_is_enough":
        vec = mu - spec.get("z") * correct.std(axis=0)
    elif kind == "mimic_regression":
        seed = spec.get("target_seed")
        if seed < 0:
            direction = -mu
        else:
            direction = np.random.default_rng(int(seed)).standard_normal(d)
        step = spec.get("step") or float(correct.std(axis=0).mean()) or 1.0
        vec = mimic_regression(correct, f, int(spec.get("budget")), step, direction).vector
    else:  # pragma: no cover - guarded by AttackSpec
        raise ValueError(f"unknown attack {kind!r}")
    return np.tile(vec, (f, 1))
