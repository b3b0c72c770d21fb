"""Monte-Carlo checks of Byzantine resilience.

Two checks are provided:

* the angular condition: the expected aggregate must have inner product at
  least ``(1 - sin alpha) * |g|^2`` with the true gradient ``g``, where
  ``sin alpha = eta * sqrt(d) * sigma / |g|``;
* the per-coordinate leeway: how far, coordinate by coordinate, the
  aggregate strays from the closest honest gradient, and how that scales
  with the dimension.

Each trial has its own seeded stream so runs are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import AttackSpec, gen_byzantine
from .bench import fit_power_law
from .gar import GarParams, aggregate

__all__ = [
    "ETA_VARIANTS",
    "ResilienceEstimate",
    "LeewayEstimate",
    "eta",
    "check_variance_condition",
    "estimate_weak_condition",
    "leeway_check",
    "leeway_scaling",
]

ETA_VARIANTS = ("lemma_statement", "proof_body")


def eta(n: int, f: int, m: int, variant: str = "lemma_statement") -> float:
    """Variance-control ratio of multi-Krum.

    Both published forms are available: ``lemma_statement`` divides the
    Byzantine term by ``m``, ``proof_body`` by ``n - 2f - 2``.

    >>> round(eta(11, 2, 7), 4)
    5.5806
    """
    GarParams.for_multi_krum(n, f, m)
    if variant == "lemma_statement":
        denom = m
    elif variant == "proof_body":
        denom = n - 2 * f - 2
    else:
        raise ValueError(f"unknown eta variant {variant!r}; valid: {', '.join(ETA_VARIANTS)}")
    if denom <= 0:
        raise ValueError(f"eta denominator must be > 0, got {denom}")
    return math.sqrt(2.0 * (n - f + (f * m + f * f * (m + 1)) / denom))


def check_variance_condition(eta_value: float, d: int, sigma: float, grad_norm: float) -> tuple[bool, float | None]:
    """Whether ``eta * sqrt(d) * sigma < |g|`` holds, and ``sin alpha`` when it does."""
    if grad_norm <= 0:
        raise ValueError(f"grad_norm must be > 0, got {grad_norm}")
    ratio = eta_value * math.sqrt(d) * sigma / grad_norm
    if ratio < 1.0:
        return True, ratio
    return False, None


@dataclass
class ResilienceEstimate:
    rule: str
    n: int
    f: int
    d: int
    sigma: float
    attack: dict
    inner_product_lhs: float
    halfwidth: float
    bound_rhs: float | None
    alpha: float | None
    eta: float
    eta_variant: str
    trials: int
    seed: int
    passed: bool | None
    moments: dict[str, float] = field(default_factory=dict)
    moments_finite: bool = True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out


def _honest_and_byzantine(g, sigma, n, f, attack, rng):
    honest = g + sigma * rng.standard_normal((n - f, g.shape[0]))
    byz = gen_byzantine(attack, honest, f, rng, honest=lambda r: g + sigma * r.standard_normal(g.shape[0]))
    return honest, (np.vstack([honest, byz]) if f else honest)


def estimate_weak_condition(
    rule: str,
    n: int,
    f: int,
    attack: AttackSpec,
    g,
    sigma: float,
    trials: int,
    seed: int,
    eta_variant: str = "lemma_statement",
    m: int | None = None,
) -> ResilienceEstimate:
    """Estimate ``<E aggregate, g>`` and compare it with ``(1 - sin alpha) |g|^2``.

    Honest gradients are ``N(g, sigma^2 I)``. The decision is
    ``lhs - halfwidth >= rhs`` with a 3-standard-error half-width; when the
    variance condition fails, alpha is undefined and ``passed`` is ``None``.
    The moments ``E |aggregate|^r`` for r = 2, 3, 4 are reported as a proxy
    for the bounded-moment requirement.
    """
    if trials < 100:
        raise ValueError(f"trials must be >= 100, got {trials}")
    g = np.asarray(g, dtype=np.float64)
    d = g.shape[0]
    gn = float(np.linalg.norm(g))
    m_eta = m if m is not None else n - f - 2
    eta_value = eta(n, f, m_eta, eta_variant)
    ok, sin_alpha = check_variance_condition(eta_value, d, sigma, gn)
    inner = np.empty(trials)
    norms = np.empty(trials)
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        _, proposals = _honest_and_byzantine(g, sigma, n, f, attack, rng)
        out = aggregate(rule, proposals, f, m)
        inner[t] = float(np.dot(out, g))
        norms[t] = float(np.linalg.norm(out))
    lhs = float(inner.mean())
    halfwidth = 3.0 * float(inner.std(ddof=1)) / math.sqrt(trials)
    moments = {f"r{r}": float(np.mean(norms**r)) for r in (2, 3, 4)}
    if ok:
        rhs = (1.0 - sin_alpha) * gn * gn
        alpha = math.asin(sin_alpha)
        passed = lhs - halfwidth >= rhs
    else:
        rhs = alpha = passed = None
    return ResilienceEstimate(
        rule=rule,
        n=n,
        f=f,
        d=d,
        sigma=sigma,
        attack=attack.to_dict(),
        inner_product_lhs=lhs,
        halfwidth=halfwidth,
        bound_rhs=rhs,
        alpha=alpha,
        eta=eta_value,
        eta_variant=eta_variant,
        trials=trials,
        seed=seed,
        passed=passed,
        moments=moments,
        moments_finite=all(math.isfinite(v) for v in moments.values()),
    )


@dataclass
class LeewayEstimate:
    per_coordinate: np.ndarray
    worst_worker: np.ndarray

    @property
    def max(self) -> float:
        return float(self.per_coordinate.max())


def leeway_check(
    rule: str,
    n: int,
    f: int,
    attack: AttackSpec,
    g,
    sigma: float,
    trials: int,
    seed: int,
    m: int | None = None,
) -> LeewayEstimate:
    """Per coordinate i, ``min over honest w of E|aggregate_i - G_w,i|``."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    g = np.asarray(g, dtype=np.float64)
    acc = np.zeros((n - f, g.shape[0]))
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        honest, proposals = _honest_and_byzantine(g, sigma, n, f, attack, rng)
        out = aggregate(rule, proposals, f, m)
        acc += np.abs(out - honest)
    acc /= trials
    return LeewayEstimate(per_coordinate=acc.min(axis=0), worst_worker=acc.argmin(axis=0))


def leeway_scaling(
    rule: str,
    n: int,
    f: int,
    attack: AttackSpec,
    sigma0: float,
    dims=(16, 64, 256, 1024),
    trials: int = 500,
    seed: int = 0,
) -> dict:
    """Max-coordinate leeway across dimensions, with |g| = 1 held fixed.

    The honest noise is ``sigma0 / sqrt(d)`` per coordinate, so the total
    noise ``sqrt(d) * sigma`` and therefore ``sin alpha`` stay constant as
    ``d`` grows. Returns the leeway per dimension and the fitted log-log
    exponent in ``d``.
    """
    leeways = {}
    for d in dims:
        g = np.full(d, 1.0 / math.sqrt(d))
        leeways[int(d)] = leeway_check(rule, n, f, attack, g, sigma0 / math.sqrt(d), trials, seed).max
    xs = list(leeways)
    return {"leeway": leeways, "exponent": fit_power_law(xs, [leeways[x] for x in xs])}
