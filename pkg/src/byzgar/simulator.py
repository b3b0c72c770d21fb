"""Synchronous parameter-server SGD on analytic cost models.

Each step, ``n - f`` honest workers draw stochastic gradients at the current
parameters, ``f`` Byzantine workers answer with attack vectors computed from
those honest gradients, the server aggregates with the chosen rule and
applies ``x <- x - lr_k * aggregate``.

Random streams are keyed by ``(seed, step, worker)`` so a run's prefix does
not depend on how many steps or workers follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .attacks import AttackSpec, gen_byzantine
from .gar import RULES, aggregate, max_f

__all__ = [
    "CostModel",
    "LearningRate",
    "SimConfig",
    "StepRecord",
    "SimMetrics",
    "true_gradient",
    "stochastic_gradient",
    "run_simulation",
    "slowdown",
    "median_steps_to_threshold",
    "output_variance",
]


@dataclass(frozen=True)
class CostModel:
    """Diagonal quadratic, optionally with a separable sine perturbation.

    ``quadratic``:       Q(x) = 1/2 sum_j A_j (x_j - x*_j)^2
    ``nonconvex_sine``:  the above + amp * sum_j sin(freq (x_j - x*_j))
    """

    kind: str = "quadratic"
    optimum: tuple[float, ...] = (0.0,) * 10
    curvature: tuple[float, ...] = (1.0,) * 10
    amp: float = 0.0
    freq: float = 1.0

    def __post_init__(self):
        if self.kind not in ("quadratic", "nonconvex_sine"):
            raise ValueError(f"unknown cost model {self.kind!r}; valid: quadratic, nonconvex_sine")
        if len(self.optimum) < 1 or len(self.optimum) != len(self.curvature):
            raise ValueError(
                f"optimum (d={len(self.optimum)}) and curvature (d={len(self.curvature)}) must share d >= 1"
            )
        if not all(a > 0 and math.isfinite(a) for a in self.curvature):
            raise ValueError("curvature entries must be finite and > 0")
        if not all(math.isfinite(v) for v in self.optimum):
            raise ValueError("optimum entries must be finite")
        if not (math.isfinite(self.amp) and math.isfinite(self.freq)):
            raise ValueError("amp and freq must be finite")

    @classmethod
    def make(cls, kind: str = "quadratic", d: int = 10, optimum=None, curvature=None, amp: float = 0.0, freq: float = 1.0):
        optimum = tuple(float(v) for v in optimum) if optimum is not None else (0.0,) * d
        curvature = tuple(float(v) for v in curvature) if curvature is not None else (1.0,) * len(optimum)
        return cls(kind=kind, optimum=optimum, curvature=curvature, amp=float(amp), freq=float(freq))

    @property
    def d(self) -> int:
        return len(self.optimum)

    def loss(self, x: np.ndarray) -> float:
        delta = x - np.asarray(self.optimum)
        value = 0.5 * float(np.sum(np.asarray(self.curvature) * delta * delta))
        if self.kind == "nonconvex_sine":
            value += self.amp * float(np.sum(np.sin(self.freq * delta)))
        return value


def true_gradient(model: CostModel, x) -> np.ndarray:
    """Exact gradient of the cost model at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.d,):
        raise ValueError(f"dimension mismatch: model has d={model.d}, x has shape {x.shape}")
    delta = x - np.asarray(model.optimum)
    grad = np.asarray(model.curvature) * delta
    if model.kind == "nonconvex_sine":
        grad = grad + model.amp * model.freq * np.cos(model.freq * delta)
    return grad


def stochastic_gradient(model: CostModel, x, sigma: float, b: int, rng: np.random.Generator) -> np.ndarray:
    """Unbiased gradient estimate: exact gradient plus N(0, (sigma/sqrt(b))^2) noise."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    grad = true_gradient(model, x)
    if sigma == 0:
        return grad
    return grad + (sigma / math.sqrt(b)) * rng.standard_normal(model.d)


@dataclass(frozen=True)
class LearningRate:
    """``constant``: gamma0 every step; ``inverse_decay``: gamma0 / (1 + k / k0)."""

    schedule: str = "constant"
    gamma0: float = 0.1
    k0: float = 1.0

    def __post_init__(self):
        if self.schedule not in ("constant", "inverse_decay"):
            raise ValueError(f"unknown learning-rate schedule {self.schedule!r}; valid: constant, inverse_decay")
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be > 0, got {self.gamma0}")
        if not self.k0 > 0:
            raise ValueError(f"k0 must be > 0, got {self.k0}")

    def __call__(self, k: int) -> float:
        if self.schedule == "constant":
            return self.gamma0
        return self.gamma0 / (1.0 + k / self.k0)


@dataclass(frozen=True)
class SimConfig:
    n: int = 11
    f: int = 0
    rule: str = "average"
    m: int | None = None
    attack: AttackSpec = field(default_factory=AttackSpec)
    model: CostModel = field(default_factory=CostModel)
    sigma: float = 0.5
    batch_size: int = 1
    steps: int = 100
    lr: LearningRate = field(default_factory=LearningRate)
    seed: int = 0
    threshold: float = 1e-3
    x0: tuple[float, ...] | None = None
    # bound handed to the rule; defaults to f (the number of Byzantine workers)
    f_declared: int | None = None
    # end the run at the first step whose loss is below threshold
    stop_at_threshold: bool = False

    @property
    def rule_f(self) -> int:
        return self.f if self.f_declared is None else self.f_declared

    def validate(self) -> None:
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; valid rules: {', '.join(RULES)}")
        if self.n < 3:
            raise ValueError(f"n must be >= 3, got {self.n}")
        bound = max_f(self.n, self.rule)
        if not 0 <= self.f <= bound:
            raise ValueError(f"f must lie in [0, {bound}] for {self.rule} with n={self.n}, got {self.f}")
        if self.f_declared is not None and not self.f <= self.f_declared <= bound:
            raise ValueError(f"f_declared must lie in [f={self.f}, {bound}], got {self.f_declared}")
        if self.m is not None and self.rule == "multi-krum" and not 1 <= self.m <= self.n - self.rule_f - 2:
            raise ValueError(f"m must lie in [1, {self.n - self.rule_f - 2}], got {self.m}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.x0 is not None and len(self.x0) != self.model.d:
            raise ValueError(f"x0 has d={len(self.x0)}, model has d={self.model.d}")

    def initial_point(self) -> np.ndarray:
        if self.x0 is not None:
            return np.asarray(self.x0, dtype=np.float64)
        return np.asarray(self.model.optimum, dtype=np.float64) + 1.0


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    grad_norm: float
    cosine: float


@dataclass
class SimMetrics:
    records: list[StepRecord]
    steps_to_threshold: int | None
    final_x: np.ndarray
    divergent: bool = False
    divergence_step: int | None = None

    @property
    def final_loss(self) -> float | None:
        return self.records[-1].loss if self.records else None

    def summary(self) -> dict:
        final = self.final_loss
        return {
            "steps_to_threshold": self.steps_to_threshold,
            "divergent": self.divergent,
            "divergence_step": self.divergence_step,
            "final_loss": final if final is None or math.isfinite(final) else None,
            "steps_executed": len(self.records),
        }


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(np.dot(a, b)) / (na * nb)))


def honest_batch(model: CostModel, x: np.ndarray, config: SimConfig, step: int) -> np.ndarray:
    """Gradients of the honest workers ``0 .. n-f-1`` at one step."""
    sigma, b = config.sigma, config.batch_size
    rows = [
        stochastic_gradient(model, x, sigma, b, np.random.default_rng([config.seed, step, w]))
        for w in range(config.n - config.f)
    ]
    return np.stack(rows)


def run_simulation(config: SimConfig) -> SimMetrics:
    """Run the parameter-server loop described by ``config``.

    A non-finite parameter vector or loss stops the run; the partial metrics
    come back flagged ``divergent`` with the offending step.
    """
    config.validate()
    model = config.model
    x = config.initial_point()
    records: list[StepRecord] = []
    reached: int | None = None
    honest_count = config.n - config.f
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(config.steps):
            loss = model.loss(x)
            if not (math.isfinite(loss) and np.all(np.isfinite(x))):
                return SimMetrics(records, reached, x, divergent=True, divergence_step=k)
            grad = true_gradient(model, x)
            honest = honest_batch(model, x, config, k)
            attack_rng = np.random.default_rng([config.seed, k, honest_count])
            byz = gen_byzantine(
                config.attack,
                honest,
                config.f,
                attack_rng,
                honest=lambda r, x=x: stochastic_gradient(model, x, config.sigma, config.batch_size, r),
            )
            proposals = np.vstack([honest, byz]) if config.f else honest
            if not np.all(np.isfinite(proposals)):
                return SimMetrics(records, reached, x, divergent=True, divergence_step=k)
            update = aggregate(config.rule, proposals, config.rule_f, config.m)
            records.append(StepRecord(k, loss, float(np.linalg.norm(grad)), _cosine(update, grad)))
            x = x - config.lr(k) * update
            if reached is None and loss < config.threshold:
                reached = k
                if config.stop_at_threshold:
                    break
    if not np.all(np.isfinite(x)):
        return SimMetrics(records, reached, x, divergent=True, divergence_step=config.steps)
    return SimMetrics(records, reached, x)


def slowdown(reference: SimMetrics, candidate: SimMetrics) -> float:
    """``reference.steps_to_threshold / candidate.steps_to_threshold``."""
    if reference.steps_to_threshold is None:
        raise ValueError("reference run never reached the loss threshold")
    if candidate.steps_to_threshold is None:
        raise ValueError("candidate run never reached the loss threshold")
    if candidate.steps_to_threshold == 0:
        if reference.steps_to_threshold == 0:
            return 1.0
        raise ValueError("candidate started below the threshold; ratio undefined")
    return reference.steps_to_threshold / candidate.steps_to_threshold


def median_steps_to_threshold(config: SimConfig, seeds) -> tuple[float | None, list[int | None]]:
    """Median ``steps_to_threshold`` of ``config`` over ``seeds``.

    The median is ``None`` when fewer than half the runs reached the
    threshold (unreached runs count as +infinity).
    """
    steps = [run_simulation(replace(config, seed=int(s))).steps_to_threshold for s in seeds]
    if not steps:
        raise ValueError("need at least one seed")
    ranked = sorted(math.inf if s is None else s for s in steps)
    med = float(np.median(ranked))
    return (med if math.isfinite(med) else None), steps


def output_variance(
    rule: str,
    n: int,
    f: int,
    model: CostModel,
    x,
    sigma: float,
    draws: int,
    seed: int,
    batch_size: int = 1,
    m: int | None = None,
) -> tuple[float, float]:
    """Per-coordinate variance of a rule's output at frozen ``x``, all ``n`` workers honest.

    ``f`` is the declared bound handed to the rule. Returns the variance
    averaged over coordinates and its standard error (from the spread of the
    per-coordinate estimates).
    """
    if draws < 2:
        raise ValueError(f"draws must be >= 2, got {draws}")
    x = np.asarray(x, dtype=np.float64)
    config = SimConfig(n=n, f=0, rule="average", model=model, sigma=sigma, batch_size=batch_size, seed=seed)
    outputs = np.empty((draws, model.d))
    for t in range(draws):
        outputs[t] = aggregate(rule, honest_batch(model, x, config, t), f, m)
    per_coord = outputs.var(axis=0, ddof=1)
    # variance of a sample variance, summed over independent coordinates
    centered = outputs - outputs.mean(axis=0)
    m4 = np.mean(centered**4, axis=0)
    var_of_var = (m4 - per_coord**2 * (draws - 3) / (draws - 1)) / draws
    se = math.sqrt(float(np.sum(np.maximum(var_of_var, 0.0)))) / model.d
    return float(per_coord.mean()), se
