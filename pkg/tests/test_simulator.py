import math
from dataclasses import replace

import numpy as np
import pytest

from byzgar.attacks import AttackSpec
from byzgar.simulator import (
    CostModel,
    LearningRate,
    SimConfig,
    SimMetrics,
    output_variance,
    run_simulation,
    slowdown,
    stochastic_gradient,
    true_gradient,
)

QUAD = CostModel.make(d=10)
# frozen from a seeded run of this implementation
GOLDEN_STEPS = 1648


def test_true_gradient_examples():
    assert true_gradient(QUAD, np.zeros(10)).tolist() == [0.0] * 10
    two = CostModel.make(d=2)
    assert true_gradient(two, [3, -2]).tolist() == [3.0, -2.0]
    with pytest.raises(ValueError, match="dimension mismatch"):
        true_gradient(two, [1, 2, 3])


def test_nonconvex_gradient_finite_differences():
    model = CostModel.make("nonconvex_sine", optimum=[0.3, -1, 2, 0], curvature=[1, 2, 0.5, 3], amp=0.4, freq=2.5)
    x = np.random.default_rng(0).normal(size=4)
    grad = true_gradient(model, x)
    h = 1e-5
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (model.loss(x + e) - model.loss(x - e)) / (2 * h)
        assert fd == pytest.approx(grad[j], rel=1e-6, abs=1e-9)


def test_stochastic_gradient():
    x = np.full(10, 0.5)
    assert stochastic_gradient(QUAD, x, 0.0, 1, np.random.default_rng(0)).tolist() == [0.5] * 10
    a = stochastic_gradient(QUAD, x, 1.0, 4, np.random.default_rng(5))
    b = stochastic_gradient(QUAD, x, 1.0, 4, np.random.default_rng(5))
    assert a.tobytes() == b.tobytes()


def test_stochastic_gradient_unbiased():
    model = CostModel.make(d=3)
    x = np.array([1.0, -2.0, 0.5])
    sigma, b, draws = 2.0, 4, 100_000
    rng = np.random.default_rng(11)
    total = np.zeros(3)
    for _ in range(draws):
        total += stochastic_gradient(model, x, sigma, b, rng)
    bound = 4 * (sigma / math.sqrt(b)) / math.sqrt(draws)
    assert np.all(np.abs(total / draws - x) < bound)


def test_learning_rate():
    assert LearningRate("constant", 0.3)(50) == 0.3
    assert LearningRate("inverse_decay", 1.0, 10)(10) == 0.5
    with pytest.raises(ValueError):
        LearningRate("cosine")
    with pytest.raises(ValueError):
        LearningRate(gamma0=0)


def test_averaging_golden_run():
    config = SimConfig(n=11, f=0, rule="average", model=QUAD, sigma=0.5, steps=2000, lr=LearningRate("constant", 0.1))
    metrics = run_simulation(config)
    assert len(metrics.records) == 2000
    assert metrics.steps_to_threshold is not None
    assert metrics.steps_to_threshold == GOLDEN_STEPS
    assert all(-1.0 <= r.cosine <= 1.0 for r in metrics.records)
    early = np.mean([r.loss for r in metrics.records[:10]])
    late = np.mean([r.loss for r in metrics.records[-50:]])
    assert late < early


def test_seed_determinism():
    config = SimConfig(n=9, f=2, rule="multi-krum", attack=AttackSpec("little_is_enough"), model=QUAD, steps=60)
    a, b = run_simulation(config), run_simulation(config)
    assert a.records == b.records and a.final_x.tobytes() == b.final_x.tobytes()
    c = run_simulation(replace(config, seed=1))
    assert c.records != a.records


def test_prefix_independent_of_length():
    config = SimConfig(model=QUAD, steps=30)
    short = run_simulation(config)
    long = run_simulation(replace(config, steps=80))
    assert long.records[:30] == short.records


def test_reversed_attack_breaks_averaging_not_krum():
    base = SimConfig(
        n=11, f=2, attack=AttackSpec("reversed", {"scale": 10}), model=QUAD, steps=3000,
        lr=LearningRate("inverse_decay", 1.0, 1.0),
    )
    avg = run_simulation(replace(base, rule="average"))
    assert avg.divergent or avg.steps_to_threshold is None
    krum = run_simulation(replace(base, rule="multi-krum"))
    assert krum.steps_to_threshold is not None and not krum.divergent


def test_divergence_is_flagged():
    config = SimConfig(n=5, f=0, model=CostModel.make(d=2), sigma=0.0, steps=5000, lr=LearningRate("constant", 3.0))
    metrics = run_simulation(config)
    assert metrics.divergent and metrics.divergence_step is not None
    assert len(metrics.records) == metrics.divergence_step
    assert metrics.summary()["divergent"] is True


def test_zero_steps_and_noise_free_descent():
    assert run_simulation(SimConfig(model=QUAD, steps=0)).records == []
    model = CostModel.make(d=3, curvature=[1.0, 2.0, 0.5])
    for rule in ("average", "median", "krum", "multi-krum", "multi-bulyan"):
        config = SimConfig(n=11, f=0, rule=rule, model=model, sigma=0.0, steps=20, lr=LearningRate("constant", 0.2))
        metrics = run_simulation(config)
        x = config.initial_point()
        for _ in range(20):
            x = x - 0.2 * true_gradient(model, x)
        assert metrics.final_x.tolist() == x.tolist(), rule


def test_stop_at_threshold():
    config = SimConfig(model=QUAD, steps=1000, lr=LearningRate("inverse_decay", 1.0, 1.0), stop_at_threshold=True)
    metrics = run_simulation(config)
    assert len(metrics.records) == metrics.steps_to_threshold + 1


def test_config_validation():
    with pytest.raises(ValueError, match=r"f must lie in \[0, 2\]"):
        SimConfig(n=11, f=3, rule="multi-bulyan").validate()
    with pytest.raises(ValueError, match="f_declared"):
        SimConfig(n=11, f=2, f_declared=1, rule="multi-krum").validate()
    with pytest.raises(ValueError, match="valid rules"):
        SimConfig(rule="mean").validate()
    with pytest.raises(ValueError, match="x0"):
        SimConfig(model=QUAD, x0=(1.0, 2.0)).validate()


def test_slowdown():
    m100 = SimMetrics([], 100, np.zeros(1))
    m200 = SimMetrics([], 200, np.zeros(1))
    assert slowdown(m100, m100) == 1.0
    assert slowdown(m100, m200) == 0.5
    with pytest.raises(ValueError, match="candidate"):
        slowdown(m100, SimMetrics([], None, np.zeros(1)))
    with pytest.raises(ValueError, match="reference"):
        slowdown(SimMetrics([], None, np.zeros(1)), m100)


def test_multi_krum_variance_reduction():
    model = CostModel.make(d=20)
    # f = 0: all eleven workers honest, m = n - 2 = 9 gradients averaged
    var, _ = output_variance("multi-krum", 11, 0, model, np.ones(20), 1.0, 10_000, seed=0)
    assert abs(var - 1.0 / 9) < 0.25 / 9
