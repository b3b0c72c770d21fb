import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from byzgar import gar
from byzgar._kernels import closest_average, column_median
from byzgar.gar import (
    GarParams,
    PreconditionError,
    aggregate,
    average_gar,
    krum_gar,
    krum_scores,
    max_f,
    median_gar,
    multi_bulyan,
    multi_krum,
)

HAND = [[0.0], [1.0], [2.0], [10.0], [11.0]]


def test_hand_example():
    assert krum_scores(HAND, 1).scores.tolist() == [5.0, 2.0, 5.0, 65.0, 82.0]
    assert krum_scores(HAND, 1).neighbors == 2
    winner, out = multi_krum(HAND, 1, 2)
    assert winner == 1
    assert out.tolist() == [0.5]


def test_identical_inputs_are_fixed_points():
    g = [0.1, -2.5, 1e-3]
    batch = [g] * 11
    assert krum_scores(batch, 2).scores.tolist() == [0.0] * 11
    winner, out = multi_krum(batch, 2)
    assert winner == 0 and out.tolist() == g
    for rule in gar.RULES:
        assert aggregate(rule, batch, 2).tolist() == g, rule


def test_krum_equals_winner_gradient():
    rng = np.random.default_rng(1)
    batch = rng.normal(size=(9, 4))
    winner, out = multi_krum(batch, 2, m=1)
    assert np.array_equal(out, batch[winner])
    assert np.array_equal(krum_gar(batch, 2), batch[winner])


def test_small_instances_match_oracles():
    rng = np.random.default_rng(2)
    for _ in range(40):
        n = int(rng.integers(5, 8))
        d = int(rng.integers(1, 5))
        batch = rng.normal(size=(n, d))
        for f in range(max_f(n, "multi-krum") + 1):
            ow, og = oracles.krum(batch.tolist(), f)
            winner, out = multi_krum(batch, f, m=1)
            assert winner == ow and out.tolist() == og
            assert multi_krum(batch, f)[1].tolist() == oracles.multi_krum(batch.tolist(), f)[1]
        for f in range(max_f(n, "multi-bulyan") + 1):
            assert multi_bulyan(batch, f).tolist() == oracles.multi_bulyan(batch.tolist(), f)


def test_ties_go_to_lower_index():
    # integer grid: plenty of equal distances and equal scores
    rng = np.random.default_rng(4)
    for _ in range(100):
        batch = rng.integers(-2, 3, size=(7, 2)).astype(float)
        assert multi_krum(batch, 1)[0] == oracles.multi_krum(batch.tolist(), 1)[0]
        assert multi_krum(batch, 2, 1)[1].tolist() == oracles.multi_krum(batch.tolist(), 2, 1)[1]
        assert multi_bulyan(batch, 1).tolist() == oracles.multi_bulyan(batch.tolist(), 1)


def test_bulyan_parameters():
    p = GarParams.for_multi_bulyan(11, 2)
    assert (p.theta, p.beta, p.m) == (5, 1, 7)
    with pytest.raises(PreconditionError, match=r"multi-bulyan requires n >= 4f\+3"):
        multi_bulyan(np.zeros((10, 2)), 2)
    with pytest.raises(PreconditionError, match=r"multi-krum requires n >= 2f\+3"):
        multi_krum(np.zeros((6, 2)), 2)
    with pytest.raises(PreconditionError, match="m <= "):
        multi_krum(np.zeros((7, 2)), 1, m=5)
    with pytest.raises(PreconditionError, match="at least"):
        krum_scores(np.zeros((3, 2)), 1)


def test_bulyan_known_output():
    # columns are arithmetic progressions; everything is symmetric around index 5
    batch = np.arange(11.0)[:, None] * np.array([1.0, 2.0])
    assert multi_bulyan(batch, 2).tolist() == [6.0, 12.0]


def test_max_f():
    assert max_f(11, "multi-bulyan") == 2
    assert max_f(7, "multi-bulyan") == 1
    assert max_f(3, "multi-krum") == 0
    assert max_f(3, "krum") == 0
    assert max_f(11, "median") == 5
    assert max_f(10, "median") == 4
    assert max_f(11, "average") == 10
    with pytest.raises(ValueError, match="valid rules"):
        max_f(11, "trimmed-mean")
    with pytest.raises(ValueError):
        max_f(2, "average")


def test_simple_rules():
    assert median_gar([[1], [2], [9]]).tolist() == [2.0]
    assert average_gar([[1], [2], [9]]).tolist() == [4.0]
    rng = np.random.default_rng(6)
    batch = rng.normal(size=(9, 5))
    np.testing.assert_allclose(average_gar(batch), oracles.mean_of(batch.tolist()), rtol=1e-12)
    assert median_gar(batch).tolist() == [oracles.median_of(c) for c in batch.T.tolist()]


def test_unknown_rule():
    with pytest.raises(ValueError, match="valid rules: average, median, krum, multi-krum, multi-bulyan"):
        aggregate("geomed", [[1.0]])


def test_deterministic_bitwise():
    rng = np.random.default_rng(7)
    batch = rng.normal(size=(15, 300))
    for rule in gar.RULES:
        a = aggregate(rule, batch, 3)
        b = aggregate(rule, batch.copy(), 3)
        assert a.tobytes() == b.tobytes()


def _reference_median(batch, rows):
    out = []
    for col in batch[rows].T.tolist():
        out.append(oracles.median_of(col))
    return np.array(out)


def _reference_closest(rows, center, count):
    out = []
    for j in range(rows.shape[1]):
        col = rows[:, j].tolist()
        keep = sorted(range(len(col)), key=lambda i: (abs(col[i] - center[j]), i))[:count]
        out.append(oracles.clamped_mean([col[i] for i in sorted(keep)]))
    return np.array(out)


@pytest.mark.parametrize("k", [1, 2, 3, 8, 21, 36])
def test_kernels_match_sorting_reference(k):
    rng = np.random.default_rng(k)
    for values in (rng.normal(size=(k + 4, 600)), rng.integers(0, 3, size=(k + 4, 600)).astype(float)):
        rows = rng.permutation(k + 4)[:k].astype(np.intp)
        med = np.empty(600)
        column_median(values, rows, med)
        assert med.tobytes() == _reference_median(values, rows).tobytes()
        agr = values[:k]
        for count in sorted({1, max(1, k // 2), k}):
            out = np.empty(600)
            closest_average(agr, med, count, out)
            assert out.tobytes() == _reference_closest(agr, med, count).tobytes()


# ---------------------------------------------------------------- properties

coord = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@st.composite
def instances(draw, min_n=7, max_n=11, max_d=4):
    n = draw(st.integers(min_n, max_n))
    d = draw(st.integers(1, max_d))
    rows = draw(st.lists(st.lists(coord, min_size=d, max_size=d), min_size=n, max_size=n))
    return np.array(rows)


def _f_for(rule, n):
    return min(max_f(n, rule), 1 if rule != "average" else 0)


@settings(max_examples=150, deadline=None)
@given(instances())
def test_envelope(batch):
    lo, hi = batch.min(axis=0), batch.max(axis=0)
    for rule in gar.RULES:
        out = aggregate(rule, batch, _f_for(rule, batch.shape[0]))
        assert np.all(out >= lo) and np.all(out <= hi), rule


def _bulyan_rounds(batch, f):
    """The round averages multi-Bulyan selects from, recomputed independently."""
    remaining = list(range(batch.shape[0]))
    agr = []
    for _ in range(GarParams.for_multi_bulyan(batch.shape[0], f).theta):
        w, a = multi_krum(batch[remaining], f)
        agr.append(a)
        del remaining[w]
    return np.array(agr)


@settings(max_examples=100, deadline=None)
@given(instances())
def test_bulyan_within_round_average_envelope(batch):
    agr = _bulyan_rounds(batch, 1)
    out = multi_bulyan(batch, 1)
    assert np.all(out >= agr.min(axis=0)) and np.all(out <= agr.max(axis=0))


@settings(max_examples=150, deadline=None)
@given(instances(max_d=3), st.integers(0, 2**32 - 1))
def test_permutation_invariance(batch, seed):
    dist = krum_scores(batch, 1)
    if len(set(dist.scores.tolist())) < batch.shape[0]:
        return
    perm = np.random.default_rng(seed).permutation(batch.shape[0])
    for rule in ("median", "krum", "multi-krum", "multi-bulyan"):
        a = aggregate(rule, batch, 1)
        b = aggregate(rule, batch[perm], 1)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-9)


@settings(max_examples=150, deadline=None)
@given(instances(max_d=3), st.floats(0.5, 3.0))
def test_far_outliers_never_selected(batch, spread):
    n, d = batch.shape
    f = 2 if n >= 7 else 1
    correct = batch[: n - f]
    diam = float(np.sqrt(max(np.max(np.sum((correct[:, None] - correct[None]) ** 2, axis=2)), 1.0)))
    # each outlier is further than the correct diameter from everything else
    far = np.array([correct.max(axis=0) + (3 + 2 * i) * spread * diam for i in range(f)])
    far[:, 0] += np.arange(f) * 2 * diam * spread
    mixed = np.vstack([correct, far])
    m = n - f - 2
    ranking = krum_scores(mixed, f).ranking()
    assert not np.any(ranking[:m] >= n - f)
