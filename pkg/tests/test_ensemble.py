import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacbound.ensemble import ComplexityBudget, TaskStat, build_ensemble, gaussian_budget, risk_vector

task = st.tuples(st.integers(1, 5000), st.floats(0, 1))
tasks = st.lists(task, min_size=1, max_size=30)


def test_toy_aggregates():
    e = build_ensemble([(250, 0.2), (150, 0.2)])
    assert e.harmonic_mean_exact == Fraction(375, 2)
    assert e.harmonic_mean == 187.5
    assert e.total_samples == 400
    assert e.min_samples == 150
    assert e.task_centric_empirical == pytest.approx(0.2, abs=1e-16)
    assert e.sample_centric_empirical == pytest.approx(0.2, abs=1e-16)


def test_single_task():
    e = build_ensemble([TaskStat(100, 0.3)])
    assert e.harmonic_mean == 100 and e.total_samples == 100
    assert e.task_centric_empirical == e.sample_centric_empirical == 0.3


@given(st.integers(1, 10_000), st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_balanced_identities(m, qs):
    e = build_ensemble([(m, q) for q in qs])
    assert e.harmonic_mean == e.min_samples == m == e.total_samples / e.n
    assert e.task_centric_empirical == e.sample_centric_empirical


@pytest.mark.parametrize("bad", [[], [(0, 0.1)], [(-3, 0.1)], [(2.5, 0.1)], [(10, 1.5)], [(10, math.nan)]])
def test_rejects_bad_tasks(bad):
    with pytest.raises(ValueError):
        build_ensemble(bad)


@given(tasks)
def test_aggregates_match_naive_pass(ts):
    e = build_ensemble(ts)
    ms = [m for m, _ in ts]
    qs = [q for _, q in ts]
    n = len(ts)
    assert e.n == n
    assert e.total_samples == sum(ms)
    assert e.min_samples == min(ms) and e.max_samples == max(ms)
    hm = Fraction(n) / sum(Fraction(1, m) for m in ms)
    assert e.harmonic_mean_exact == hm
    assert e.harmonic_mean == float(hm)
    assert e.task_centric_empirical == float(sum(map(Fraction, qs)) / n)
    assert e.sample_centric_empirical == float(sum(m * Fraction(q) for m, q in ts) / sum(ms))
    assert list(e.sample_counts) == [float(m) for m in ms]
    assert list(e.empirical_risks) == qs


@given(tasks)
def test_mean_ordering(ts):
    e = build_ensemble(ts)
    assert e.min_samples <= e.harmonic_mean_exact <= Fraction(e.total_samples, e.n)
    assert 0.0 <= e.task_centric_empirical <= 1.0
    assert 0.0 <= e.sample_centric_empirical <= 1.0


@given(st.lists(st.integers(1, 1000), min_size=2, max_size=10, unique=True), st.floats(0.0, 0.5),
       st.floats(0.001, 0.05), st.booleans())
def test_sample_minus_task_follows_covariance(ms, base, slope, increasing):
    """Weighted minus unweighted mean has the sign of cov(m_i, q_i)."""
    ms = sorted(ms)
    qs = [base + slope * k for k in range(len(ms))]
    if not increasing:
        qs = qs[::-1]
    e = build_ensemble(list(zip(ms, qs)))
    cov = np.cov(ms, qs)[0, 1]
    diff = e.sample_centric_empirical - e.task_centric_empirical
    assert np.sign(diff) == np.sign(cov)


def test_ordering_preserved_and_duplicates_allowed():
    ts = [(30, 0.1), (10, 0.4), (30, 0.1)]
    e = build_ensemble(ts)
    assert [(t.sample_count, t.empirical_risk) for t in e.tasks] == ts


def test_immutable():
    e = build_ensemble([(5, 0.1)])
    with pytest.raises(Exception):
        e.tasks = ()
    with pytest.raises(ValueError):
        e.sample_counts[0] = 3.0


class TestBudget:
    def test_scalar(self):
        b = ComplexityBudget(delta=0.05, total_kl=3.0)
        assert b.kl == 3.0 and not b.is_decomposed

    def test_decomposed_collapses(self):
        b = ComplexityBudget(delta=0.05, hyper_kl=1.5, per_task_kl=(0.25, 0.5))
        assert b.is_decomposed
        assert b.kl == 2.25
        b.check_tasks(2)
        with pytest.raises(ValueError):
            b.check_tasks(3)

    @pytest.mark.parametrize("kw", [
        {"delta": 0.0, "total_kl": 1.0},
        {"delta": 1.0, "total_kl": 1.0},
        {"delta": 0.05, "total_kl": -1.0},
        {"delta": 0.05},
        {"delta": 0.05, "total_kl": 1.0, "hyper_kl": 0.0, "per_task_kl": (0.0,)},
        {"delta": 0.05, "hyper_kl": 1.0},
        {"delta": 0.05, "hyper_kl": 1.0, "per_task_kl": (-0.1,)},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ComplexityBudget(**kw)

    def test_replace(self):
        b = ComplexityBudget(delta=0.05, hyper_kl=1.0, per_task_kl=(1.0,))
        b2 = b.replace(total_kl=7.0)
        assert b2.kl == 7.0 and not b2.is_decomposed and b2.delta == 0.05


class TestGaussianBudget:
    def test_zero_means_unit_sigma(self):
        # the per-task expression as displayed leaves dim/2 at sigma = 1
        b = gaussian_budget(3, 1.0, [np.zeros(3)] * 2, np.zeros(3), 0.05)
        assert b.hyper_kl == 0.0
        assert b.per_task_kl == (1.5, 1.5)

    def test_two_dim(self):
        b = gaussian_budget(2, 1.0, [[1.0, 0.0]], [1.0, 0.0], 0.05)
        assert b.hyper_kl == 1.0
        assert b.per_task_kl == (1.0,)

    def test_one_dim_small_sigma(self):
        b = gaussian_budget(1, 0.1, [[3.0]], [0.0], 0.05)
        expect = 0.5 * (0.01 - math.log(0.01)) + 4.5
        assert b.per_task_kl[0] == pytest.approx(expect, rel=1e-15)
        assert b.kl == pytest.approx(expect, rel=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_budget(2, 1.0, [[1.0]], [0.0, 0.0], 0.05)
        with pytest.raises(ValueError):
            gaussian_budget(2, 1.0, [[1.0, 0.0]], [0.0], 0.05)
        with pytest.raises(ValueError):
            gaussian_budget(2, 0.0, [[1.0, 0.0]], [0.0, 0.0], 0.05)


def test_risk_vector():
    np.testing.assert_array_equal(risk_vector([0.1, 1.0], 2), [0.1, 1.0])
    with pytest.raises(ValueError):
        risk_vector([0.1, 1.2])
    with pytest.raises(ValueError):
        risk_vector([0.1], 2)
