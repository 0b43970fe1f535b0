import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacbound.bounds import BoundKind, catoni_scalar_inverse, standard_rate_task_centric
from pacbound.ensemble import ComplexityBudget, build_ensemble
from pacbound.klmath import kl_inv_upper
from pacbound.unionbound import (
    GridPolicy,
    LambdaGrid,
    MetaBudget,
    View,
    compose_task_kl,
    meta_sample_catoni,
    meta_sample_kl,
    meta_task_catoni,
    meta_task_kl,
    meta_task_pinsker,
    run_bound_suite,
    split_delta,
    task_catoni_bound,
    task_kl_bound,
)

import oracles

TOY = build_ensemble([(250, 0.2), (150, 0.2)])
TOY_B = ComplexityBudget(delta=0.05, total_kl=10.0)

# meta synthetic instance: n = 20, m_i = 50 + floor(450 i / 19), q_i = 0.1,
# meta_kl = 2, expected_inner_kl = 30, delta = 0.05, m_max = 500
META_M = [50 + (450 * i) // 19 for i in range(20)]
META_E = build_ensemble([(m, 0.1) for m in META_M])
META_B = MetaBudget(n_tasks=20, m_max=500, meta_kl=2.0, expected_inner_kl=30.0, delta=0.05)
# composed oracles: SLSQP inner stage (task view) or mpmath (sample view), mpmath outer stage
META_TASK_KL = 0.627337669349065
META_SAMPLE_KL = 0.48341856493389764
META_TASK_CATONI = 0.591288824757441  # inner lambda = n m_h, outer lambda = n
META_SAMPLE_CATONI = 0.49165274344643917  # inner lambda = M, outer lambda = n


class TestDeltaSplit:
    @given(st.floats(1e-6, 0.999), st.integers(1, 200))
    def test_exact_sum(self, d, k):
        shares = split_delta(d, k)
        assert len(shares) == k
        assert sum(shares) == Fraction(d)
        assert all(isinstance(s, Fraction) and s > 0 for s in shares)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            split_delta(0.05, 0)


class TestLambdaGrid:
    def test_exponential_preset(self):
        g = LambdaGrid.preset("exponential", TOY)
        c = 2 * 187.5
        assert len(g) == 11 and g.policy is GridPolicy.EXPONENTIAL
        assert g.values[0] == pytest.approx(c / 100, rel=1e-14)
        assert g.values[-1] == pytest.approx(c * 100, rel=1e-14)
        assert g.values[5] == pytest.approx(c, rel=1e-14)
        r = np.diff(np.log(g.values))
        np.testing.assert_allclose(r, r[0], rtol=1e-10)

    def test_linear_preset(self):
        g = LambdaGrid.preset("linear", TOY)
        assert g.policy is GridPolicy.LINEAR
        assert list(g.values) == [k * 375.0 / 10 for k in range(5, 16)]
        assert g.values[0] == 187.5 and g.values[-1] == 562.5

    def test_sample_view_center(self):
        g = LambdaGrid.preset("exponential", TOY, View.SAMPLE)
        assert g.values[5] == pytest.approx(400.0, rel=1e-14)

    @pytest.mark.parametrize("vals", [(), (1.0, 1.0), (2.0, 1.0), (0.0,), (-1.0, 2.0), (math.inf,), ((1.0, 0.0),)])
    def test_invalid(self, vals):
        with pytest.raises(ValueError):
            LambdaGrid.custom(vals)

    def test_per_task_values(self):
        g = LambdaGrid.custom([(300, 400), 250.0])
        assert g.values == ((300.0, 400.0), 250.0)
        assert g.describe() == {"policy": "custom", "values": [[300.0, 400.0], 250.0]}

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            LambdaGrid.preset("cubic", TOY)


class TestSuite:
    def test_single_catoni_full_delta(self):
        s = run_bound_suite(TOY, TOY_B, grid=LambdaGrid.custom([200.0]), include_kl=False, include_standard=False)
        assert len(s.members) == 1
        assert s.members[0].delta_consumed == 0.05
        assert s.joint is None
        assert s.best.value == s.members[0].value == task_catoni_bound(TOY, TOY_B, 200.0).value

    @pytest.mark.parametrize("view", ["task", "sample"])
    def test_delta_accounting_and_minimum(self, view):
        grid = LambdaGrid.preset("exponential", TOY, view)
        s = run_bound_suite(TOY, TOY_B, view, grid)
        assert sum(s.delta_shares) == Fraction(0.05)
        assert math.fsum(r.delta_consumed for r in s.members) == pytest.approx(0.05, rel=1e-14)
        assert all(s.pointwise_min.value <= r.value for r in s.members)
        assert s.best.value <= s.pointwise_min.value
        if view == "task":
            assert s.joint is not None and s.best.value <= s.joint.value
            assert s.labels[:2] == ["standard", "kl"] and len(s.labels) == 13
        else:
            assert s.joint is None and s.labels[0] == "kl" and len(s.labels) == 12

    def test_over_allocation(self):
        with pytest.raises(ValueError):
            run_bound_suite(TOY, TOY_B, grid=LambdaGrid.custom([200.0]), shares=[0.03, 0.03, 0.01])
        with pytest.raises(ValueError):
            run_bound_suite(TOY, TOY_B, grid=None, include_kl=False, include_standard=False)

    def test_custom_shares(self):
        s = run_bound_suite(TOY, TOY_B, grid=LambdaGrid.custom([200.0]), include_standard=False,
                            shares=[Fraction(1, 40), Fraction(1, 40)])
        assert [r.delta_consumed for r in s.members] == [0.025, 0.025]

    def test_toy_joint_below_min(self):
        grid = LambdaGrid.custom([(300.0, 400.0)])
        s = run_bound_suite(TOY, TOY_B, grid=grid, include_standard=False)
        assert s.joint.value < min(r.value for r in s.members)
        assert s.joint.kind is BoundKind.TASK_JOINT

    def test_fast_rate_regime(self):
        e = build_ensemble([(500, 0.01)] * 4)
        b = ComplexityBudget(delta=0.05, total_kl=5.0)
        s = run_bound_suite(e, b, grid=LambdaGrid.preset("exponential", e))
        assert s.best.value < standard_rate_task_centric(e, b).value

    def test_sample_view_rejects_vector_lambda(self):
        with pytest.raises(ValueError):
            run_bound_suite(TOY, TOY_B, "sample", LambdaGrid.custom([(1.0, 2.0)]))

    def test_order_is_deterministic(self):
        grid = LambdaGrid.preset("linear", TOY)
        a = run_bound_suite(TOY, TOY_B, grid=grid)
        b = run_bound_suite(TOY, TOY_B, grid=grid)
        assert [r.value for r in a.all_results()] == [r.value for r in b.all_results()]


class TestMeta:
    def test_pinned_task_kl(self):
        assert meta_task_kl(META_E, META_B).value == pytest.approx(META_TASK_KL, abs=1e-9)

    def test_pinned_sample_kl(self):
        assert meta_sample_kl(META_E, META_B).value == pytest.approx(META_SAMPLE_KL, abs=1e-12)

    def test_pinned_task_catoni(self):
        lam = META_E.n * META_E.harmonic_mean
        assert meta_task_catoni(META_E, META_B, lam, 20.0).value == pytest.approx(META_TASK_CATONI, abs=1e-9)

    def test_pinned_sample_catoni(self):
        v = meta_sample_catoni(META_E, META_B, float(META_E.total_samples), 20.0).value
        assert v == pytest.approx(META_SAMPLE_CATONI, abs=1e-12)

    def test_zero_budget_collapse(self):
        val, _ = compose_task_kl([30, 80, 5], [0.1, 0.2, 0.3], 0.0, 0.0)
        assert val == pytest.approx(0.2, abs=1e-12)

    def test_sample_scaling(self):
        e = build_ensemble([(100, 0.1), (100, 0.3)])
        mb = MetaBudget(2, 100, 1.0, 1.0, 0.05)
        r = meta_sample_kl(e, mb)
        assert r.params["scale"] == 1.0
        mb2 = MetaBudget(2, 400, 1.0, 1.0, 0.05)
        assert meta_sample_kl(e, mb2).params["scale"] == 0.25

    def test_single_task_environment(self):
        e = build_ensemble([(200, 0.1)])
        mb = MetaBudget(1, 200, 0.5, 2.0, 0.05)
        r = meta_task_kl(e, mb)
        inner = kl_inv_upper(0.1, (mb.complexity + math.log(2 * math.sqrt(200))) / 200)
        assert r.params["inner"] == pytest.approx(inner, abs=1e-9)
        assert r.value == pytest.approx(kl_inv_upper(inner, mb.outer_kl_budget), abs=1e-9)
        c = meta_task_catoni(e, mb, 150.0, 1.0)
        inner_c = catoni_scalar_inverse(200, 0.1, mb.complexity, 150.0)
        assert c.value == pytest.approx(catoni_scalar_inverse(1, inner_c, mb.outer_catoni_budget, 1.0), abs=1e-9)

    def test_denominator_flag(self):
        a = meta_task_kl(META_E, META_B, "n").value
        b = meta_task_kl(META_E, META_B, "2n").value
        assert b < a
        with pytest.raises(ValueError):
            meta_task_kl(META_E, META_B, "3n")

    def test_budget_checks(self):
        with pytest.raises(ValueError):
            meta_task_kl(META_E, MetaBudget(20, 499, 1.0, 1.0, 0.05))
        with pytest.raises(ValueError):
            meta_task_kl(META_E, MetaBudget(19, 500, 1.0, 1.0, 0.05))
        with pytest.raises(ValueError):
            MetaBudget(2, 10, -1.0, 1.0, 0.05)
        with pytest.raises(ValueError):
            MetaBudget(2, 10, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            meta_task_catoni(META_E, META_B, 100.0, 0.0)
        with pytest.raises(ValueError):
            meta_sample_catoni(META_E, META_B, -1.0, 5.0)

    def test_budget_components(self):
        mb = MetaBudget(4, 50, 1.5, 2.5, 0.1)
        assert mb.complexity == pytest.approx(4.0 + math.log(20), rel=1e-15)
        assert mb.outer_kl_budget == pytest.approx(1.5 + math.log(4 * 2 / 0.1), rel=1e-15)
        assert mb.outer_catoni_budget == pytest.approx(1.5 + math.log(20), rel=1e-15)


def _random_meta(rng):
    n = int(rng.integers(1, 8))
    ms = rng.integers(5, 300, n)
    qs = rng.uniform(0, 0.5, n)
    e = build_ensemble(list(zip(ms.tolist(), qs.tolist())))
    mb = MetaBudget(n, int(ms.max() + rng.integers(0, 50)), float(rng.uniform(0, 5)),
                    float(rng.uniform(0, 20)), float(rng.uniform(0.01, 0.2)))
    return e, mb


@given(st.integers(0, 10**9))
def test_meta_monotone_in_budget_components(seed):
    rng = np.random.default_rng(seed)
    e, mb = _random_meta(rng)
    fams = [meta_task_kl, meta_sample_kl]
    for f in fams:
        base = f(e, mb).value
        up_meta = MetaBudget(mb.n_tasks, mb.m_max, mb.meta_kl + 0.5, mb.expected_inner_kl, mb.delta)
        up_inner = MetaBudget(mb.n_tasks, mb.m_max, mb.meta_kl, mb.expected_inner_kl + 0.5, mb.delta)
        assert f(e, up_meta).value >= base - 1e-12
        assert f(e, up_inner).value >= base - 1e-12


@given(st.integers(0, 10**9))
def test_meta_pinsker_dominates_kl(seed):
    e, mb = _random_meta(np.random.default_rng(seed))
    assert meta_task_pinsker(e, mb).value >= meta_task_kl(e, mb).value - 1e-9
    assert meta_task_pinsker(e, mb, "2n").value >= meta_task_kl(e, mb, "2n").value - 1e-9


def test_catoni_never_beats_kl_at_equal_budget():
    """inf over lambda of the Catoni inversion equals the kl inversion."""
    lams = np.logspace(-2, 5, 4000)
    rng = np.random.default_rng(2)
    for _ in range(30):
        count = int(rng.integers(1, 500))
        q = float(rng.uniform(0, 0.6))
        budget = float(rng.uniform(0.1, 10))
        kl = kl_inv_upper(q, budget / count)
        cat = np.array([catoni_scalar_inverse(count, q, budget, lam) for lam in lams])
        assert cat.min() >= kl - 1e-12
        assert cat.min() - kl <= 2e-3


def test_meta_constants_reproduce():
    import mpmath as mp

    L = mp.log
    n, d = 20, mp.mpf("0.05")
    C = 2 + 30 + L(2 / d)
    M = sum(META_M)
    scale = mp.mpf(M) / (n * 500)
    inner = oracles.kl_inv_upper("0.1", (C + L(2 * mp.sqrt(M))) / M)
    outer = oracles.kl_inv_upper(scale * inner, (2 + L(4 * mp.sqrt(n) / d)) / n)
    assert float(outer) == pytest.approx(META_SAMPLE_KL, rel=1e-15)
    c1 = sum(L(2 * mp.sqrt(m)) for m in META_M)
    inner_t, _ = oracles.slsqp_task_sup(META_M, [0.1] * 20, float(C + c1))
    outer_t = oracles.kl_inv_upper(inner_t, (2 + L(4 * mp.sqrt(n) / d)) / n)
    assert float(outer_t) == pytest.approx(META_TASK_KL, abs=1e-9)


def test_task_kl_bound_not_below_empirical():
    e = build_ensemble([(40, 0.3), (10, 0.0)])
    r = task_kl_bound(e, ComplexityBudget(delta=0.5, total_kl=0.0))
    assert r.value >= e.task_centric_empirical
