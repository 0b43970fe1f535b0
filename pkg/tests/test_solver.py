import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pacbound.bounds import (
    build_task_catoni_constraint,
    build_task_kl_constraint,
    catoni_scalar_inverse,
    task_catoni_constraint_raw,
    task_kl_constraint_raw,
)
from pacbound.ensemble import ComplexityBudget, build_ensemble
from pacbound.solver import (
    ObjectiveWeights,
    maximize_catoni_multi,
    maximize_joint,
    maximize_single_constraint,
)
from pacbound.verify import grid_oracle, random_oracle_instance, trial_rng

import oracles

TOY = build_ensemble([(250, 0.2), (150, 0.2)])
TOY_B = ComplexityBudget(delta=0.05, total_kl=10.0)

# grid oracle (step 2e-4, three refinement passes down to 2e-7)
ORACLE_TOY_KL = 0.34795272
ORACLE_TOY_CATONI_300_400 = 0.33494934
ORACLE_TOY_JOINT = 0.33431854
# SLSQP (scipy) cross-checks
SLSQP_TOY_KL = 0.3479527252889686
SLSQP_TOY_CATONI_300_400 = 0.334949475078804


def feasible(c, p, tol=1e-8):
    return c.value(p) - c.budget_rhs <= tol


def test_frozen_constants_reproduce():
    kl = build_task_kl_constraint(TOY, TOY_B)
    cat = build_task_catoni_constraint(TOY, TOY_B, (300, 400))
    assert grid_oracle([kl], step=2e-4, refine_passes=3) == pytest.approx(ORACLE_TOY_KL, abs=1e-12)
    assert grid_oracle([kl, cat], step=2e-4, refine_passes=3) == pytest.approx(ORACLE_TOY_JOINT, abs=1e-12)
    assert oracles.slsqp_task_sup([250, 150], [0.2, 0.2], kl.budget_rhs)[0] == pytest.approx(SLSQP_TOY_KL, abs=1e-9)


class TestSingle:
    def test_toy_kl(self):
        rep = maximize_single_constraint(build_task_kl_constraint(TOY, TOY_B))
        assert rep.converged
        assert rep.upper == pytest.approx(ORACLE_TOY_KL, abs=1e-6)
        assert rep.upper == pytest.approx(SLSQP_TOY_KL, abs=1e-9)
        assert rep.upper >= ORACLE_TOY_KL
        assert feasible(build_task_kl_constraint(TOY, TOY_B), rep.argmax)

    def test_toy_catoni(self):
        c = build_task_catoni_constraint(TOY, TOY_B, (300, 400))
        rep = maximize_single_constraint(c)
        assert rep.upper == pytest.approx(ORACLE_TOY_CATONI_300_400, abs=1e-6)
        assert rep.upper == pytest.approx(SLSQP_TOY_CATONI_300_400, abs=1e-9)

    def test_zero_budget(self):
        c = task_kl_constraint_raw([30, 70, 5], [0.1, 0.4, 0.0], 0.0)
        rep = maximize_single_constraint(c)
        np.testing.assert_allclose(rep.argmax, [0.1, 0.4, 0.0], atol=1e-9)
        assert rep.optimum == pytest.approx(0.5 / 3, abs=1e-9)

    def test_huge_budget_clamps(self):
        c = task_kl_constraint_raw([30, 70], [0.1, 0.4], 1e6)
        rep = maximize_single_constraint(c)
        assert rep.upper == 1.0
        # kl(q | 1) is infinite, so coordinates stop one ulp short and carry the boundary flag
        assert rep.boundary
        assert np.all(rep.argmax >= 1.0 - 2e-16)

    def test_q_one_clamps_first(self):
        c = task_kl_constraint_raw([30, 70], [1.0, 0.2], 2.0)
        rep = maximize_single_constraint(c)
        assert rep.argmax[0] == 1.0
        assert rep.argmax[1] > 0.2

    def test_infeasible_catoni_is_vacuous(self):
        c = task_catoni_constraint_raw([10, 10], [0.0, 0.0], -1.0, [5.0, 5.0])
        rep = maximize_single_constraint(c)
        assert rep.upper == 1.0 and not rep.feasible and not rep.converged

    def test_sample_weights(self):
        c = build_task_kl_constraint(TOY, TOY_B)
        w = ObjectiveWeights.by_samples(TOY)
        rep = maximize_single_constraint(c, w)
        assert rep.optimum == pytest.approx(float(w.values @ rep.argmax), abs=1e-12)
        assert feasible(c, rep.argmax)

    def test_weights_validated(self):
        with pytest.raises(ValueError):
            ObjectiveWeights(np.array([0.5, 0.6]))
        with pytest.raises(ValueError):
            ObjectiveWeights(np.array([1.5, -0.5]))

    def test_symmetry(self):
        c = task_kl_constraint_raw([80] * 4, [0.15] * 4, 6.0)
        rep = maximize_single_constraint(c)
        assert np.ptp(rep.argmax) <= 1e-12

    def test_scalar_reduction(self):
        rep = maximize_catoni_multi(build_ensemble([(120, 0.3)]), [0.3], 4.0, [50.0])
        assert rep.upper == pytest.approx(catoni_scalar_inverse(120, 0.3, 4.0, 50.0), abs=1e-10)

    def test_catoni_multi_huge_budget(self):
        rep = maximize_catoni_multi(TOY, [0.2, 0.2], 1e6, [300, 400])
        assert rep.upper == 1.0

    def test_catoni_multi_matches_slsqp(self):
        e = build_ensemble([(40, 0.1), (90, 0.3), (15, 0.0)])
        lam = [60.0, 120.0, 30.0]
        rep = maximize_catoni_multi(e, e.empirical_risks, 3.0, lam)
        ref, _ = oracles.slsqp_task_sup([40, 90, 15], [0.1, 0.3, 0.0], 3.0, lam)
        assert rep.upper == pytest.approx(ref, abs=1e-7)


inst = st.integers(0, 10**9)


@given(inst, st.integers(1, 6))
def test_properties_random(seed, n):
    rng = np.random.default_rng(seed)
    m = rng.integers(1, 1000, n).astype(float)
    q = rng.uniform(0, 0.9, n)
    q[rng.uniform(size=n) < 0.2] = 0.0
    rhs = float(rng.uniform(0, 30))
    c = task_kl_constraint_raw(m, q, rhs)
    rep = maximize_single_constraint(c)
    # feasibility, certificate and dominance
    assert feasible(c, rep.argmax)
    assert rep.optimum == pytest.approx(float(np.mean(rep.argmax)), abs=1e-12)
    assert np.all(rep.argmax >= q - 1e-12)
    if rep.converged:
        assert rep.duality_gap <= 1e-6
    assert rep.upper >= rep.optimum
    # monotone in the budget
    bigger = maximize_single_constraint(task_kl_constraint_raw(m, q, rhs * 1.5 + 0.1))
    assert bigger.upper >= rep.upper - 1e-12
    # adding a constraint never helps
    lam = rng.uniform(0.2, 3.0, n) * n * n / np.sum(1 / m)
    cat = task_catoni_constraint_raw(m, q, rhs, lam)
    joint = maximize_joint([c, cat])
    assert joint.upper <= rep.upper + 1e-9
    for k in (c, cat):
        assert feasible(k, joint.argmax)


class TestJoint:
    def test_single_element_agrees(self):
        for seed in range(20):
            e, cs = random_oracle_instance(trial_rng(3, seed), 3)
            for c in cs:
                a = maximize_single_constraint(c).upper
                b = maximize_joint([c]).upper
                assert b == pytest.approx(a, abs=1e-8)

    def test_identical_constraints_idempotent(self):
        c = build_task_kl_constraint(TOY, TOY_B)
        assert maximize_joint([c, c]).upper == pytest.approx(maximize_single_constraint(c).upper, abs=1e-8)

    def test_toy_joint_strictly_below_min(self):
        kl = build_task_kl_constraint(TOY, TOY_B)
        cat = build_task_catoni_constraint(TOY, TOY_B, (300, 400))
        rep = maximize_joint([kl, cat])
        assert rep.converged and rep.duality_gap <= 1e-6
        singles = min(maximize_single_constraint(kl).upper, maximize_single_constraint(cat).upper)
        assert rep.upper < singles - 1e-6
        assert rep.upper == pytest.approx(ORACLE_TOY_JOINT, abs=1e-6)
        assert feasible(kl, rep.argmax) and feasible(cat, rep.argmax)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            maximize_joint([task_kl_constraint_raw([5], [0.1], 1.0), task_kl_constraint_raw([5, 6], [0.1, 0.1], 1.0)])
        with pytest.raises(ValueError):
            maximize_joint([])

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_grid_oracle_agreement_sample(self, n):
        for i in range(4):
            e, cs = random_oracle_instance(trial_rng(17, 100 * n + i), n)
            rep = maximize_joint(cs)
            ora = grid_oracle(cs, step=1e-3 if n == 3 else 2e-4)
            assert abs(rep.upper - ora) <= 1e-4
            assert all(feasible(c, rep.argmax) for c in cs)


def test_dual_bound_is_upper_for_any_multiplier():
    """Weak duality: the certified value dominates every feasible grid point."""
    kl = build_task_kl_constraint(TOY, TOY_B)
    rep = maximize_single_constraint(kl)
    g = np.linspace(0.2, 0.6, 801)
    P1, P2 = np.meshgrid(g, g)
    pts = np.stack([P1.ravel(), P2.ravel()], axis=1)
    vals = kl.value(pts)
    best = pts[vals <= kl.budget_rhs].mean(axis=1).max()
    assert best <= rep.upper
    assert rep.upper - best < 1e-3
    assert not math.isnan(rep.dual_value)
