"""lambda grids, delta splitting, bound suites and the two-level meta bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bounds import (
    BoundKind,
    BoundResult,
    build_task_catoni_constraint,
    build_task_kl_constraint,
    catoni_scalar_inverse,
    clamped_result,
    pinsker_sample_centric,
    pinsker_task_centric,
    sample_catoni_bound,
    sample_kl_bound,
    standard_rate_task_centric,
    task_kl_constraint_raw,
)
from .ensemble import ComplexityBudget, Ensemble
from .klmath import kl_inv_upper
from .solver import SolveReport, maximize_catoni_multi, maximize_joint, maximize_single_constraint

__all__ = [
    "GridPolicy",
    "View",
    "LambdaGrid",
    "MetaBudget",
    "SuiteResult",
    "split_delta",
    "task_kl_bound",
    "task_catoni_bound",
    "run_bound_suite",
    "meta_task_kl",
    "meta_sample_kl",
    "meta_task_catoni",
    "meta_sample_catoni",
    "meta_task_pinsker",
    "compose_task_kl",
]


class GridPolicy(str, Enum):
    EXPONENTIAL = "exponential"
    LINEAR = "linear"
    CUSTOM = "custom"


class View(str, Enum):
    TASK = "task"
    SAMPLE = "sample"


def _as_lambda(v):
    if isinstance(v, (tuple, list, np.ndarray)):
        t = tuple(float(x) for x in np.asarray(v, dtype=float).reshape(-1))
        return t[0] if len(t) == 1 else t
    return float(v)


@dataclass(frozen=True)
class LambdaGrid:
    """Catoni multipliers evaluated together under one union bound.

    Each value is a scalar (shared by all tasks) or a per-task tuple.
    Scalar grids must be strictly increasing.
    """

    values: tuple
    policy: GridPolicy = GridPolicy.CUSTOM

    def __post_init__(self):
        vals = tuple(_as_lambda(v) for v in self.values)
        if not vals:
            raise ValueError("a lambda grid needs at least one value")
        for v in vals:
            arr = np.atleast_1d(np.asarray(v, dtype=float))
            if np.any(~(arr > 0.0)) or np.any(~np.isfinite(arr)):
                raise ValueError(f"lambda values must be finite and > 0, got {v!r}")
        if all(isinstance(v, float) for v in vals):
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ValueError("scalar lambda grids must be strictly increasing")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "policy", GridPolicy(self.policy))

    def __len__(self):
        return len(self.values)

    @classmethod
    def exponential(cls, center: float, size: int = 11, decades: float = 2.0) -> "LambdaGrid":
        """``size`` log-spaced values in [center * 10^-decades, center * 10^decades]."""
        vals = float(center) * np.logspace(-decades, decades, int(size))
        return cls(tuple(float(v) for v in vals), GridPolicy.EXPONENTIAL)

    @classmethod
    def linear(cls, center: float, coefficients: Sequence[float] | None = None) -> "LambdaGrid":
        if coefficients is None:
            # k * center / 10 avoids the rounding of 0.1-multiples
            return cls(tuple(k * float(center) / 10 for k in range(5, 16)), GridPolicy.LINEAR)
        return cls(tuple(float(c) * float(center) for c in coefficients), GridPolicy.LINEAR)

    @classmethod
    def custom(cls, values) -> "LambdaGrid":
        return cls(tuple(values), GridPolicy.CUSTOM)

    @classmethod
    def preset(cls, name: str, e: Ensemble, view: "View | str" = View.TASK) -> "LambdaGrid":
        center = e.n * e.harmonic_mean if View(view) is View.TASK else float(e.total_samples)
        if name == GridPolicy.EXPONENTIAL.value:
            return cls.exponential(center)
        if name == GridPolicy.LINEAR.value:
            return cls.linear(center)
        raise ValueError(f"unknown lambda grid preset {name!r}")

    def describe(self) -> dict:
        return {"policy": self.policy.value,
                "values": [list(v) if isinstance(v, tuple) else v for v in self.values]}


def split_delta(delta: float, k: int) -> list[Fraction]:
    """Split delta into k equal exact shares; they sum to Fraction(delta) exactly."""
    if k < 1:
        raise ValueError("need at least one share")
    total = Fraction(delta)
    return [total / k] * k


@dataclass(frozen=True)
class MetaBudget:
    n_tasks: int
    m_max: int
    meta_kl: float
    expected_inner_kl: float
    delta: float

    def __post_init__(self):
        for name in ("n_tasks", "m_max"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        for name in ("meta_kl", "expected_inner_kl"):
            v = float(getattr(self, name))
            if not v >= 0.0:
                raise ValueError(f"{name} must be >= 0, got {v!r}")
            object.__setattr__(self, name, v)
        d = float(self.delta)
        if not (0.0 < d < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        object.__setattr__(self, "delta", d)

    @property
    def complexity(self) -> float:
        """KL(rho|pi) + E KL(Q(A)|P(A)) + ln(2/delta)."""
        return self.meta_kl + self.expected_inner_kl + math.log(2.0 / self.delta)

    @property
    def outer_kl_budget(self) -> float:
        return self.meta_kl + math.log(4.0 * math.sqrt(self.n_tasks) / self.delta)

    @property
    def outer_catoni_budget(self) -> float:
        return self.meta_kl + math.log(2.0 / self.delta)

    def check(self, e: Ensemble) -> None:
        if e.n != self.n_tasks:
            raise ValueError(f"meta budget is for {self.n_tasks} tasks, ensemble has {e.n}")
        if e.max_samples > self.m_max:
            raise ValueError(f"m_max = {self.m_max} is below the largest task size {e.max_samples}")


# -- solver-backed task-centric bounds -----------------------------------------


def _from_report(rep: SolveReport, kind: BoundKind, delta: float, empirical: float, **params) -> BoundResult:
    # the dual value bounds the true supremum from above whatever the solver accuracy
    res = clamped_result(rep.upper, kind, delta, empirical, params=params)
    res.value = max(res.value, empirical) if not res.vacuous else res.value
    res.converged = bool(rep.converged)
    res.diagnostics = {
        "solver_iterations": int(rep.iterations),
        "constraint_residual": [float(r) for r in rep.residuals],
        "active_constraints": rep.active_constraints,
        "primal_optimum": float(rep.optimum),
        "duality_gap": float(rep.duality_gap),
        "boundary": bool(rep.boundary),
        "wall_time": float(rep.wall_time),
    }
    if rep.notes:
        res.diagnostics["notes"] = list(rep.notes)
    return res


def task_kl_bound(e: Ensemble, b: ComplexityBudget, delta: float | None = None) -> BoundResult:
    c = build_task_kl_constraint(e, b, delta)
    rep = maximize_single_constraint(c)
    return _from_report(rep, BoundKind.TASK_KL, c.delta_share, e.task_centric_empirical,
                        budget_rhs=c.budget_rhs)


def task_catoni_bound(e: Ensemble, b: ComplexityBudget, lambdas, delta: float | None = None) -> BoundResult:
    c = build_task_catoni_constraint(e, b, lambdas, delta)
    rep = maximize_single_constraint(c)
    lam = [float(x) for x in c.lambdas]
    return _from_report(rep, BoundKind.TASK_CATONI, c.delta_share, e.task_centric_empirical,
                        **{"lambda": lam[0] if len(set(lam)) == 1 else lam, "budget_rhs": c.budget_rhs})


# -- suites ------------------------------------------------------------------------


@dataclass
class SuiteResult:
    view: View
    members: list
    derived: list
    pointwise_min: BoundResult
    joint: BoundResult | None
    best: BoundResult
    delta_shares: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        rs = self.members + ([self.joint] if self.joint is not None else [])
        return all(r.converged for r in rs)

    def all_results(self) -> list:
        out = list(self.members) + list(self.derived) + [self.pointwise_min]
        if self.joint is not None:
            out.append(self.joint)
        return out


def _check_shares(delta: float, shares, k: int) -> list[Fraction]:
    if shares is None:
        return split_delta(delta, k)
    shares = [Fraction(s) for s in shares]
    if len(shares) != k:
        raise ValueError(f"expected {k} delta shares, got {len(shares)}")
    if any(s <= 0 for s in shares):
        raise ValueError("delta shares must be positive")
    if sum(shares) > Fraction(delta):
        raise ValueError(f"delta over-allocated: shares sum to {float(sum(shares))!r} > {delta!r}")
    return shares


def run_bound_suite(e: Ensemble, b: ComplexityBudget, view: View | str = View.TASK,
                    grid: LambdaGrid | None = None, include_kl: bool = True,
                    include_standard: bool = True, include_joint: bool = True,
                    shares: Sequence | None = None) -> SuiteResult:
    """Evaluate a family of bounds under one union bound.

    Members are, in order: the standard-rate bound (task view only), the kl
    bound, then one Catoni bound per grid value; each gets an equal share of
    delta unless ``shares`` is given. In the sample view the Pinsker bound
    plays the standard-rate role; when the kl bound is also present it is a
    relaxation of it and needs no share of its own.
    """
    view = View(view)
    b.check_tasks(e.n)
    lambdas = list(grid.values) if grid is not None else []
    names: list[str] = []
    if include_standard and (view is View.TASK or not include_kl):
        names.append("standard")
    if include_kl:
        names.append("kl")
    names += [f"catoni[{i}]" for i in range(len(lambdas))]
    if not names:
        raise ValueError("the suite has no members")
    fr = _check_shares(b.delta, shares, len(names))
    d = [float(s) for s in fr]

    members: list[BoundResult] = []
    derived: list[BoundResult] = []
    constraints = []
    k = 0
    if view is View.TASK:
        emp = e.task_centric_empirical
        if names[0] == "standard":
            members.append(standard_rate_task_centric(e, b, d[k]))
            k += 1
        if include_kl:
            c = build_task_kl_constraint(e, b, d[k])
            members.append(_from_report(maximize_single_constraint(c), BoundKind.TASK_KL, d[k], emp,
                                        budget_rhs=c.budget_rhs))
            derived.append(pinsker_task_centric(e, b, d[k]))
            constraints.append(c)
            k += 1
        for lam in lambdas:
            c = build_task_catoni_constraint(e, b, lam, d[k])
            members.append(_from_report(maximize_single_constraint(c), BoundKind.TASK_CATONI, d[k], emp,
                                        **{"lambda": lam if not isinstance(lam, tuple) else list(lam),
                                           "budget_rhs": c.budget_rhs}))
            constraints.append(c)
            k += 1
    else:
        emp = e.sample_centric_empirical
        if names[0] == "standard":
            members.append(pinsker_sample_centric(e, b, d[k]))
            k += 1
        if include_kl:
            members.append(sample_kl_bound(e, b, d[k]))
            if include_standard:
                derived.append(pinsker_sample_centric(e, b, d[k]))
            k += 1
        for lam in lambdas:
            if isinstance(lam, tuple):
                raise ValueError("per-task lambda vectors only apply to the task view")
            members.append(sample_catoni_bound(e, b, lam, d[k]))
            k += 1

    best_member = min(members, key=lambda r: r.value)
    pmin = BoundResult(value=best_member.value, kind=BoundKind.POINTWISE_MIN, delta_consumed=float(sum(fr)),
                       empirical=emp, params={"argmin": names[members.index(best_member)]},
                       vacuous=best_member.vacuous, converged=all(r.converged for r in members))

    joint = None
    if include_joint and view is View.TASK and len(constraints) >= 2:
        rep = maximize_joint(constraints)
        joint = _from_report(rep, BoundKind.TASK_JOINT, float(sum(fr)), emp,
                             members=[n for n in names if n != "standard"])
    # a non-converged joint solve still reports a valid (dual) value
    candidates = [pmin] + ([joint] if joint is not None else [])
    best = min(candidates, key=lambda r: r.value)
    return SuiteResult(view=view, members=members, derived=derived, pointwise_min=pmin, joint=joint,
                       best=best, delta_shares=fr, labels=names)


# -- meta-learning -------------------------------------------------------------------


def _outer_denominator(n: int, denominator: str) -> float:
    denom = {"n": float(n), "2n": 2.0 * n}.get(denominator)
    if denom is None:
        raise ValueError(f"denominator must be 'n' or '2n', got {denominator!r}")
    return denom


def compose_task_kl(counts, empirical, inner_budget: float, outer_budget: float,
                    denominator: str = "n") -> tuple[float, SolveReport]:
    """Multi-task kl inversion followed by an environment-level kl inversion."""
    c = task_kl_constraint_raw(counts, empirical, inner_budget)
    rep = maximize_single_constraint(c)
    inner = min(max(rep.upper, float(np.mean(c.empirical))), 1.0)
    n = c.dimension
    return kl_inv_upper(inner, outer_budget / _outer_denominator(n, denominator)), rep


def meta_task_kl(e: Ensemble, mb: MetaBudget, denominator: str = "n") -> BoundResult:
    mb.check(e)
    c1 = math.fsum(math.log(2.0 * math.sqrt(m)) for m in e.sample_counts)
    val, rep = compose_task_kl(e.sample_counts, e.empirical_risks, mb.complexity + c1,
                               mb.outer_kl_budget, denominator)
    res = clamped_result(val, BoundKind.META_TASK_KL, mb.delta, e.task_centric_empirical,
                         params={"denominator": denominator, "inner": float(rep.upper)})
    res.converged = bool(rep.converged)
    res.diagnostics = {"solver_iterations": int(rep.iterations), "duality_gap": float(rep.duality_gap)}
    return res


def meta_sample_kl(e: Ensemble, mb: MetaBudget, denominator: str = "n") -> BoundResult:
    mb.check(e)
    M = e.total_samples
    inner = kl_inv_upper(e.sample_centric_empirical, (mb.complexity + math.log(2.0 * math.sqrt(M))) / M)
    scale = M / (e.n * mb.m_max)
    outer = kl_inv_upper(scale * inner, mb.outer_kl_budget / _outer_denominator(e.n, denominator))
    return clamped_result(outer, BoundKind.META_SAMPLE_KL, mb.delta, e.sample_centric_empirical,
                          params={"denominator": denominator, "inner": inner, "scale": scale})


def _check_lambda(lam, name):
    lam = float(lam)
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ValueError(f"{name} must be a finite positive number, got {lam!r}")
    return lam


def meta_task_catoni(e: Ensemble, mb: MetaBudget, inner_lambdas, outer_lambda: float) -> BoundResult:
    mb.check(e)
    outer_lambda = _check_lambda(outer_lambda, "outer_lambda")
    rep = maximize_catoni_multi(e, e.empirical_risks, mb.complexity, inner_lambdas)
    inner = min(rep.upper, 1.0)
    outer = catoni_scalar_inverse(e.n, inner, mb.outer_catoni_budget, outer_lambda)
    res = clamped_result(outer, BoundKind.META_TASK_CATONI, mb.delta, e.task_centric_empirical,
                         params={"outer_lambda": outer_lambda, "inner": inner})
    res.converged = bool(rep.converged)
    res.diagnostics = {"solver_iterations": int(rep.iterations), "duality_gap": float(rep.duality_gap)}
    return res


def meta_sample_catoni(e: Ensemble, mb: MetaBudget, inner_lambda: float, outer_lambda: float) -> BoundResult:
    mb.check(e)
    inner_lambda = _check_lambda(inner_lambda, "inner_lambda")
    outer_lambda = _check_lambda(outer_lambda, "outer_lambda")
    M = e.total_samples
    inner = catoni_scalar_inverse(M, e.sample_centric_empirical, mb.complexity, inner_lambda)
    scale = M / (e.n * mb.m_max)
    outer = catoni_scalar_inverse(e.n, scale * inner, mb.outer_catoni_budget, outer_lambda)
    return clamped_result(outer, BoundKind.META_SAMPLE_CATONI, mb.delta, e.sample_centric_empirical,
                          params={"inner_lambda": inner_lambda, "outer_lambda": outer_lambda,
                                  "inner": inner, "scale": scale})


def meta_task_pinsker(e: Ensemble, mb: MetaBudget, denominator: str = "n") -> BoundResult:
    """Both stages of the task-centric meta kl bound relaxed by Pinsker."""
    mb.check(e)
    c1 = math.fsum(math.log(2.0 * math.sqrt(m)) for m in e.sample_counts)
    inner = e.task_centric_empirical + math.sqrt((mb.complexity + c1) / (2.0 * e.n * e.harmonic_mean))
    inner = min(inner, 1.0)
    outer = inner + math.sqrt(mb.outer_kl_budget / (2.0 * _outer_denominator(e.n, denominator)))
    return clamped_result(outer, BoundKind.META_TASK_PINSKER, mb.delta, e.task_centric_empirical,
                          params={"denominator": denominator, "inner": inner})
