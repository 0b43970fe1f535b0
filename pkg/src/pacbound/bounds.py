"""Explicit risk bounds and the convex constraints behind the implicit ones.

Explicit bounds come back as :class:`BoundResult`. Implicit (fast-rate)
bounds are represented by a :class:`RiskConstraint` over the unknown risk
vector; turning one into a number is the solver's job.

Every builder takes an optional ``delta`` that overrides ``budget.delta``;
this is the share of the confidence budget the caller assigns to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ensemble import ComplexityBudget, Ensemble
from .klmath import check_prob, kl_inv_upper, kl_vec, kl_grad_vec, phi_inv

__all__ = [
    "BoundKind",
    "ConstraintKind",
    "BoundResult",
    "RiskConstraint",
    "single_task_mcallester",
    "single_task_maurer",
    "standard_rate_task_centric",
    "build_task_kl_constraint",
    "build_task_catoni_constraint",
    "build_sample_kl_constraint",
    "build_sample_catoni_constraint",
    "sample_kl_bound",
    "sample_catoni_bound",
    "pinsker_sample_centric",
    "pinsker_task_centric",
    "clamped_result",
]


class BoundKind(str, Enum):
    MCALLESTER = "mcallester"
    MAURER = "maurer"
    STANDARD_RATE = "standard_rate"
    TASK_KL = "task_kl"
    TASK_CATONI = "task_catoni"
    TASK_JOINT = "task_joint"
    SAMPLE_KL = "sample_kl"
    SAMPLE_CATONI = "sample_catoni"
    PINSKER_TASK = "pinsker_task"
    PINSKER_SAMPLE = "pinsker_sample"
    POINTWISE_MIN = "pointwise_min"
    META_TASK_KL = "meta_task_kl"
    META_SAMPLE_KL = "meta_sample_kl"
    META_TASK_CATONI = "meta_task_catoni"
    META_SAMPLE_CATONI = "meta_sample_catoni"
    META_TASK_PINSKER = "meta_task_pinsker"


class ConstraintKind(str, Enum):
    TASK_KL = "task_kl"
    TASK_CATONI = "task_catoni"
    SAMPLE_KL = "sample_kl"
    SAMPLE_CATONI = "sample_catoni"

    @property
    def is_kl(self) -> bool:
        return self in (ConstraintKind.TASK_KL, ConstraintKind.SAMPLE_KL)


@dataclass
class BoundResult:
    value: float
    kind: BoundKind
    delta_consumed: float
    empirical: float
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    vacuous: bool = False
    converged: bool = True


def clamped_result(raw: float, kind: BoundKind, delta: float, empirical: float, **extra) -> BoundResult:
    """Clamp a bound to [0, 1]; anything at or above 1 is reported as vacuous."""
    if math.isnan(raw):
        raise FloatingPointError(f"{kind.value} produced NaN")
    value = min(max(raw, 0.0), 1.0)
    return BoundResult(value=value, kind=kind, delta_consumed=delta, empirical=empirical,
                       vacuous=value >= 1.0, **extra)


def _delta(budget: ComplexityBudget, delta: float | None) -> float:
    d = budget.delta if delta is None else float(delta)
    if not (0.0 < d <= 1.0):
        raise ValueError(f"delta share must lie in (0, 1], got {d!r}")
    return d


def _check_single(m, delta):
    if isinstance(m, bool) or int(m) != m or m < 1:
        raise ValueError(f"sample size must be a positive integer, got {m!r}")
    if not (0.0 < delta <= 1.0):
        raise ValueError(f"delta must lie in (0, 1], got {delta!r}")


# -- single task -------------------------------------------------------------


def single_task_mcallester(m: int, q: float, kl_budget: float, delta: float) -> BoundResult:
    _check_single(m, delta)
    q = check_prob(q, "q")
    slack = math.sqrt((kl_budget + math.log(1.0 / delta) + 2.5 * math.log(m) + 8.0) / (2.0 * m - 1.0))
    return clamped_result(q + slack, BoundKind.MCALLESTER, delta, q)


def single_task_maurer(m: int, q: float, kl_budget: float, delta: float,
                       denominator: str = "m") -> BoundResult:
    """kl inversion with budget (KL + ln(2 sqrt(m) / delta)) / denom.

    ``denominator`` is ``"m"`` (default) or ``"2m"``.
    """
    _check_single(m, delta)
    q = check_prob(q, "q")
    denom = {"m": float(m), "2m": 2.0 * m}.get(denominator)
    if denom is None:
        raise ValueError(f"denominator must be 'm' or '2m', got {denominator!r}")
    rhs = (kl_budget + math.log(2.0 * math.sqrt(m) / delta)) / denom
    return clamped_result(kl_inv_upper(q, rhs), BoundKind.MAURER, delta, q,
                          params={"denominator": denominator, "kl_rhs": rhs})


# -- task-centric ------------------------------------------------------------


def standard_rate_task_centric(e: Ensemble, b: ComplexityBudget, delta: float | None = None) -> BoundResult:
    d = _delta(b, delta)
    nmh = e.n * e.harmonic_mean
    slack = math.sqrt((b.kl + math.log(4.0 * nmh / d) + 1.0) / (2.0 * nmh))
    return clamped_result(e.task_centric_empirical + slack, BoundKind.STANDARD_RATE, d,
                          e.task_centric_empirical)


@dataclass(frozen=True, eq=False)
class RiskConstraint:
    """``sum_i g_i(p_i) <= budget_rhs`` over p in [0, 1]^dimension.

    kl kinds:      g_i(p) = counts_i * kl(empirical_i | p)
    Catoni kinds:  g_i(p) = -counts_i * ln(1 - p + p e^{-rates_i})

    Sample-centric kinds are the one-dimensional case with counts = (M,).
    """

    kind: ConstraintKind
    counts: np.ndarray
    empirical: np.ndarray
    budget_rhs: float
    delta_share: float
    lambdas: np.ndarray | None = None
    rates: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return int(self.counts.size)

    @property
    def is_kl(self) -> bool:
        return self.kind.is_kl

    def terms(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.is_kl:
            return self.counts * kl_vec(self.empirical, p)
        a = self.rates
        x = -np.expm1(-a)
        px = p * x
        with np.errstate(divide="ignore", invalid="ignore"):
            small = -np.log1p(-np.minimum(px, 0.5))
            large = -np.logaddexp(np.log1p(-p), np.log(p) - a)
        return self.counts * np.where(px <= 0.5, small, large)

    def value(self, p) -> float:
        return float(np.sum(self.terms(p), axis=-1)) if np.ndim(p) == 1 else np.sum(self.terms(p), axis=-1)

    def grad(self, p) -> np.ndarray:
        """Per-coordinate derivative dg_i/dp_i (nondecreasing in p_i)."""
        p = np.asarray(p, dtype=float)
        if self.is_kl:
            return self.counts * kl_grad_vec(self.empirical, p)
        a = self.rates
        x = -np.expm1(-a)
        return self.counts * x / ((1.0 - p) + p * np.exp(-a))

    def residual(self, p) -> float:
        return self.value(p) - self.budget_rhs

    def describe(self) -> dict:
        d = {"kind": self.kind.value, "budget_rhs": self.budget_rhs, "delta_share": self.delta_share}
        if self.lambdas is not None:
            d["lambdas"] = [float(x) for x in self.lambdas]
        return d


def build_task_kl_constraint(e: Ensemble, b: ComplexityBudget, delta: float | None = None) -> RiskConstraint:
    d = _delta(b, delta)
    m = e.sample_counts
    rhs = b.kl + math.log(1.0 / d) + math.fsum(math.log(2.0 * math.sqrt(mi)) for mi in m)
    return RiskConstraint(ConstraintKind.TASK_KL, m, e.empirical_risks, rhs, d)


def _lambda_vector(lambdas, n: int) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    if lam.size == 1 and n > 1:
        lam = np.full(n, lam[0])
    if lam.size != n:
        raise ValueError(f"expected {n} lambdas, got {lam.size}")
    if np.any(~(lam > 0.0)) or np.any(~np.isfinite(lam)):
        raise ValueError("every lambda must be a finite positive number")
    return lam


def build_task_catoni_constraint(e: Ensemble, b: ComplexityBudget, lambdas,
                                 delta: float | None = None) -> RiskConstraint:
    """-sum m_i ln(1 - p_i + p_i e^{-lam_i/(n m_i)}) <= mean(lam * q) + KL + ln(1/delta)."""
    d = _delta(b, delta)
    n = e.n
    lam = _lambda_vector(lambdas, n)
    m = e.sample_counts
    q = e.empirical_risks
    rhs = math.fsum(lam * q) / n + b.kl + math.log(1.0 / d)
    return RiskConstraint(ConstraintKind.TASK_CATONI, m, q, rhs, d, lambdas=lam, rates=lam / (n * m))


def task_catoni_constraint_raw(counts, empirical, budget: float, lambdas) -> RiskConstraint:
    """Catoni constraint with an arbitrary additive budget instead of KL + ln(1/delta)."""
    m = np.asarray(counts, dtype=float).reshape(-1)
    q = np.asarray(empirical, dtype=float).reshape(-1)
    n = m.size
    lam = _lambda_vector(lambdas, n)
    rhs = math.fsum(lam * q) / n + float(budget)
    return RiskConstraint(ConstraintKind.TASK_CATONI, m, q, rhs, float("nan"), lambdas=lam, rates=lam / (n * m))


def task_kl_constraint_raw(counts, empirical, budget: float) -> RiskConstraint:
    """kl constraint ``sum m_i kl(q_i|p_i) <= budget`` with a ready-made right-hand side."""
    m = np.asarray(counts, dtype=float).reshape(-1)
    q = np.asarray(empirical, dtype=float).reshape(-1)
    return RiskConstraint(ConstraintKind.TASK_KL, m, q, float(budget), float("nan"))


# -- sample-centric ----------------------------------------------------------


def build_sample_kl_constraint(e: Ensemble, b: ComplexityBudget, delta: float | None = None) -> RiskConstraint:
    d = _delta(b, delta)
    M = float(e.total_samples)
    rhs = b.kl + math.log(2.0 * math.sqrt(M) / d)
    return RiskConstraint(ConstraintKind.SAMPLE_KL, np.array([M]),
                          np.array([e.sample_centric_empirical]), rhs, d)


def build_sample_catoni_constraint(e: Ensemble, b: ComplexityBudget, lam: float,
                                   delta: float | None = None) -> RiskConstraint:
    d = _delta(b, delta)
    lam = float(lam)
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ValueError(f"lambda must be a finite positive number, got {lam!r}")
    M = float(e.total_samples)
    q = e.sample_centric_empirical
    rhs = lam * q + b.kl + math.log(1.0 / d)
    return RiskConstraint(ConstraintKind.SAMPLE_CATONI, np.array([M]), np.array([q]), rhs, d,
                          lambdas=np.array([lam]), rates=np.array([lam / M]))


def sample_kl_bound(e: Ensemble, b: ComplexityBudget, delta: float | None = None) -> BoundResult:
    d = _delta(b, delta)
    M = e.total_samples
    q = e.sample_centric_empirical
    rhs = (b.kl + math.log(2.0 * math.sqrt(M) / d)) / M
    return clamped_result(kl_inv_upper(q, rhs), BoundKind.SAMPLE_KL, d, q, params={"kl_rhs": rhs})


def catoni_scalar_inverse(count: float, q: float, budget: float, lam: float) -> float:
    """sup{p : -count ln(1 - p + p e^{-lam/count}) <= lam q + budget}."""
    target = q + budget / lam
    if target >= 1.0:
        return 1.0
    return phi_inv(lam / count, max(target, 0.0))


def sample_catoni_bound(e: Ensemble, b: ComplexityBudget, lam: float,
                        delta: float | None = None) -> BoundResult:
    d = _delta(b, delta)
    lam = float(lam)
    if not (lam > 0.0 and math.isfinite(lam)):
        raise ValueError(f"lambda must be a finite positive number, got {lam!r}")
    q = e.sample_centric_empirical
    val = catoni_scalar_inverse(e.total_samples, q, b.kl + math.log(1.0 / d), lam)
    return clamped_result(val, BoundKind.SAMPLE_CATONI, d, q, params={"lambda": lam})


def pinsker_sample_centric(e: Ensemble, b: ComplexityBudget, delta: float | None = None) -> BoundResult:
    d = _delta(b, delta)
    M = e.total_samples
    q = e.sample_centric_empirical
    slack = math.sqrt((b.kl + math.log(2.0 * math.sqrt(M) / d)) / (2.0 * M))
    return clamped_result(q + slack, BoundKind.PINSKER_SAMPLE, d, q)


def pinsker_task_centric(e: Ensemble, b: ComplexityBudget, delta: float | None = None) -> BoundResult:
    """Explicit consequence of the task-kl constraint via Cauchy-Schwarz and Pinsker."""
    c = build_task_kl_constraint(e, b, delta)
    q = e.task_centric_empirical
    slack = math.sqrt(c.budget_rhs / (2.0 * e.n * e.harmonic_mean))
    return clamped_result(q + slack, BoundKind.PINSKER_TASK, c.delta_share, q)
