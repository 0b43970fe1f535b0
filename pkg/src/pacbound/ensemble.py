"""Problem instances: per-task statistics and complexity budgets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np

from .klmath import check_prob

__all__ = [
    "TaskStat",
    "Ensemble",
    "ComplexityBudget",
    "build_ensemble",
    "gaussian_budget",
    "risk_vector",
]


@dataclass(frozen=True)
class TaskStat:
    sample_count: int
    empirical_risk: float

    def __post_init__(self):
        m = self.sample_count
        if isinstance(m, bool) or int(m) != m or m < 1:
            raise ValueError(f"sample_count must be a positive integer, got {m!r}")
        object.__setattr__(self, "sample_count", int(m))
        object.__setattr__(self, "empirical_risk", check_prob(self.empirical_risk, "empirical_risk"))


@dataclass(frozen=True)
class Ensemble:
    """Ordered, immutable collection of task statistics.

    Aggregates are computed lazily and cached. The harmonic mean is kept
    as an exact fraction (``harmonic_mean_exact``) next to its float value.
    """

    tasks: tuple[TaskStat, ...]

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise ValueError("an ensemble needs at least one task")
        for t in tasks:
            if not isinstance(t, TaskStat):
                raise TypeError(f"expected TaskStat, got {type(t).__name__}")
        object.__setattr__(self, "tasks", tasks)

    @property
    def n(self) -> int:
        return len(self.tasks)

    @cached_property
    def sample_counts(self) -> np.ndarray:
        arr = np.array([t.sample_count for t in self.tasks], dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def empirical_risks(self) -> np.ndarray:
        arr = np.array([t.empirical_risk for t in self.tasks], dtype=float)
        arr.setflags(write=False)
        return arr

    @cached_property
    def total_samples(self) -> int:
        return sum(t.sample_count for t in self.tasks)

    @cached_property
    def harmonic_mean_exact(self) -> Fraction:
        return Fraction(self.n) / sum(Fraction(1, t.sample_count) for t in self.tasks)

    @cached_property
    def harmonic_mean(self) -> float:
        return float(self.harmonic_mean_exact)

    @cached_property
    def min_samples(self) -> int:
        return min(t.sample_count for t in self.tasks)

    @cached_property
    def max_samples(self) -> int:
        return max(t.sample_count for t in self.tasks)

    # both means are exact rationals rounded once, so balanced ensembles give identical floats
    @cached_property
    def task_centric_empirical(self) -> float:
        return float(sum(Fraction(t.empirical_risk) for t in self.tasks) / self.n)

    @cached_property
    def sample_centric_empirical(self) -> float:
        total = sum(t.sample_count * Fraction(t.empirical_risk) for t in self.tasks)
        return float(total / self.total_samples)

    def with_tasks(self, tasks: Sequence[TaskStat]) -> "Ensemble":
        return Ensemble(tuple(tasks))


def build_ensemble(tasks: Sequence[TaskStat | tuple[int, float]]) -> Ensemble:
    """Build an :class:`Ensemble` from TaskStats or ``(m, q)`` pairs."""
    if len(tasks) == 0:
        raise ValueError("an ensemble needs at least one task")
    stats = [t if isinstance(t, TaskStat) else TaskStat(*t) for t in tasks]
    return Ensemble(tuple(stats))


@dataclass(frozen=True)
class ComplexityBudget:
    """KL(posterior || prior) plus the confidence level delta.

    Either ``total_kl`` is given, or the split into ``hyper_kl`` and
    ``per_task_kl``; the split is collapsed to one scalar for every bound
    and only kept for reporting.
    """

    delta: float
    total_kl: float | None = None
    hyper_kl: float | None = None
    per_task_kl: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        d = float(self.delta)
        if not (0.0 < d < 1.0):
            raise ValueError(f"delta must lie in (0, 1), got {self.delta!r}")
        object.__setattr__(self, "delta", d)
        decomposed = self.hyper_kl is not None or self.per_task_kl is not None
        if self.total_kl is not None and decomposed:
            raise ValueError("give either total_kl or the (hyper_kl, per_task_kl) split, not both")
        if self.total_kl is None and not decomposed:
            raise ValueError("a KL term is required")
        if self.total_kl is not None:
            v = float(self.total_kl)
            if not v >= 0.0:
                raise ValueError(f"total_kl must be >= 0, got {v!r}")
            object.__setattr__(self, "total_kl", v)
        else:
            if self.hyper_kl is None or self.per_task_kl is None:
                raise ValueError("a decomposed budget needs both hyper_kl and per_task_kl")
            h = float(self.hyper_kl)
            per = tuple(float(x) for x in self.per_task_kl)
            if not h >= 0.0 or any(not x >= 0.0 for x in per):
                raise ValueError("KL terms must be >= 0")
            object.__setattr__(self, "hyper_kl", h)
            object.__setattr__(self, "per_task_kl", per)

    @property
    def is_decomposed(self) -> bool:
        return self.total_kl is None

    @property
    def kl(self) -> float:
        if self.total_kl is not None:
            return self.total_kl
        return self.hyper_kl + math.fsum(self.per_task_kl)

    def check_tasks(self, n: int) -> None:
        if self.per_task_kl is not None and len(self.per_task_kl) != n:
            raise ValueError(f"per_task_kl has {len(self.per_task_kl)} entries for {n} tasks")

    def replace(self, **changes) -> "ComplexityBudget":
        fields = {
            "delta": self.delta,
            "total_kl": self.total_kl,
            "hyper_kl": self.hyper_kl,
            "per_task_kl": self.per_task_kl,
        }
        if "total_kl" in changes:
            fields.update(hyper_kl=None, per_task_kl=None)
        fields.update(changes)
        return ComplexityBudget(**fields)


def gaussian_budget(dim, sigma, mean_vectors, bias_vector, delta) -> ComplexityBudget:
    """KL split for Gaussian posteriors around a learned bias vector.

    Hyper term ``dim/2 * |psi|^2``; per-task expected term
    ``dim/2 * (sigma^2 - ln sigma^2) + |mu_i - psi|^2 / 2``. The per-task
    expression already includes the ``dim/2`` contributed by averaging over
    the hyper-posterior.
    """
    dim = int(dim)
    if dim < 1:
        raise ValueError("dim must be a positive integer")
    sigma = float(sigma)
    if not sigma > 0.0:
        raise ValueError("sigma must be > 0")
    psi = np.asarray(bias_vector, dtype=float).reshape(-1)
    if psi.shape != (dim,):
        raise ValueError(f"bias_vector has length {psi.size}, expected {dim}")
    per_task = []
    for i, mu in enumerate(mean_vectors):
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.shape != (dim,):
            raise ValueError(f"mean_vectors[{i}] has length {mu.size}, expected {dim}")
        s2 = sigma * sigma
        per_task.append(0.5 * dim * (s2 - math.log(s2)) + 0.5 * float(np.sum((mu - psi) ** 2)))
    hyper = 0.5 * dim * float(np.sum(psi**2))
    return ComplexityBudget(delta=delta, hyper_kl=hyper, per_task_kl=tuple(per_task))


def risk_vector(values, n: int | None = None) -> np.ndarray:
    """Validate a candidate vector of true risks."""
    arr = np.asarray(values, dtype=float).reshape(-1)
    if n is not None and arr.size != n:
        raise ValueError(f"expected {n} risks, got {arr.size}")
    if np.any(~((arr >= 0.0) & (arr <= 1.0))):
        raise ValueError("risks must lie in [0, 1]")
    return arr
