"""Self-verification: exact MGF enumeration, Monte-Carlo coverage and a grid oracle."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import beta, binom

from .bounds import (
    RiskConstraint,
    pinsker_sample_centric,
    pinsker_task_centric,
    sample_catoni_bound,
    sample_kl_bound,
    standard_rate_task_centric,
)
from .ensemble import ComplexityBudget, build_ensemble
from .klmath import kl_vec, phi
from .solver import ObjectiveWeights, _weights
from .unionbound import LambdaGrid, MetaBudget, meta_sample_kl, meta_task_kl, run_bound_suite, task_kl_bound

__all__ = [
    "MgfSpec",
    "EnumerationTooLarge",
    "mgf_unbalanced_exact",
    "log_mgf_unbalanced_exact",
    "maurer_mgf_exact",
    "product_envelope",
    "mgf_catoni_check",
    "mgf_catoni_sample_check",
    "mgf_monte_carlo",
    "GeneratorConfig",
    "CoverageReport",
    "FAMILIES",
    "coverage_test",
    "clopper_pearson_upper",
    "trial_rng",
    "grid_oracle",
    "COVERAGE_FAMILIES",
    "mgf_campaign",
    "random_oracle_instance",
    "oracle_campaign",
    "coverage_campaign",
]

MAX_TOTAL_SAMPLES = 30
MAX_OUTCOMES = 4_000_000


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class MgfSpec:
    task_sizes: tuple
    mu: float
    multiplier: float

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.task_sizes)
        if not sizes or any(m < 1 for m in sizes):
            raise ValueError("task sizes must be positive integers")
        object.__setattr__(self, "task_sizes", sizes)
        if not (0.0 <= float(self.mu) <= 1.0):
            raise ValueError(f"mu must lie in [0, 1], got {self.mu!r}")
        if not float(self.multiplier) > 0.0:
            raise ValueError("multiplier must be > 0")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "multiplier", float(self.multiplier))

    @property
    def n(self) -> int:
        return len(self.task_sizes)

    @property
    def outcome_count(self) -> int:
        return math.prod(m + 1 for m in self.task_sizes)


def _check_enumerable(sizes: Sequence[int]) -> None:
    if sum(sizes) > MAX_TOTAL_SAMPLES:
        raise EnumerationTooLarge(f"sum of task sizes {sum(sizes)} exceeds {MAX_TOTAL_SAMPLES}")
    if math.prod(m + 1 for m in sizes) > MAX_OUTCOMES:
        raise EnumerationTooLarge("too many joint outcomes to enumerate")


def _joint_outcomes(sizes, mus):
    """Every (k_1..k_n) with its log-probability under independent binomials."""
    axes = [np.arange(m + 1) for m in sizes]
    grids = np.meshgrid(*axes, indexing="ij")
    ks = [g.reshape(-1) for g in grids]
    with np.errstate(divide="ignore"):
        logp = sum(binom.logpmf(k, m, mu) for k, m, mu in zip(ks, sizes, mus))
    return ks, logp


def log_mgf_unbalanced_exact(spec: MgfSpec) -> float:
    """ln E[exp(n lam kl(mu_hat | mu))] with mu_hat the mean of the per-task frequencies."""
    sizes = spec.task_sizes
    _check_enumerable(sizes)
    ks, logp = _joint_outcomes(sizes, [spec.mu] * spec.n)
    mu_hat = sum(k / m for k, m in zip(ks, sizes)) / spec.n
    mu_hat = np.clip(mu_hat, 0.0, 1.0)
    expo = spec.n * spec.multiplier * kl_vec(mu_hat, spec.mu)
    keep = np.isfinite(logp)
    return float(logsumexp(logp[keep] + expo[keep]))


def mgf_unbalanced_exact(spec: MgfSpec) -> float:
    with np.errstate(over="ignore"):
        return float(np.exp(log_mgf_unbalanced_exact(spec)))


def maurer_mgf_exact(t: int, mu: float) -> float:
    """E[exp(t kl(Y/t | mu))] for Y ~ Bin(t, mu)."""
    return mgf_unbalanced_exact(MgfSpec((int(t),), mu, float(t)))


def product_envelope(task_sizes) -> float:
    """prod 2 sqrt(m_i): the MGF ceiling for multipliers up to the smallest task size."""
    return math.prod(2.0 * math.sqrt(m) for m in task_sizes)


def mgf_catoni_check(task_sizes, mus, lam: float) -> float:
    """E exp(sum_i (lam/n) [Phi_{lam/(n m_i)}(mu_i) - mu_hat_i)]), by joint enumeration."""
    sizes = tuple(int(m) for m in task_sizes)
    mus = [float(x) for x in mus]
    if len(mus) != len(sizes):
        raise ValueError("need one mean per task")
    lam = float(lam)
    if not lam > 0.0:
        raise ValueError("lambda must be > 0")
    _check_enumerable(sizes)
    n = len(sizes)
    ks, logp = _joint_outcomes(sizes, mus)
    expo = sum((lam / n) * (phi(lam / (n * m), mu) - k / m) for k, m, mu in zip(ks, sizes, mus))
    keep = np.isfinite(logp)
    return float(np.exp(logsumexp(logp[keep] + expo[keep])))


def mgf_catoni_sample_check(task_sizes, mus, lam: float) -> float:
    """E exp(lam [Phi_{lam/M}(mu_w) - Y/M]) with Y the pooled loss count and mu_w the weighted mean."""
    sizes = tuple(int(m) for m in task_sizes)
    mus = [float(x) for x in mus]
    if len(mus) != len(sizes):
        raise ValueError("need one mean per task")
    lam = float(lam)
    if not lam > 0.0:
        raise ValueError("lambda must be > 0")
    _check_enumerable(sizes)
    M = sum(sizes)
    mu_w = math.fsum(m * mu for m, mu in zip(sizes, mus)) / M
    ks, logp = _joint_outcomes(sizes, mus)
    expo = lam * (phi(lam / M, min(mu_w, 1.0)) - sum(ks) / M)
    keep = np.isfinite(logp)
    return float(np.exp(logsumexp(logp[keep] + expo[keep])))


def mgf_monte_carlo(spec: MgfSpec, samples: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo estimate of the unbalanced MGF and its standard error."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0])))
    sizes = np.array(spec.task_sizes)
    ks = rng.binomial(sizes, spec.mu, size=(int(samples), spec.n))
    mu_hat = np.mean(ks / sizes, axis=1)
    vals = np.exp(spec.n * spec.multiplier * kl_vec(mu_hat, spec.mu))
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(samples))


# -- coverage -------------------------------------------------------------------------

FAMILIES = (
    "standard_rate",
    "task_kl",
    "task_catoni_grid",
    "sample_kl",
    "sample_catoni",
    "pinsker_task",
    "pinsker_sample",
    "meta_task_kl",
    "meta_sample_kl",
)


@dataclass(frozen=True)
class GeneratorConfig:
    """How each coverage trial draws its tasks.

    ``sample_sizes`` fixes m_i; otherwise each trial draws them uniformly from
    ``m_range``. ``risks`` fixes the true risks; otherwise they are drawn
    uniformly from ``risk_range`` (the environment for the meta families).
    """

    n_tasks: int = 5
    sample_sizes: tuple | None = None
    m_range: tuple = (20, 200)
    risks: tuple | None = None
    risk_range: tuple = (0.0, 0.3)
    delta: float = 0.05
    kl: float = 0.0

    def __post_init__(self):
        if int(self.n_tasks) < 1:
            raise ValueError("n_tasks must be >= 1")
        object.__setattr__(self, "n_tasks", int(self.n_tasks))
        if self.sample_sizes is not None:
            sizes = tuple(int(m) for m in self.sample_sizes)
            if len(sizes) != self.n_tasks or any(m < 1 for m in sizes):
                raise ValueError("sample_sizes needs n_tasks positive integers")
            object.__setattr__(self, "sample_sizes", sizes)
        lo, hi = (int(x) for x in self.m_range)
        if not 1 <= lo <= hi:
            raise ValueError(f"bad m_range {self.m_range!r}")
        object.__setattr__(self, "m_range", (lo, hi))
        if self.risks is not None:
            risks = tuple(float(x) for x in self.risks)
            if len(risks) != self.n_tasks or any(not 0.0 <= r <= 1.0 for r in risks):
                raise ValueError("risks needs n_tasks values in [0, 1]")
            object.__setattr__(self, "risks", risks)
        a, b = (float(x) for x in self.risk_range)
        if not 0.0 <= a <= b <= 1.0:
            raise ValueError(f"bad risk_range {self.risk_range!r}")
        object.__setattr__(self, "risk_range", (a, b))
        if not 0.0 < float(self.delta) < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if not float(self.kl) >= 0.0:
            raise ValueError("kl must be >= 0")

    @property
    def m_max(self) -> int:
        return max(self.sample_sizes) if self.sample_sizes is not None else self.m_range[1]


@dataclass
class CoverageReport:
    family: str
    trials: int
    violations: int
    violation_rate: float
    binomial_ci_upper: float
    delta: float
    seed: int
    mean_bound: float = 0.0
    mean_target: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.binomial_ci_upper <= self.delta

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def clopper_pearson_upper(violations: int, trials: int, confidence: float = 0.99) -> float:
    if violations >= trials:
        return 1.0
    return float(beta.ppf(confidence, violations + 1, trials - violations))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based generator: the stream depends only on (seed, trial)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


def _draw(cfg: GeneratorConfig, rng: np.random.Generator):
    n = cfg.n_tasks
    if cfg.sample_sizes is not None:
        m = np.array(cfg.sample_sizes)
    else:
        m = rng.integers(cfg.m_range[0], cfg.m_range[1] + 1, size=n)
    if cfg.risks is not None:
        p = np.array(cfg.risks)
    else:
        p = rng.uniform(cfg.risk_range[0], cfg.risk_range[1], size=n)
    k = rng.binomial(m, p)
    return m, p, k


def _environment_targets(cfg: GeneratorConfig) -> tuple[float, float]:
    """Expected task risk and expected (m / m_max) * risk under the environment."""
    if cfg.risks is not None or cfg.sample_sizes is not None:
        raise ValueError("meta families need tasks drawn from an environment (random m and risks)")
    r = 0.5 * (cfg.risk_range[0] + cfg.risk_range[1])
    lo, hi = cfg.m_range
    return r, 0.5 * (lo + hi) / hi * r


def _bound_and_target(family: str, cfg: GeneratorConfig, m, p, k) -> tuple[float, float]:
    e = build_ensemble([(int(mi), float(ki) / float(mi)) for mi, ki in zip(m, k)])
    b = ComplexityBudget(delta=cfg.delta, total_kl=cfg.kl)
    task_target = float(np.mean(p))
    sample_target = float(np.sum(m * p) / np.sum(m))
    if family == "standard_rate":
        return standard_rate_task_centric(e, b).value, task_target
    if family == "task_kl":
        return task_kl_bound(e, b).value, task_target
    if family == "pinsker_task":
        return pinsker_task_centric(e, b).value, task_target
    if family == "task_catoni_grid":
        s = run_bound_suite(e, b, "task", LambdaGrid.preset("exponential", e), include_kl=False,
                            include_standard=False, include_joint=False)
        return s.pointwise_min.value, task_target
    if family == "sample_kl":
        return sample_kl_bound(e, b).value, sample_target
    if family == "pinsker_sample":
        return pinsker_sample_centric(e, b).value, sample_target
    if family == "sample_catoni":
        return sample_catoni_bound(e, b, float(e.total_samples)).value, sample_target
    if family in ("meta_task_kl", "meta_sample_kl"):
        env_task, env_sample = _environment_targets(cfg)
        mb = MetaBudget(cfg.n_tasks, cfg.m_max, cfg.kl, cfg.kl, cfg.delta)
        if family == "meta_task_kl":
            return meta_task_kl(e, mb).value, env_task
        return meta_sample_kl(e, mb).value, env_sample
    raise ValueError(f"unknown bound family {family!r}")


def _run_trials(args) -> tuple[int, list, list]:
    family, cfg, seed, start, stop = args
    violations = 0
    bounds, targets = [], []
    for t in range(start, stop):
        m, p, k = _draw(cfg, trial_rng(seed, t))
        bound, target = _bound_and_target(family, cfg, m, p, k)
        violations += bound < target
        bounds.append(bound)
        targets.append(target)
    return violations, bounds, targets


def coverage_test(cfg: GeneratorConfig, family: str, trials: int, seed: int,
                  workers: int = 1, chunk: int = 250) -> CoverageReport:
    """Count trials where the bound falls below the true target risk.

    Every trial has its own generator seeded by (seed, trial), so the result
    is identical for any worker count.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown bound family {family!r}; choose from {', '.join(FAMILIES)}")
    trials = int(trials)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if family.startswith("meta_"):
        _environment_targets(cfg)
    jobs = [(family, cfg, seed, s, min(s + chunk, trials)) for s in range(0, trials, chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_trials, jobs))
    else:
        parts = [_run_trials(j) for j in jobs]
    violations = sum(v for v, _, _ in parts)
    bounds = list(itertools.chain.from_iterable(b for _, b, _ in parts))
    targets = list(itertools.chain.from_iterable(t for _, _, t in parts))
    return CoverageReport(
        family=family, trials=trials, violations=int(violations),
        violation_rate=violations / trials,
        binomial_ci_upper=clopper_pearson_upper(int(violations), trials),
        delta=float(cfg.delta), seed=int(seed),
        mean_bound=math.fsum(bounds) / trials, mean_target=math.fsum(targets) / trials,
        config=asdict(cfg),
    )


# -- grid oracle ------------------------------------------------------------------------


def _tables(cs, i, grid):
    """Per-constraint term values of coordinate i over a 1-d grid, shape (K, len(grid))."""
    out = []
    for c in cs:
        m = c.counts[i]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if c.is_kl:
                t = m * kl_vec(c.empirical[i], grid)
            else:
                x = -math.expm1(-c.rates[i])
                t = -m * np.log1p(-grid * x)
        out.append(np.where(np.isnan(t), np.inf, t))
    return np.array(out)


def _last_interval(table, resid):
    """Index range of the last coordinate's grid where every table row fits its residual.

    Convex rows split at their minimum into a non-increasing left branch and a
    non-decreasing right branch; each branch is made monotone (rounding-level
    wiggles only ever shrink the feasible set) and searched with searchsorted.
    """
    K, N = table.shape
    lo = np.zeros(resid.shape[1], dtype=np.int64)
    hi = np.full(resid.shape[1], N - 1, dtype=np.int64)
    ok = np.ones(resid.shape[1], dtype=bool)
    for k in range(K):
        row = table[k]
        j = int(np.argmin(row))
        right = np.maximum.accumulate(row[j:])
        left = np.maximum.accumulate(row[: j + 1][::-1])
        r = resid[k]
        ok &= r >= row[j]
        hi = np.minimum(hi, j + np.searchsorted(right, r, side="right") - 1)
        lo = np.maximum(lo, j - (np.searchsorted(left, r, side="right") - 1))
    ok &= lo <= hi
    return ok, hi


def _box(cs, n, grid):
    """Per-coordinate index ranges outside which no point can be feasible."""
    tabs = [_tables(cs, i, grid) for i in range(n)]
    mins = np.array([t.min(axis=1) for t in tabs])  # (n, K)
    b = np.array([c.budget_rhs for c in cs])
    box = []
    for i in range(n):
        room = b - (mins.sum(axis=0) - mins[i])
        feas = np.all(tabs[i] <= room[:, None], axis=0)
        idx = np.flatnonzero(feas)
        if idx.size == 0:
            return None
        box.append((int(idx[0]), int(idx[-1])))
    return box


def _scan(cs, w, axes, last_grid, chunk=1 << 20):
    """Best feasible point with the first n-1 coordinates on ``axes`` and the last on ``last_grid``."""
    n = len(axes) + 1
    b = np.array([c.budget_rhs for c in cs])
    last_tab = _tables(cs, n - 1, last_grid)
    head_tabs = [_tables(cs, i, a) for i, a in enumerate(axes)]
    sizes = [a.size for a in axes]
    total = math.prod(sizes) if sizes else 1
    best_val, best_pt = -math.inf, None
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        idx = np.unravel_index(flat, sizes) if sizes else ()
        used = np.zeros((len(cs), flat.size))
        head_obj = np.zeros(flat.size)
        for i, ix in enumerate(idx):
            used += head_tabs[i][:, ix]
            head_obj += w[i] * axes[i][ix]
        ok, hi = _last_interval(last_tab, b[:, None] - used)
        if not ok.any():
            continue
        vals = np.where(ok, head_obj + w[-1] * last_grid[np.clip(hi, 0, None)], -np.inf)
        j = int(np.argmax(vals))
        if vals[j] > best_val:
            best_val = float(vals[j])
            best_pt = np.array([axes[i][idx[i][j]] for i in range(n - 1)] + [last_grid[hi[j]]])
    return best_val, best_pt


def _axis(lo_val, hi_val, h):
    lo_val, hi_val = max(lo_val, 0.0), min(hi_val, 1.0)
    k0, k1 = math.floor(lo_val / h + 1e-9), math.ceil(hi_val / h - 1e-9)
    pts = np.arange(k0, k1 + 1) * h
    pts = np.clip(pts, 0.0, 1.0)
    if hi_val >= 1.0:
        pts = np.append(pts[pts < 1.0], 1.0)
    return np.unique(pts)


def grid_oracle(cs: Sequence[RiskConstraint], w=None, step: float = 2e-4, refine_passes: int = 2,
                refine_factor: float = 10.0, window: float = 30.0, return_point: bool = False):
    """Brute-force maximum of w.p over a grid of feasible points (n <= 3).

    The first n-1 coordinates are scanned exhaustively at ``step`` (inside the
    box that can hold feasible points at all); for each of them the largest
    feasible grid value of the last coordinate is found by monotone search.
    Each refinement pass divides the step by ``refine_factor`` and rescans a
    window of +-``window`` old steps around the incumbent, recentering while
    the best point sits on the window's edge. The defaults end at step / 100.
    """
    cs = list(cs)
    n = cs[0].dimension if cs else len(np.atleast_1d(w))
    if n > 3:
        raise ValueError("the grid oracle handles at most 3 coordinates")
    if not (0.0 < step <= 0.01):
        raise ValueError("step must lie in (0, 0.01]")
    if isinstance(w, ObjectiveWeights):
        w = w.values
    w = _weights(w, n)
    if not cs:
        val = float(np.sum(w))
        return (val, np.ones(n)) if return_point else val

    full = _axis(0.0, 1.0, step)
    # empirical points are candidates too, so a zero budget does not depend on grid snapping
    anchors = [c.empirical.astype(float) for c in cs if c.is_kl] + [np.zeros(n)]
    anchors = [a for a in anchors if all(c.value(a) <= c.budget_rhs for c in cs)]
    box = _box(cs, n, full)
    if box is None:
        if not anchors:
            return (-math.inf, None) if return_point else -math.inf
        a = max(anchors, key=lambda x: float(w @ x))
        return (float(w @ a), a) if return_point else float(w @ a)
    axes = [full[a: z + 1] for a, z in box[:-1]]
    last_lo, last_hi = full[box[-1][0]] - step, full[box[-1][1]] + step
    best_val, best_pt = _scan(cs, w, axes, full[box[-1][0]: box[-1][1] + 1])
    for a in anchors:
        if float(w @ a) > best_val:
            best_val, best_pt = float(w @ a), a
    h = step
    for _ in range(int(refine_passes)):
        if best_pt is None:
            break
        h_new = h / refine_factor
        # the last coordinate is cheap (monotone search), so it gets a 10x finer grid
        last = _axis(max(last_lo, best_pt[-1] - 100 * window * h),
                     min(last_hi, best_pt[-1] + 100 * window * h), h_new / 10)
        margin = 0.2 * window * h
        for _recenter in range(100):
            axes = [_axis(best_pt[i] - window * h, best_pt[i] + window * h, h_new) for i in range(n - 1)]
            val, pt = _scan(cs, w, axes, last)
            if pt is None or val <= best_val:
                break
            best_val, best_pt = val, pt
            on_edge = any((pt[i] <= axes[i][0] + margin and axes[i][0] > 0.0)
                          or (pt[i] >= axes[i][-1] - margin and axes[i][-1] < 1.0) for i in range(n - 1))
            if not on_edge:
                break
        h = h_new
    return (best_val, best_pt) if return_point else best_val


# -- campaigns ---------------------------------------------------------------------------

COVERAGE_FAMILIES = ("standard_rate", "task_kl", "task_catoni_grid", "sample_kl", "sample_catoni",
                     "meta_task_kl", "meta_sample_kl")


def mgf_campaign(t_max: int = 25, mu_step: float = 0.01, catoni_instances: int = 200,
                 catoni_max_total: int = 20, blowup_sizes=(1, 2), blowup_lambda: float = 2.0,
                 blowup_mus=(1e-2, 1e-4, 1e-6), blowup_threshold: float = 1e3, seed: int = 0) -> dict:
    """Exact-enumeration checks of the MGF envelopes and of the unbalanced blow-up."""
    mus = np.round(np.arange(mu_step, 1.0 - 1e-9, mu_step), 12)
    worst_ratio, worst_at = 0.0, None
    for t in range(1, int(t_max) + 1):
        env = 2.0 * math.sqrt(t)
        for mu in mus:
            v = maurer_mgf_exact(t, float(mu))
            if v / env > worst_ratio:
                worst_ratio, worst_at = v / env, (t, float(mu))
    t1 = [maurer_mgf_exact(1, float(mu)) for mu in mus]
    maurer = {"t_max": int(t_max), "max_ratio_to_envelope": worst_ratio, "argmax": list(worst_at),
              "t1_max_abs_error": max(abs(v - 2.0) for v in t1),
              "passed": worst_ratio <= 1.0 + 1e-12 and max(abs(v - 2.0) for v in t1) <= 1e-12}

    rng = trial_rng(seed, 0)
    worst_task, worst_sample = 0.0, 0.0
    for _ in range(int(catoni_instances)):
        n = int(rng.integers(1, 4))
        sizes = []
        while len(sizes) < n:
            sizes.append(int(rng.integers(1, 8)))
        while sum(sizes) > catoni_max_total:
            sizes[int(np.argmax(sizes))] -= 1
        mus_i = rng.uniform(0.0, 1.0, n)
        lam = float(np.exp(rng.uniform(math.log(0.1), math.log(50.0))))
        worst_task = max(worst_task, mgf_catoni_check(sizes, mus_i, lam))
        worst_sample = max(worst_sample, mgf_catoni_sample_check(sizes, mus_i, lam))
    catoni = {"instances": int(catoni_instances), "max_task_value": worst_task,
              "max_sample_value": worst_sample,
              "passed": worst_task <= 1.0 + 1e-12 and worst_sample <= 1.0 + 1e-12}

    sizes = tuple(int(m) for m in blowup_sizes)
    grow = [mgf_unbalanced_exact(MgfSpec(sizes, mu, blowup_lambda)) for mu in blowup_mus]
    m_min = min(sizes)
    tame = [mgf_unbalanced_exact(MgfSpec(sizes, mu, float(m_min))) for mu in blowup_mus]
    env = product_envelope(sizes)
    blowup = {"task_sizes": list(sizes), "lambda": float(blowup_lambda), "mus": [float(x) for x in blowup_mus],
             "values": grow, "threshold": float(blowup_threshold),
             "values_at_min_size": tame, "envelope": env,
             "passed": all(b > a for a, b in zip(grow, grow[1:])) and grow[-1] > blowup_threshold
             and all(v <= env for v in tame)}
    return {"maurer_envelope": maurer, "catoni": catoni, "unbalanced_blowup": blowup,
            "passed": maurer["passed"] and catoni["passed"] and blowup["passed"]}


def random_oracle_instance(rng: np.random.Generator, n: int):
    """Random constraint set (kl, Catoni or both) over n tasks for solver cross-checks."""
    from .bounds import build_task_catoni_constraint, build_task_kl_constraint

    m = rng.integers(5, 400, n)
    q = rng.uniform(0.0, 0.5, n)
    e = build_ensemble([(int(a), float(b)) for a, b in zip(m, q)])
    b = ComplexityBudget(delta=float(rng.uniform(0.01, 0.2)), total_kl=float(rng.uniform(0.0, 8.0)))
    lam = rng.uniform(0.2, 3.0, n) * e.n * e.harmonic_mean
    mode = int(rng.integers(0, 3))
    cs = []
    if mode in (0, 2):
        cs.append(build_task_kl_constraint(e, b))
    if mode in (1, 2):
        cs.append(build_task_catoni_constraint(e, b, lam))
    return e, cs


def oracle_campaign(dims=(1, 2, 3), instances: int = 50, step: float = 2e-4, tolerance: float = 1e-4,
                    seed: int = 0) -> dict:
    from .solver import maximize_joint

    rows = []
    for n in dims:
        for i in range(int(instances)):
            rng = trial_rng(seed, 1000 * int(n) + i)
            e, cs = random_oracle_instance(rng, int(n))
            rep = maximize_joint(cs)
            oracle = grid_oracle(cs, step=step)
            resid = max(float(c.value(rep.argmax) - c.budget_rhs) for c in cs)
            rows.append({"n": int(n), "index": i, "constraints": [c.kind.value for c in cs],
                         "solver": float(rep.upper), "oracle": float(oracle),
                         "difference": float(rep.upper - oracle), "max_residual": resid,
                         "passed": abs(rep.upper - oracle) <= tolerance and resid <= 1e-8})
    return {"step": step, "tolerance": tolerance, "instances": rows,
            "max_abs_difference": max(abs(r["difference"]) for r in rows),
            "passed": all(r["passed"] for r in rows)}


def coverage_campaign(families=COVERAGE_FAMILIES, trials: int = 2000, seed: int = 42,
                      generator: GeneratorConfig | None = None, workers: int = 1) -> dict:
    cfg = generator or GeneratorConfig()
    reports = [coverage_test(cfg, f, trials, seed, workers=workers) for f in families]
    return {"reports": [r.to_dict() for r in reports], "passed": all(r.passed for r in reports)}
