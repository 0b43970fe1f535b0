"""Maximize a weighted mean of risks over an intersection of risk constraints.

The problem ``max w.p  s.t.  g_k(p) <= b_k, p in [0,1]^n`` is separable
across coordinates for every constraint kind, so its Lagrangian dual is
cheap: for fixed multipliers each coordinate solves a scalar stationarity
equation. With one constraint that equation has a closed form and the
single multiplier is found by a bracketed root search; with several, the
dual is minimized by coordinate descent.

Every report carries the dual value, which upper-bounds the true supremum
whatever the solver's accuracy, and a primal point that is feasible by
construction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import RiskConstraint, task_catoni_constraint_raw
from .ensemble import Ensemble

__all__ = [
    "ObjectiveWeights",
    "SolveReport",
    "maximize_single_constraint",
    "maximize_joint",
    "maximize_catoni_multi",
]

FEAS_TOL = 1e-8
GAP_TOL = 1e-6
MAX_OUTER = 500
MAX_INNER = 200
NU_BRACKET = (1e-12, 1e12)


@dataclass(frozen=True, eq=False)
class ObjectiveWeights:
    values: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.values, dtype=float).reshape(-1)
        if w.size == 0 or np.any(~(w >= 0.0)):
            raise ValueError("weights must be a non-empty vector of nonnegative numbers")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {math.fsum(w)!r}")
        object.__setattr__(self, "values", w)

    @classmethod
    def uniform(cls, n: int) -> "ObjectiveWeights":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def by_samples(cls, e: Ensemble) -> "ObjectiveWeights":
        return cls(e.sample_counts / e.total_samples)

    def __len__(self):
        return self.values.size


@dataclass
class SolveReport:
    optimum: float
    argmax: np.ndarray
    dual_multipliers: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    dual_value: float
    boundary: bool = False
    feasible: bool = True
    wall_time: float = 0.0
    notes: list = field(default_factory=list)

    @property
    def duality_gap(self) -> float:
        return self.dual_value - self.optimum

    @property
    def upper(self) -> float:
        """Certified upper bound on the supremum, clamped to [0, 1]."""
        return min(max(self.dual_value, self.optimum), 1.0)

    @property
    def active_constraints(self) -> list[int]:
        return [k for k, r in enumerate(self.residuals) if r > -1e-7 and self.dual_multipliers[k] > 0]


def _weights(w, n: int) -> np.ndarray:
    if w is None:
        return np.full(n, 1.0 / n)
    if isinstance(w, ObjectiveWeights):
        w = w.values
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size != n:
        raise ValueError(f"weights have length {w.size}, constraints have dimension {n}")
    return w


# -- inner maximizers ---------------------------------------------------------


def _argmax_one(c: RiskConstraint, w: np.ndarray, nu: float) -> np.ndarray:
    """argmax_p  w.p - nu g(p)  for a single constraint (closed forms)."""
    if nu <= 0.0:
        p = np.where(w > 0.0, 1.0, c.empirical if c.is_kl else 0.0)
        return p.astype(float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if c.is_kl:
            m, q = c.counts, c.empirical
            r = w / nu
            # root of r p^2 + (m - r) p - m q = 0 in cancellation-free form;
            # near 1 use the smaller root u = 1 - p of r u^2 - (r + m) u + m (1 - q) = 0
            disc = np.hypot(r - m, 2.0 * np.sqrt(r * m * q))
            p_direct = np.where(m > r, 2.0 * m * q / ((m - r) + disc), ((r - m) + disc) / (2.0 * r))
            u = 2.0 * m * (1.0 - q) / ((r + m) + disc)
            u = np.where(np.isfinite(r), u, 0.0)
            p = np.where(np.isfinite(r) & (p_direct < 0.5), p_direct, 1.0 - u)
            return np.clip(p, 0.0, 1.0)
        x = -np.expm1(-c.rates)
        p = 1.0 / x - nu * c.counts / w
        p = np.where(w > 0.0, p, 0.0)
        return np.clip(p, 0.0, 1.0)


def _curvature(c: RiskConstraint, p: np.ndarray) -> np.ndarray:
    if c.is_kl:
        q = c.empirical
        with np.errstate(divide="ignore", invalid="ignore"):
            return c.counts * (q - 2.0 * p * q + p * p) / (p * (1.0 - p)) ** 2
    a = c.rates
    x = -np.expm1(-a)
    return c.counts * x * x / ((1.0 - p) + p * np.exp(-a)) ** 2


def _argmax_many(cs: Sequence[RiskConstraint], w: np.ndarray, nu: np.ndarray,
                 start: np.ndarray | None = None) -> np.ndarray:
    """argmax_p  w.p - sum_k nu_k g_k(p), coordinatewise.

    Solves the monotone stationarity equation sum_k nu_k g_k'(p) = w by
    Newton steps kept inside a shrinking bisection bracket.
    """
    active = [k for k in range(len(cs)) if nu[k] > 0.0]
    n = w.size
    if not active:
        return _argmax_one(cs[0], w, 0.0)
    if len(active) == 1:
        return _argmax_one(cs[active[0]], w, float(nu[active[0]]))

    def h(p):
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            tot = sum(nu[k] * cs[k].grad(p) for k in active)
        return tot - w

    def dh(p):
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            return sum(nu[k] * _curvature(cs[k], p) for k in active)

    lo = np.zeros(n)
    hi = np.ones(n)
    h_hi = h(hi)
    h_lo = h(lo)
    at_one = h_hi <= 0.0
    at_zero = h_lo >= 0.0
    p = np.clip(start, 1e-300, 1.0 - 1e-16) if start is not None else np.full(n, 0.5)
    p = np.where(at_one, 1.0, np.where(at_zero, 0.0, p))
    done = at_one | at_zero
    for _ in range(MAX_INNER):
        if done.all():
            break
        hv = h(p)
        pos = hv > 0.0
        hi = np.where(~done & pos, p, hi)
        lo = np.where(~done & ~pos, p, lo)
        with np.errstate(invalid="ignore", divide="ignore"):
            step = p - hv / dh(p)
        mid = 0.5 * (lo + hi)
        ok = np.isfinite(step) & (step > lo) & (step < hi)
        nxt = np.where(ok, step, mid)
        converged = (hv == 0.0) | (hi - lo <= 4e-16 * np.maximum(hi, 1e-300)) | (np.abs(nxt - p) <= 1e-17)
        done = done | converged
        p = np.where(done, p, nxt)
    return p


def _illinois(f, lo, f_lo, hi, f_hi, p_hi, tol_f, max_iter=MAX_INNER):
    """Bracketed root search for a decreasing f with f(lo) > 0 >= f(hi).

    Regula falsi with the Illinois modification, falling back to bisection
    when the interpolated point crowds a bracket end. Returns the feasible
    end ``hi`` (f(hi) <= 0), the inner point there and the iteration count.
    """
    fl, fh = f_lo, f_hi  # possibly down-weighted copies used for interpolation
    side = 0
    it = 0
    for it in range(1, max_iter + 1):
        if -f_hi <= tol_f or hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
        width = hi - lo
        t = hi - fh * width / (fh - fl)
        if not (lo + 0.01 * width < t < hi - 0.01 * width):
            t = 0.5 * (lo + hi)
        f_t, p_t = f(t)
        if f_t > 0.0:
            lo, f_lo, fl = t, f_t, f_t
            if side == -1:
                fh *= 0.5
            side = -1
        else:
            hi, f_hi, fh, p_hi = t, f_t, f_t, p_t
            if side == 1:
                fl *= 0.5
            side = 1
    return hi, p_hi, it


# -- single constraint ----------------------------------------------------------


def _feasible_anchor(cs: Sequence[RiskConstraint]) -> np.ndarray | None:
    """A point satisfying every constraint, or None if none is found."""
    cands = [cs[0].empirical.astype(float), np.zeros(cs[0].dimension)]
    for c in cs:
        if c.is_kl:
            cands.insert(0, c.empirical.astype(float))
    for p in cands:
        if all(c.residual(p) <= 0.0 for c in cs):
            return p
    return None


def _vacuous_report(K: int, n: int, t0: float, note: str) -> SolveReport:
    return SolveReport(optimum=1.0, argmax=np.ones(n), dual_multipliers=np.zeros(K),
                       residuals=np.full(K, np.nan), converged=False, iterations=0,
                       dual_value=1.0, feasible=False, wall_time=time.perf_counter() - t0,
                       notes=[note])


def _boundary(cs, p) -> bool:
    near_one = p >= 1.0 - 1e-9
    if not near_one.any():
        return False
    for c in cs:
        if c.is_kl and np.any(near_one & (c.empirical < 1.0)):
            return True
    return False


def maximize_single_constraint(c: RiskConstraint, w=None) -> SolveReport:
    """Exact maximization of w.p subject to one separable convex constraint."""
    t0 = time.perf_counter()
    w = _weights(w, c.dimension)
    b = c.budget_rhs

    p_free = _argmax_one(c, w, 0.0)
    g_free = c.value(p_free)
    if g_free <= b:
        return SolveReport(optimum=float(w @ p_free), argmax=p_free, dual_multipliers=np.zeros(1),
                           residuals=np.array([g_free - b]), converged=True, iterations=0,
                           dual_value=float(w @ p_free), wall_time=time.perf_counter() - t0)

    p_min = _argmax_one(c, np.zeros_like(w), 1.0)
    if c.value(p_min) > b:
        return _vacuous_report(1, c.dimension, t0, "constraint infeasible at its minimizer")

    def G(t):
        p = _argmax_one(c, w, math.exp(t))
        return c.value(p) - b, p

    def dG(p):
        # d g(p(nu)) / d ln(nu) = -sum g_i'^2 / g_i'' over unclamped coordinates
        interior = (p > 0.0) & (p < 1.0)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            gp = c.grad(p)
            terms = np.where(interior, gp * gp / _curvature(c, p), 0.0)
        return -float(np.sum(np.where(np.isfinite(terms), terms, 0.0)))

    tol_f = 1e-13 * max(1.0, abs(b))
    t_min, t_max = math.log(1e-300), math.log(1e300)
    lo, hi = -math.inf, math.inf
    f_lo = f_hi = math.nan
    p_hi = None
    t, it = 0.0, 0
    # safeguarded Newton in t = ln(nu); keeps f(lo) > 0 >= f(hi)
    for it in range(1, MAX_INNER + 1):
        f_t, p_t = G(t)
        if f_t > 0.0:
            lo, f_lo = t, f_t
        else:
            hi, f_hi, p_hi = t, f_t, p_t
            if -f_t <= tol_f:
                break
        if math.isfinite(lo) and math.isfinite(hi) and hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
        d = dG(p_t)
        t_new = math.nan
        if d < 0.0:
            step = -f_t / d
            if f_t > 0.0:
                # overshoot slightly so the iterates land on the feasible side
                step = 1.001 * step + 1e-13 * max(1.0, abs(t))
            t_new = t + step
        if math.isfinite(lo) and math.isfinite(hi):
            if not (lo < t_new < hi):
                t_new = 0.5 * (lo + hi)
        elif not math.isfinite(t_new) or abs(t_new - t) > 10.0:
            t_new = t + (10.0 if f_t > 0.0 else -10.0)
        if not (t_min <= t_new <= t_max):
            break
        t = t_new
    if p_hi is None:
        return _vacuous_report(1, c.dimension, t0, "no multiplier makes the constraint hold")

    nu = math.exp(hi)
    p = _argmax_one(c, w, nu)
    g = c.value(p)
    primal = float(w @ p)
    dual = primal - nu * (g - b)
    gap = dual - primal
    return SolveReport(optimum=primal, argmax=p, dual_multipliers=np.array([nu]),
                       residuals=np.array([g - b]), converged=bool(gap <= GAP_TOL and g - b <= FEAS_TOL),
                       iterations=it, dual_value=dual, boundary=_boundary([c], p),
                       wall_time=time.perf_counter() - t0)


# -- several constraints ----------------------------------------------------------


def _restore(cs, anchor: np.ndarray, p: np.ndarray) -> tuple[np.ndarray, int]:
    """Largest step from the feasible anchor toward p that keeps every constraint."""
    def feasible(x):
        return all(c.residual(x) <= 0.0 for c in cs)

    if feasible(p):
        return p, 0
    lo, hi = 0.0, 1.0
    it = 0
    for it in range(1, 101):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if feasible(anchor + mid * (p - anchor)):
            lo = mid
        else:
            hi = mid
    return anchor + lo * (p - anchor), it


def _dual_hessian(cs, w, nu, p) -> np.ndarray:
    """Hessian of the dual function via implicit differentiation of p(nu)."""
    interior = (p > 0.0) & (p < 1.0)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        grads = np.array([c.grad(p) for c in cs])
        curv = sum(nu[k] * _curvature(cs[k], p) for k in range(len(cs)) if nu[k] > 0.0)
        scale = np.where(interior & (curv > 0.0) & np.isfinite(curv), 1.0 / curv, 0.0)
    grads = np.where(np.isfinite(grads), grads, 0.0)
    return (grads * scale) @ grads.T


def maximize_joint(cs: Sequence[RiskConstraint], w=None, *, max_outer: int = MAX_OUTER,
                   gap_tol: float = GAP_TOL) -> SolveReport:
    """Maximize w.p over the intersection of several constraints.

    Minimizes the dual over the multipliers. Each outer iteration is one
    coordinate-descent sweep (every multiplier re-optimized in turn: either
    0, or the value at which its constraint becomes tight) followed by a
    projected Newton step with backtracking, which removes the zig-zagging
    plain coordinate descent shows when two constraints are active together.
    The feasible primal point is recovered by backtracking from the current
    Lagrangian maximizer toward a known feasible anchor.
    """
    t0 = time.perf_counter()
    cs = list(cs)
    if not cs:
        raise ValueError("need at least one constraint")
    n = cs[0].dimension
    if any(c.dimension != n for c in cs):
        raise ValueError("all constraints must share one dimension")
    w = _weights(w, n)
    K = len(cs)
    if K == 1:
        return maximize_single_constraint(cs[0], w)

    singles = [maximize_single_constraint(c, w) for c in cs]
    best_single = min(s.dual_value for s in singles)
    anchor = _feasible_anchor(cs)
    if anchor is None:
        return _vacuous_report(K, n, t0, "no feasible anchor point")
    b = np.array([c.budget_rhs for c in cs])

    def dual_at(nu_vec, start=None):
        pp = _argmax_many(cs, w, nu_vec, start=start)
        g = np.array([c.value(pp) for c in cs])
        on = nu_vec > 0.0  # skip 0 * inf from constraints that are switched off
        return float(w @ pp - nu_vec[on] @ (g[on] - b[on])), pp, g

    nu = np.zeros(K)
    k0 = int(np.argmin([s.dual_value for s in singles]))
    nu[k0] = singles[k0].dual_multipliers[0]
    dual, p, g = dual_at(nu)

    best = (-math.inf, anchor)
    it = 0
    converged = False
    for _ in range(max_outer):
        # coordinate-descent sweep
        for k in range(K):
            it += 1
            trial = nu.copy()
            trial[k] = 0.0
            p0 = _argmax_many(cs, w, trial, start=p)
            if cs[k].value(p0) <= b[k]:
                nu, p = trial, p0
                continue

            def f(t, _k=k, _trial=trial):
                _trial[_k] = math.exp(t)
                pp = _argmax_many(cs, w, _trial, start=p)
                return cs[_k].value(pp) - b[_k], pp

            base = nu[k] if nu[k] > 0.0 else singles[k].dual_multipliers[0]
            t_mid = math.log(base) if base > 0.0 else 0.0
            f_mid, p_mid = f(t_mid)
            step = 1.0
            if f_mid > 0.0:
                lo, f_lo = t_mid, f_mid
                hi, (f_hi, p_hi) = t_mid + step, f(t_mid + step)
                while f_hi > 0.0 and hi < 80.0:
                    step *= 2.0
                    lo, f_lo = hi, f_hi
                    hi = hi + step
                    f_hi, p_hi = f(hi)
            else:
                hi, f_hi, p_hi = t_mid, f_mid, p_mid
                lo, (f_lo, _) = t_mid - step, f(t_mid - step)
                while f_lo <= 0.0 and lo > -80.0:
                    step *= 2.0
                    hi, f_hi, p_hi = lo, f_lo, _
                    lo = lo - step
                    f_lo, _ = f(lo)
            if f_hi > 0.0 or f_lo <= 0.0:
                nu[k] = math.exp(hi)
                p = _argmax_many(cs, w, nu, start=p_hi)
                continue
            hi, p_hi, extra = _illinois(f, lo, f_lo, hi, f_hi, p_hi, 1e-13 * max(1.0, abs(b[k])), 100)
            it += extra
            nu[k] = math.exp(hi)
            p = _argmax_many(cs, w, nu, start=p_hi)

        dual, p, g = dual_at(nu, start=p)
        # projected Newton step on the dual: gradient b - g, Hessian from p(nu)
        for _newton in range(20):
            grad = b - g
            free = (nu > 0.0) | (grad < 0.0)
            if not free.any():
                break
            H = _dual_hessian(cs, w, nu, p)[np.ix_(free, free)]
            try:
                d_free = -np.linalg.solve(H + 1e-14 * np.trace(H) * np.eye(H.shape[0]), grad[free])
            except np.linalg.LinAlgError:
                break
            d = np.zeros(K)
            d[free] = d_free
            alpha = 1.0
            improved = False
            for _ls in range(30):
                cand = np.maximum(nu + alpha * d, 0.0)
                d_c, p_c, g_c = dual_at(cand, start=p)
                if d_c <= dual - 1e-4 * alpha * abs(grad @ (cand - nu)) or d_c < dual:
                    nu, dual, p, g = cand, d_c, p_c, g_c
                    improved = True
                    break
                alpha *= 0.5
            it += 1
            if not improved:
                break
            x_pt, _ = _restore(cs, anchor, p)
            if min(dual, best_single) - float(w @ x_pt) <= 0.01 * gap_tol:
                break

        x_pt, _ = _restore(cs, anchor, p)
        primal = float(w @ x_pt)
        if primal > best[0]:
            best = (primal, x_pt)
        if min(dual, best_single) - best[0] <= gap_tol:
            converged = True
            break

    primal, p_feas = best
    # any single-constraint dual value is also a valid upper bound
    upper = min(dual, best_single)
    residuals = np.array([c.value(p_feas) - c.budget_rhs for c in cs])
    return SolveReport(optimum=primal, argmax=p_feas, dual_multipliers=nu, residuals=residuals,
                       converged=converged and bool(np.all(residuals <= FEAS_TOL)), iterations=it,
                       dual_value=max(upper, primal), boundary=_boundary(cs, p_feas),
                       wall_time=time.perf_counter() - t0)


def maximize_catoni_multi(e: Ensemble, q, budget: float, lambdas) -> SolveReport:
    """sup of mean(p) under the multi-task Catoni constraint with an additive budget.

    Uses the ensemble's sample counts with the given empirical risks ``q``.
    """
    c = task_catoni_constraint_raw(e.sample_counts, q, budget, lambdas)
    return maximize_single_constraint(c, ObjectiveWeights.uniform(e.n))
