"""Bernoulli KL divergence, the Catoni transform and their scalar inverses.

Everything here is pure and works on Python floats; the ``*_vec`` variants
are numpy versions used by the solver on whole risk vectors.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "check_prob",
    "kl_bernoulli",
    "kl_inv_upper",
    "kl_inv_lower",
    "phi",
    "phi_inv",
    "kl_vec",
    "kl_grad_vec",
]

MAX_BISECT = 200
ONE_MINUS_EPS = math.nextafter(1.0, 0.0)


def check_prob(x: float, name: str = "value") -> float:
    x = float(x)
    if not (0.0 <= x <= 1.0):  # also rejects NaN
        raise ValueError(f"{name} must lie in [0, 1], got {x!r}")
    return x


def _check_budget(budget: float) -> float:
    budget = float(budget)
    if not budget >= 0.0:
        raise ValueError(f"budget must be >= 0, got {budget!r}")
    return budget


def _xlog_ratio(x: float, y: float) -> float:
    """x * ln(x / y) with 0 ln 0 = 0 and x ln(x / 0) = +inf."""
    if x == 0.0:
        return 0.0
    if y == 0.0:
        return math.inf
    return x * math.log(x / y)


def _log_ratio(x: float, y: float, diff: float | None = None) -> float:
    """ln(x / y) for x, y > 0; log1p form when x is close to y."""
    d = (x - y) if diff is None else diff
    r = d / y
    if abs(r) <= 0.5:
        return math.log1p(r)
    return math.log(x) - math.log(y)


def kl_bernoulli(q: float, p: float) -> float:
    """kl(q|p) between Bernoulli(q) and Bernoulli(p), in nats.

    Returns ``inf`` when p sits on the boundary and q does not.
    """
    q = check_prob(q, "q")
    p = check_prob(p, "p")
    if q == p:
        return 0.0
    if 0.0 < p < 1.0:
        a = 0.0 if q == 0.0 else q * _log_ratio(q, p)
        b = 0.0 if q == 1.0 else (1.0 - q) * _log_ratio(1.0 - q, 1.0 - p, p - q)
        val = a + b
    else:
        val = _xlog_ratio(q, p) + _xlog_ratio(1.0 - q, 1.0 - p)
    return max(val, 0.0)


def kl_inv_upper(q: float, budget: float) -> float:
    """Largest p in [q, 1] with kl(q|p) <= budget.

    Bisection runs until the bracket collapses in floating point; the
    returned point is the upper end of the final bracket, so it never sits
    below the exact supremum by more than one ulp.
    """
    q = check_prob(q, "q")
    budget = _check_budget(budget)
    if budget == 0.0 or q == 1.0:
        return q
    if math.isinf(budget) or kl_bernoulli(q, ONE_MINUS_EPS) <= budget:
        return 1.0
    lo, hi = q, ONE_MINUS_EPS
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if kl_bernoulli(q, mid) <= budget:
            lo = mid
        else:
            hi = mid
    return hi


def kl_inv_lower(q: float, budget: float) -> float:
    """Smallest p in [0, q] with kl(q|p) <= budget."""
    q = check_prob(q, "q")
    budget = _check_budget(budget)
    if budget == 0.0 or q == 0.0:
        return q
    if math.isinf(budget):
        return 0.0
    lo, hi = 0.0, q
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if kl_bernoulli(q, mid) <= budget:
            hi = mid
        else:
            lo = mid
    return lo


def phi(a: float, p: float) -> float:
    """Catoni transform -(1/a) ln(1 - p + p e^{-a}); lies in [0, p]."""
    a = float(a)
    if not a > 0.0:
        raise ValueError(f"a must be > 0, got {a!r}")
    p = check_prob(p, "p")
    if p == 0.0:
        return 0.0
    if p == 1.0:
        return 1.0
    x = -math.expm1(-a)
    if p * x <= 0.5:
        val = -math.log1p(-p * x) / a
    else:
        # ln((1-p) + p e^{-a}) without forming 1 - p*x
        val = -np.logaddexp(math.log1p(-p), math.log(p) - a) / a
    return min(max(float(val), 0.0), p)


def phi_inv(a: float, target: float) -> float:
    """The p in [0, 1] with phi(a, p) = target.

    Closed form (1 - e^{-a t}) / (1 - e^{-a}), followed by a short bisection
    polish when the closed form's residual is not at rounding level.
    """
    a = float(a)
    if not a > 0.0:
        raise ValueError(f"a must be > 0, got {a!r}")
    t = check_prob(target, "target")
    if t == 0.0 or t == 1.0:
        return t
    p = math.expm1(-a * t) / math.expm1(-a)
    p = min(max(p, 0.0), 1.0)
    if abs(phi(a, p) - t) <= 1e-13 * max(t, 1e-300):
        return p
    lo, hi = 0.0, 1.0
    for _ in range(MAX_BISECT):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if phi(a, mid) <= t:
            lo = mid
        else:
            hi = mid
    return hi


# -- numpy versions ---------------------------------------------------------


def kl_vec(q, p) -> np.ndarray:
    """Elementwise kl(q|p) with the same boundary conventions as kl_bernoulli."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    q, p = np.broadcast_arrays(q, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(q > 0.0, q * (np.log(q) - np.log(p)), 0.0)
        b = np.where(q < 1.0, (1.0 - q) * (np.log1p(-q) - np.log1p(-p)), 0.0)
        # precise branch for interior p
        inner = (p > 0.0) & (p < 1.0)
        ra = (q - p) / np.where(inner, p, 1.0)
        rb = (p - q) / np.where(inner, 1.0 - p, 1.0)
        la = np.where(np.abs(ra) <= 0.5, np.log1p(ra), np.log(q) - np.log(p))
        lb = np.where(np.abs(rb) <= 0.5, np.log1p(rb), np.log1p(-q) - np.log1p(-p))
        a_in = np.where(q > 0.0, q * la, 0.0)
        b_in = np.where(q < 1.0, (1.0 - q) * lb, 0.0)
    out = np.where(inner, a_in + b_in, a + b)
    out = np.where(q == p, 0.0, out)
    return np.maximum(out, 0.0)


def kl_grad_vec(q, p) -> np.ndarray:
    """d kl(q|p) / dp = (p - q) / (p (1 - p)); +-inf at the boundary."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (p - q) / (p * (1.0 - p))
    g = np.where((p == 0.0) & (q == 0.0), 1.0, g)
    g = np.where((p == 1.0) & (q == 1.0), -1.0, g)
    return g
