"""Clipping, soft-thresholding and the two projections used by every weight
update: onto the probability simplex and onto a box intersected with a
fixed-sum hyperplane."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

BISECT_MAX_ITER = 200
BISECT_RTOL = 1e-8


class InfeasibleError(ValueError):
    pass


def clip(v, lo, hi):
    if np.any(np.asarray(lo) > np.asarray(hi)):
        raise ValueError("clip requires lo <= hi")
    return np.minimum(np.maximum(v, lo), hi)


def soft_threshold(u, tau):
    """sign(u) * max(|u| - tau, 0), elementwise."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(u) * np.maximum(np.abs(u) - tau, 0.0)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = 1} (sort-based)."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 1:
        return np.ones(1)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class BoxSumSpec:
    lo: np.ndarray
    hi: np.ndarray | float
    budget: float

    def bounds(self, size: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (size,))
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (size,))
        return lo, hi

    def check(self, size: int, tol: float = 1e-9) -> None:
        lo, hi = self.bounds(size)
        if np.any(lo > hi):
            raise InfeasibleError("lower bound exceeds upper bound")
        slack = tol * max(1.0, abs(self.budget))
        if lo.sum() > self.budget + slack or hi.sum() < self.budget - slack:
            raise InfeasibleError(
                f"budget {self.budget:g} outside [{lo.sum():g}, {hi.sum():g}]"
            )


def project_box_sum(v, spec: BoxSumSpec) -> np.ndarray:
    """Euclidean projection onto {lo <= q <= hi, sum(q) = budget}.

    The solution is ``clip(v - mu, lo, hi)`` for the multiplier ``mu`` that
    makes the sum hit the budget; ``mu`` is found by bisection on
    ``[min(v - hi), max(v - lo)]`` and then snapped exactly on the final
    linear piece.
    """
    v = np.asarray(v, dtype=float).ravel()
    spec.check(v.size)
    lo, hi = spec.bounds(v.size)
    budget = float(spec.budget)

    def total(mu):
        return np.minimum(np.maximum(v - mu, lo), hi).sum()

    a, b = float(np.min(v - hi)), float(np.max(v - lo))
    tol = BISECT_RTOL * max(1.0, abs(budget))
    mu = 0.5 * (a + b)
    for _ in range(BISECT_MAX_ITER):
        mu = 0.5 * (a + b)
        r = total(mu) - budget
        if abs(r) <= tol:
            break
        if r > 0:
            a = mu
        else:
            b = mu

    # sum is linear in mu on the current free set; solve that piece exactly
    free = (v - mu > lo) & (v - mu < hi)
    if free.any():
        fixed = np.where(v - mu <= lo, lo, hi)
        mu_exact = (v[free].sum() - (budget - fixed[~free].sum())) / free.sum()
        if abs(total(mu_exact) - budget) <= abs(total(mu) - budget):
            mu = mu_exact
    return np.minimum(np.maximum(v - mu, lo), hi)


def ternary_search_min(
    f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10, max_iter: int = 500
) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``.

    Ties keep the left point, so on a flat minimizing interval the result
    converges to its left end.
    """
    if not lo < hi:
        raise ValueError("ternary search needs lo < hi")
    a, b = float(lo), float(hi)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if not a < m1 < m2 < b:
            break
        if f(m1) <= f(m2):
            b = m2
        else:
            a = m1
    # the endpoints are never interior probe points; compare them explicitly
    cands = [a, 0.5 * (a + b), b]
    vals = [f(t) for t in cands]
    best = int(np.argmin(vals))
    return cands[best], vals[best]
