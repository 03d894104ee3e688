"""Weight updates for the per-sample weights q.

The q-subproblem at fixed predictor parameters is

    sum_i q_i (loss_i + lambda_d d_i) + gamma R ||q||_inf
        + lambda_1 ||q - p0||_1 + lambda_2 ||q||_2^2

over ``lo_i <= q_i <= q_max`` and ``sum(q) = n + alpha m``. Two solvers are
provided: a stochastic projected-subgradient sweep (the default) and an exact
convex solve that treats ``t = ||q||_inf`` as an outer variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from beacon.core import HyperParams, WeightState
from beacon.proximal import BoxSumSpec, InfeasibleError, project_box_sum, project_simplex, soft_threshold, ternary_search_min

ARGMAX_TOL = 1e-12
SPLIT_EPS = 1e-8


def full_d(d, n_total: int) -> np.ndarray:
    """Pad source discrepancies with zeros for the target entries."""
    d = np.asarray(d, dtype=float)
    out = np.zeros(n_total)
    out[: d.size] = d
    return out


def argmax_set(q) -> np.ndarray:
    q = np.asarray(q)
    return np.flatnonzero(q >= q.max() - ARGMAX_TOL)


def objective(q, losses, d, p0, hp: HyperParams, complexity: float) -> float:
    """Value of the joint objective for fixed losses and R(theta)."""
    q = np.asarray(q, dtype=float)
    c = np.asarray(losses) + hp.lambda_d * full_d(d, q.size)
    return float(
        q @ c
        + hp.gamma * q.max() * complexity
        + hp.lambda_1 * np.abs(q - p0).sum()
        + hp.lambda_2 * (q @ q)
    )


def q_subgradient(i, loss_i, d_i, q: WeightState, hp: HyperParams, R_theta: float, argmax) -> float:
    """Subgradient of the objective in coordinate ``i``; sign(0) is 0.

    Terms are summed with ``math.fsum`` so the result is correctly rounded.
    """
    qi = q.q[i]
    top = np.atleast_1d(argmax)
    in_max = 1.0 if i in set(top.tolist()) else 0.0
    return math.fsum(
        [
            loss_i,
            hp.lambda_d * d_i,
            hp.gamma * R_theta * in_max / len(top),
            hp.lambda_1 * float(np.sign(qi - q.p0[i])),
            2.0 * hp.lambda_2 * qi,
        ]
    )


def _batch_subgradient(idx, q, p0, c, hp: HyperParams, complexity: float) -> np.ndarray:
    top = q >= q.max() - ARGMAX_TOL
    cap = hp.gamma * complexity * top[idx] / top.sum()
    return c[idx] + cap + hp.lambda_1 * np.sign(q[idx] - p0[idx]) + 2.0 * hp.lambda_2 * q[idx]


def box_sum_spec(state: WeightState) -> BoxSumSpec:
    return BoxSumSpec(lo=state.lo, hi=state.hi, budget=state.budget)


def project_weights(state: WeightState) -> WeightState:
    out = state.copy()
    out.q = project_box_sum(state.q, box_sum_spec(state))
    return out


def minibatches(order, batch_size: int) -> list[np.ndarray]:
    order = np.asarray(order)
    return [order[s : s + batch_size] for s in range(0, order.size, batch_size)]


def q_sweep_stochastic(
    state: WeightState,
    losses,
    d,
    hp: HyperParams,
    rng: np.random.Generator | None = None,
    batches: list[np.ndarray] | None = None,
    complexity: float = 0.0,
) -> WeightState:
    """One sequential sweep of clipped subgradient steps, then one global
    box-and-sum projection.

    ``batches`` fixes the sweep order; otherwise a shuffled order of
    ``hp.batch_size`` chunks is drawn from ``rng``. The argmax set is taken
    from the current weights at the start of every minibatch.
    """
    box_sum_spec(state).check(state.q.size)
    q = state.q.copy()
    c = np.asarray(losses, dtype=float) + hp.lambda_d * full_d(d, q.size)
    if batches is None:
        order = rng.permutation(q.size) if rng is not None else np.arange(q.size)
        batches = minibatches(order, hp.batch_size)
    for idx in batches:
        g = _batch_subgradient(idx, q, state.p0, c, hp, complexity)
        q[idx] = np.minimum(np.maximum(q[idx] - hp.eta_q * g, state.lo[idx]), hp.q_max)
    out = state.copy()
    out.q = q
    return project_weights(out)


@dataclass
class ConvexSolution:
    q: np.ndarray
    t: float
    nu: float
    value: float


def _sum_multiplier(c, p0, lo, up, budget, lambda_1, lambda_2):
    """Multiplier ``nu`` and weights solving the box-constrained separable
    problem with ``sum(q) = budget``, by bisection to float precision."""
    tau = lambda_1 / (2.0 * lambda_2)
    z = -c / (2.0 * lambda_2)

    def weights(nu):
        return np.clip(p0 + soft_threshold(z + nu / (2.0 * lambda_2) - p0, tau), lo, up)

    a = 2.0 * lambda_2 * float(np.min(lo - tau - z)) - 1.0
    b = 2.0 * lambda_2 * float(np.max(up + tau - z)) + 1.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        if not a < mid < b:
            break
        if weights(mid).sum() < budget:
            a = mid
        else:
            b = mid
    # sum(weights) is piecewise linear in nu; interpolate across the bracket
    sa, sb = weights(a).sum(), weights(b).sum()
    nu = b if sb == sa else a + (budget - sa) * (b - a) / (sb - sa)
    nu = min(max(nu, a), b)
    return nu, weights(nu)


def solve_q_subproblem(
    losses,
    d,
    p0,
    lo,
    hi: float,
    budget: float,
    hp: HyperParams,
    complexity: float = 0.0,
    t: float | None = None,
) -> ConvexSolution:
    """Exact minimizer of the q-subproblem.

    For fixed ``t`` the problem separates into soft-thresholded, clipped
    coordinates coupled only through the sum constraint; the outer convex
    problem in ``t`` is solved by ternary search over
    ``[max(budget / N, max(lo)), hi]``.
    """
    if hp.lambda_2 <= 0:
        raise ValueError("the closed-form q solve requires lambda_2 > 0")
    losses = np.asarray(losses, dtype=float)
    N = losses.size
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (N,))
    p0 = np.asarray(p0, dtype=float)
    BoxSumSpec(lo, hi, budget).check(N)
    c = losses + hp.lambda_d * full_d(d, N)
    cap = hp.gamma * complexity

    def inner(tv):
        nu, q = _sum_multiplier(c, p0, lo, np.full(N, tv), budget, hp.lambda_1, hp.lambda_2)
        val = q @ c + hp.lambda_1 * np.abs(q - p0).sum() + hp.lambda_2 * (q @ q)
        return nu, q, val

    if t is None:
        t_lo = max(budget / N, float(lo.max()))
        if t_lo >= hi:
            t = float(hi)
        else:
            scale = max(1.0, hi)
            t, _ = ternary_search_min(lambda tv: inner(tv)[2] + cap * tv, t_lo, float(hi), tol=1e-13 * scale)
    elif not float(lo.max()) <= t <= hi or N * t < budget * (1 - 1e-12):
        raise InfeasibleError(f"t={t:g} cannot carry the budget")
    nu, q, val = inner(t)
    return ConvexSolution(q=q, t=float(t), nu=float(nu), value=float(val + cap * t))


def q_solve_convex(
    losses, d, state: WeightState, hp: HyperParams, complexity: float = 0.0, t: float | None = None
) -> WeightState:
    """Closed-form alternative to the stochastic sweep; returns the exact
    minimizer over the feasible set of ``state``."""
    sol = solve_q_subproblem(
        losses, d, state.p0, state.lo, float(np.max(state.hi)), state.budget, hp, complexity, t
    )
    out = state.copy()
    out.q = sol.q
    return out


# -- multi-source factorization q_i = w_{s(i)} * q_tilde_i -------------------


@dataclass
class DomainWeights:
    w: np.ndarray
    assignment: np.ndarray
    w0: np.ndarray = field(default=None)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.assignment = np.asarray(self.assignment, dtype=int)
        if self.w0 is None:
            self.w0 = np.full(self.w.size, 1.0 / self.w.size)
        if np.any(self.w < 0) or abs(self.w.sum() - 1.0) > 1e-10:
            raise ValueError("domain weights must lie on the simplex")

    @classmethod
    def uniform(cls, K: int, assignment) -> DomainWeights:
        return cls(w=np.full(K, 1.0 / K), assignment=assignment)

    @property
    def K(self) -> int:
        return self.w.size

    def per_sample(self) -> np.ndarray:
        """w_{s(i)} for every source index."""
        return self.w[self.assignment]


@dataclass
class CompositeWeights:
    q_tilde: np.ndarray
    w: DomainWeights


def compose_weights(cw: CompositeWeights, template: WeightState | None = None) -> WeightState | np.ndarray:
    """Composite weights; a WeightState when ``template`` supplies bounds."""
    m = cw.w.assignment.size
    q = cw.q_tilde.astype(float).copy()
    q[:m] = cw.w.per_sample() * cw.q_tilde[:m]
    if template is None:
        return q
    out = template.copy()
    out.q = q
    return out


def split_back(q, w: DomainWeights, prev_q_tilde) -> np.ndarray:
    """Recover within-domain weights; domains with ``w_k < 1e-8`` keep their
    previous values."""
    q = np.asarray(q, dtype=float)
    out = q.copy()
    m = w.assignment.size
    ws = w.per_sample()
    alive = ws >= SPLIT_EPS
    out[:m] = np.where(alive, q[:m] / np.where(alive, ws, 1.0), np.asarray(prev_q_tilde)[:m])
    return out


def w_gradient(w: DomainWeights, q_tilde, losses, d, hp: HyperParams, p0=None) -> np.ndarray:
    """Gradient in w of the multi-source objective, capacity term excluded.

    The lambda_1 and lambda_2 terms act on the composite weights and enter
    through the chain rule.
    """
    m = w.assignment.size
    qt = np.asarray(q_tilde, dtype=float)[:m]
    c = np.asarray(losses, dtype=float)[:m] + hp.lambda_d * np.asarray(d, dtype=float)[:m]
    p0_s = np.zeros(m) if p0 is None else np.asarray(p0, dtype=float)[:m]
    ws = w.per_sample()
    per_sample = qt * c + 2.0 * hp.lambda_2 * ws * qt * qt + hp.lambda_1 * qt * np.sign(ws * qt - p0_s)
    grad = np.bincount(w.assignment, weights=per_sample, minlength=w.K)
    return grad + hp.rho_1 * np.sign(w.w - w.w0) + 2.0 * hp.rho_2 * w.w


def w_step(w: DomainWeights, grad, eta_w: float) -> DomainWeights:
    return DomainWeights(w=project_simplex(w.w - eta_w * np.asarray(grad)), assignment=w.assignment, w0=w.w0)


def q_tilde_sweep(
    q_tilde,
    w: DomainWeights,
    state: WeightState,
    losses,
    d,
    hp: HyperParams,
    batches: list[np.ndarray],
    complexity: float = 0.0,
) -> np.ndarray:
    """One sweep of clipped subgradient steps on the within-domain weights.

    Coordinate subgradients are those of the composite objective scaled by
    ``w_{s(i)}``; sources step with ``eta_q`` and targets with ``eta_t``.
    Source weights are clipped so the composite stays within ``[0, q_max]``.
    """
    m = w.assignment.size
    qt = np.asarray(q_tilde, dtype=float).copy()
    N = qt.size
    c = np.asarray(losses, dtype=float) + hp.lambda_d * full_d(d, N)
    scale = np.ones(N)
    scale[:m] = w.per_sample()
    alive = scale >= SPLIT_EPS
    eta = np.full(N, hp.eta_target)
    eta[:m] = hp.eta_q
    upper = np.full(N, hp.q_max)
    upper[alive] = hp.q_max / scale[alive]
    for idx in batches:
        q = scale * qt
        g = _batch_subgradient(idx, q, state.p0, c, hp, complexity)
        step = qt[idx] - eta[idx] * scale[idx] * g
        qt[idx] = np.where(alive[idx], np.minimum(np.maximum(step, state.lo[idx]), upper[idx]), qt[idx])
    return qt
