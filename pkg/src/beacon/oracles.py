"""Brute-force grid oracles for the projection and q-subproblem solvers.

These never call the closed-form code paths they are used to check. A
fixed-sum feasible set ``{lo <= x <= hi, sum(x) = budget}`` is searched by
enumerating the first ``N - 1`` coordinates on a grid and setting the last
from the budget; the search is refined coarse-to-fine around the incumbent
until the grid step reaches ``final_step``.
"""

from __future__ import annotations

import itertools

import numpy as np

def _axis(center, half, step, lo, hi):
    pts = center + step * np.arange(-half, half + 1)
    pts = pts[(pts >= lo - 1e-12) & (pts <= hi + 1e-12)]
    return np.clip(pts, lo, hi) if pts.size else np.array([np.clip(center, lo, hi)])


def grid_minimize_fixed_sum(f, lo, hi, budget, final_step=1e-4, points=9, penalty=1e3):
    """Minimize a vectorized ``f`` (rows are candidate points) on the fixed-sum
    box. Returns the best point found.

    The last coordinate is ``clip(budget - sum(free), lo, hi)`` and any
    remaining residual is charged ``penalty * |residual|``; with ``penalty``
    above the slope of ``f`` this is an exact penalty and keeps the reduced
    problem convex.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    N = lo.size
    if N == 1:
        return np.array([budget], dtype=float)
    free = N - 1
    half = points // 2
    step = float(np.max(hi[:free] - lo[:free])) / (2 * half) or final_step
    center = 0.5 * (lo[:free] + hi[:free])

    def complete(grid):
        return np.column_stack([grid, np.clip(budget - grid.sum(axis=1), lo[-1], hi[-1])])

    best = np.inf
    while True:
        # re-center at this step until the incumbent stops improving
        for _ in range(1000):
            axes = [_axis(center[i], half, step, lo[i], hi[i]) for i in range(free)]
            grid = np.array(list(itertools.product(*axes))) if free > 1 else axes[0][:, None]
            cand = complete(grid)
            score = f(cand) + penalty * np.abs(budget - cand.sum(axis=1))
            j = int(np.argmin(score))
            if score[j] >= best:
                break
            best, center = score[j], grid[j]
        if step <= final_step:
            break
        step = max(step * 2.0 / half, final_step) if half > 1 else step / 2.0
    return complete(center[None, :])[0]


def grid_project_box_sum(v, lo, hi, budget, final_step=1e-4):
    v = np.asarray(v, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), v.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), v.shape)
    return grid_minimize_fixed_sum(lambda X: ((X - v) ** 2).sum(axis=1), lo, hi, budget, final_step)


def grid_project_simplex(v, final_step=1e-4):
    v = np.asarray(v, dtype=float)
    return grid_project_box_sum(v, np.zeros(v.size), np.ones(v.size), 1.0, final_step)


def q_objective_rows(Q, c, p0, lambda_1, lambda_2, cap):
    """Objective of the q-subproblem evaluated row-wise."""
    return Q @ c + cap * Q.max(axis=1) + lambda_1 * np.abs(Q - p0).sum(axis=1) + lambda_2 * (Q * Q).sum(axis=1)


def grid_q_subproblem(c, p0, lo, hi, budget, lambda_1, lambda_2, cap, final_step=1e-3):
    c = np.asarray(c, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), c.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=float), c.shape)
    return grid_minimize_fixed_sum(
        lambda Q: q_objective_rows(Q, c, p0, lambda_1, lambda_2, cap), lo, hi, budget, final_step, points=13
    )


def random_box_sum_instance(rng, max_len=6):
    """Random feasible projection instance with entries in [-3, 3]."""
    N = int(rng.integers(1, max_len + 1))
    v = rng.uniform(-3, 3, N)
    lo = rng.uniform(-3, 0, N) if rng.random() < 0.5 else np.zeros(N)
    hi = lo + rng.uniform(0.5, 3, N)
    budget = float(rng.uniform(lo.sum(), hi.sum()))
    return v, lo, hi, budget


def check_projections(instances: int = 200, seed: int = 0) -> dict:
    """Max L-infinity error of both projections against the grid oracle."""
    from beacon.proximal import BoxSumSpec, project_box_sum, project_simplex

    rng = np.random.default_rng(seed)
    simplex_err = 0.0
    for _ in range(instances):
        v = rng.uniform(-3, 3, int(rng.integers(1, 6)))
        simplex_err = max(simplex_err, float(np.max(np.abs(project_simplex(v) - grid_project_simplex(v)))))
    box_err = 0.0
    for _ in range(instances):
        v, lo, hi, budget = random_box_sum_instance(rng)
        got = project_box_sum(v, BoxSumSpec(lo, hi, budget))
        box_err = max(box_err, float(np.max(np.abs(got - grid_project_box_sum(v, lo, hi, budget)))))
    return {"instances": instances, "simplex_max_err": simplex_err, "box_sum_max_err": box_err}
