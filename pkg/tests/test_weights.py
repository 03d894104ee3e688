import numpy as np
import pytest

from beacon.core import HyperParams, WeightState
from beacon.oracles import grid_q_subproblem
from beacon.proximal import project_box_sum, BoxSumSpec
from beacon.weights import (
    CompositeWeights,
    DomainWeights,
    argmax_set,
    compose_weights,
    objective,
    project_weights,
    q_solve_convex,
    q_subgradient,
    q_sweep_stochastic,
    q_tilde_sweep,
    solve_q_subproblem,
    split_back,
    w_gradient,
    w_step,
)

ZERO = dict(lambda_1=0.0, lambda_2=0.0, lambda_d=0.0, gamma=0.0, rho_1=0.0, rho_2=0.0)
HAND_LOSSES = np.array([0.4, 0.1, 0.05])
HAND_D = np.array([1.0, 0.2])


def state_with(q, p0, hp=None):
    hp = hp or HyperParams()
    q, p0 = np.asarray(q, dtype=float), np.asarray(p0, dtype=float)
    return WeightState(q=q, p0=p0, lo=np.zeros(q.size), hi=hp.q_max, budget=float(q.sum()))


def test_subgradient_worked_example():
    hp = HyperParams(lambda_d=0.1, lambda_1=0.01, lambda_2=0.01)
    ws = state_with([0.5, 1.0], [0.0, 0.0])
    assert q_subgradient(0, 0.2, 1.0, ws, hp, R_theta=3.0, argmax=[1]) == 0.32


def test_subgradient_only_loss():
    hp = HyperParams(**ZERO)
    ws = state_with([0.7, 0.2], [0.1, 0.0])
    assert q_subgradient(0, 0.37, 2.0, ws, hp, R_theta=5.0, argmax=[0]) == 0.37


def test_subgradient_sign_zero_at_reference():
    hp = HyperParams(lambda_1=0.5, lambda_2=0.0, lambda_d=0.0, gamma=0.0)
    ws = state_with([0.25, 0.3], [0.25, 0.0])
    assert q_subgradient(0, 0.1, 0.0, ws, hp, R_theta=0.0, argmax=[1]) == 0.1


def test_subgradient_argmax_share():
    hp = HyperParams(**{**ZERO, "gamma": 1.0})
    ws = state_with([1.0, 1.0, 0.5], [0.0, 0.0, 0.0])
    assert list(argmax_set(ws.q)) == [0, 1]
    assert q_subgradient(0, 0.0, 0.0, ws, hp, R_theta=2.0, argmax=argmax_set(ws.q)) == 1.0


def test_sweep_zero_step_only_projects():
    hp = HyperParams(eta_q=1e-300)
    ws = WeightState.initial(3, 2, hp)
    ws.q = np.array([3.0, 0.0, 1.0, 0.3, 0.2])
    out = q_sweep_stochastic(ws, np.ones(5), np.ones(3), hp, batches=[np.arange(5)])
    assert np.allclose(out.q, project_weights(ws).q, atol=1e-12)


def test_sweep_symmetry():
    hp = HyperParams(lambda_1=0.0)
    ws = project_weights(WeightState.initial(4, 3, hp))
    out = q_sweep_stochastic(ws, np.full(7, 0.3), np.full(4, 0.5), hp, rng=np.random.default_rng(0))
    assert np.ptp(out.q[:4]) <= 1e-12 and np.ptp(out.q[4:]) <= 1e-12


def test_sweep_feasible_after_every_call(rng):
    hp = HyperParams(eta_q=0.5, gamma=0.1)
    ws = project_weights(WeightState.initial(30, 6, hp))
    for _ in range(20):
        ws = q_sweep_stochastic(ws, rng.uniform(0, 2, 36), rng.uniform(0, 3, 30), hp, rng=rng, complexity=4.0)
        assert ws.violations() == []
        assert ws.q[30:].min() >= hp.q_t_min - 1e-12


def _three_sample_sweeps(sweeps):
    hp = HyperParams()
    ws = project_weights(WeightState.initial(2, 1, hp))
    for _ in range(sweeps):
        ws = q_sweep_stochastic(ws, HAND_LOSSES, HAND_D, hp, batches=[np.arange(3)])
    c = HAND_LOSSES + hp.lambda_d * np.r_[HAND_D, 0.0]
    oracle = grid_q_subproblem(c, ws.p0, ws.lo, hp.q_max, ws.budget, hp.lambda_1, hp.lambda_2, 0.0)
    return np.max(np.abs(ws.q - oracle))


@pytest.mark.xfail(
    strict=True,
    reason="at eta_q = 0.01 fifty sweeps move each weight by at most about 0.25; see test below",
)
def test_three_sample_sweep_converges_in_fifty_sweeps():
    assert _three_sample_sweeps(50) <= 1e-2


def test_three_sample_sweep_converges_given_enough_sweeps():
    assert _three_sample_sweeps(4000) <= 1e-2


def test_convex_symmetric_instance():
    hp = HyperParams(lambda_1=0.0, lambda_d=0.0, gamma=0.0)
    sol = solve_q_subproblem(np.zeros(3), np.zeros(1), np.array([0, 0.5, 0.5]), 0.0, 5.0, 1.5, hp, t=5.0)
    assert np.allclose(sol.q, 0.5, atol=1e-12)


def test_convex_hand_instance():
    hp = HyperParams(lambda_d=0.1, lambda_1=0.01, lambda_2=0.01, gamma=0.0)
    p0 = np.array([0.0, 0.0, 1.0])
    sol = solve_q_subproblem(HAND_LOSSES, HAND_D, p0, 0.0, 5.0, 2.0, hp, t=5.0)
    assert np.allclose(sol.q, [0, 0, 2], atol=1e-9)
    assert sol.nu == pytest.approx(0.10, abs=1e-9)
    # closed-form re-evaluation: z = (-25, -6, -2.5), shift 5, threshold 0.5
    z = -(HAND_LOSSES + 0.1 * np.r_[HAND_D, 0.0]) / 0.02
    assert np.allclose(z, [-25, -6, -2.5])
    u = z + sol.nu / 0.02 - p0
    again = np.clip(p0 + np.sign(u) * np.maximum(np.abs(u) - 0.5, 0), 0, 5)
    assert np.allclose(again, [0, 0, 2], atol=1e-9)
    free = solve_q_subproblem(HAND_LOSSES, HAND_D, p0, 0.0, 5.0, 2.0, hp)
    assert np.allclose(free.q, [0, 0, 2], atol=1e-3)


def test_convex_requires_lambda_2():
    with pytest.raises(ValueError):
        solve_q_subproblem(np.ones(2), np.ones(1), np.array([0, 1.0]), 0.0, 5.0, 1.0, HyperParams(lambda_2=0.0))


def test_convex_beats_random_feasible_points(rng):
    for _ in range(20):
        hp = HyperParams(gamma=rng.uniform(0, 0.5))
        ws = WeightState.initial(4, 3, hp)
        losses, d, R = rng.uniform(0, 1, 7), rng.uniform(0, 2, 4), rng.uniform(0, 2)
        best = q_solve_convex(losses, d, ws, hp, R)
        assert best.violations() == []
        f = objective(best.q, losses, d, ws.p0, hp, R)
        for _ in range(50):
            other = project_box_sum(rng.uniform(0, 3, 7), BoxSumSpec(ws.lo, ws.hi, ws.budget))
            assert f <= objective(other, losses, d, ws.p0, hp, R) + 1e-9


def test_convex_matches_grid_oracle(rng):
    for _ in range(5):
        hp = HyperParams(lambda_2=rng.uniform(0.05, 0.5), gamma=1.0)
        ws = WeightState.initial(2, 2, hp)
        losses, d, R = rng.uniform(0, 1, 4), rng.uniform(0, 2, 2), rng.uniform(0, 0.5)
        got = q_solve_convex(losses, d, ws, hp, R).q
        c = losses + hp.lambda_d * np.r_[d, 0, 0]
        want = grid_q_subproblem(c, ws.p0, ws.lo, hp.q_max, ws.budget, hp.lambda_1, hp.lambda_2, R)
        assert np.max(np.abs(got - want)) <= 1e-2


def test_w_gradient_hand_step():
    hp = HyperParams(lambda_1=0.0, lambda_2=0.0, rho_1=0.0, rho_2=0.0, lambda_d=0.1)
    dw = DomainWeights(np.array([0.5, 0.5]), np.array([0, 1]))
    g = w_gradient(dw, np.array([1.0, 1.0, 1.0]), np.array([0.5, 0.1, 0.0]), np.zeros(2), hp)
    assert np.allclose(g, [0.5, 0.1])
    assert np.allclose(w_step(dw, g, 0.1).w, [0.48, 0.52], atol=1e-12)


def test_w_single_domain_stays_one():
    dw = DomainWeights.uniform(1, np.zeros(3, dtype=int))
    g = w_gradient(dw, np.ones(4), np.ones(4), np.ones(3), HyperParams())
    assert g.shape == (1,)
    assert w_step(dw, g, 10.0).w.tolist() == [1.0]


def test_w_symmetric_domains_equal_gradient():
    dw = DomainWeights.uniform(2, np.array([0, 0, 1, 1]))
    qt = np.array([0.3, 0.6, 0.3, 0.6, 1.0])
    g = w_gradient(dw, qt, np.array([0.2, 0.5, 0.2, 0.5, 0.1]), np.array([1.0, 2.0, 1.0, 2.0]), HyperParams())
    assert g[0] == g[1]


def test_w_step_zero_gradient_is_identity():
    dw = DomainWeights(np.array([0.2, 0.3, 0.5]), np.array([0, 1, 2]))
    assert np.allclose(w_step(dw, np.zeros(3), 0.5).w, dw.w, atol=1e-15)


def test_compose_examples(rng):
    one = DomainWeights.uniform(1, np.zeros(2, dtype=int))
    qt = np.array([0.4, 0.7, 1.3])
    assert np.array_equal(compose_weights(CompositeWeights(qt, one)), qt)
    two = DomainWeights(np.array([0.5, 0.5]), np.array([0, 1]))
    assert np.array_equal(compose_weights(CompositeWeights(np.array([2.0, 2.0, 1.0]), two)), [1.0, 1.0, 1.0])
    w = rng.dirichlet(np.ones(3))
    assign = rng.integers(0, 3, 10)
    qt = rng.uniform(0, 2, 14)
    got = compose_weights(CompositeWeights(qt, DomainWeights(w, assign)))
    want = np.array([w[assign[i]] * qt[i] if i < 10 else qt[i] for i in range(14)])
    assert np.array_equal(got, want)


def test_split_back_examples():
    q = np.array([1.0, 0.4, 2.0])
    assert np.array_equal(split_back(q, DomainWeights(np.array([1.0]), np.array([0, 0])), q), q)
    half = DomainWeights(np.array([0.5, 0.5]), np.array([0, 1]))
    assert split_back(q, half, q)[0] == 2.0
    dead = DomainWeights(np.array([1.0, 0.0]), np.array([0, 1]))
    prev = np.array([9.0, 7.0, 2.0])
    assert split_back(q, dead, prev)[1] == 7.0


def test_tilde_sweep_single_domain_matches_plain_sweep(rng):
    hp = HyperParams(rho_1=0.0, rho_2=0.0)
    ws = project_weights(WeightState.initial(6, 3, hp))
    dw = DomainWeights.uniform(1, np.zeros(6, dtype=int))
    losses, d = rng.uniform(0, 1, 9), rng.uniform(0, 2, 6)
    batches = [np.array([4, 0, 8]), np.array([1, 2, 3]), np.array([5, 6, 7])]
    plain = q_sweep_stochastic(ws, losses, d, hp, batches=batches, complexity=1.5)
    raw = q_tilde_sweep(ws.q, dw, ws, losses, d, hp, batches, 1.5)
    assert np.max(np.abs(project_box_sum(raw, BoxSumSpec(ws.lo, ws.hi, ws.budget)) - plain.q)) <= 1e-12
