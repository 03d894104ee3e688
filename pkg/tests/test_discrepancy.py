import numpy as np
import pytest

from beacon.core import TARGET, Dataset
from beacon.discrepancy import (
    DegenerateSpreadError,
    LocalizedSpec,
    auc_score,
    ball_project,
    classifier_discrepancy,
    knn_discrepancy,
    localized_discrepancy,
    loss_gap,
)
from beacon.learner import embed, init_learner, per_example_loss, train_reference


def brute_knn(S, T, k):
    n = len(T)
    ks, kt = min(k, n), min(k, n - 1)
    Z = np.mean([np.mean(sorted(np.linalg.norm(T[j] - T[i]) for i in range(n) if i != j)[:kt]) for j in range(n)])
    return np.array([np.mean(sorted(np.linalg.norm(s - t) for t in T)[:ks]) for s in S]) / Z


@pytest.mark.parametrize("src, want", [(0.5, 0.5), (0.0, 0.0), (3.0, 2.0)])
def test_knn_hand_cases(src, want):
    d = knn_discrepancy(np.array([[src]]), np.array([[0.0], [1.0]]), 1)
    assert d.tolist() == [want]


def test_knn_matches_brute_force(rng):
    for k in (1, 3, 7, 50):
        S, T = rng.normal(size=(9, 3)), rng.normal(size=(6, 3))
        assert np.allclose(knn_discrepancy(S, T, k), brute_knn(S, T, k), atol=1e-12)


def test_knn_isometry_invariant(rng):
    S, T = rng.normal(size=(20, 4)), rng.normal(size=(10, 4))
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    shift = rng.normal(size=4)
    a = knn_discrepancy(S, T, 5)
    b = knn_discrepancy(S @ Q + shift, T @ Q + shift, 5)
    assert np.allclose(a, b, rtol=1e-12)


def test_knn_errors():
    with pytest.raises(ValueError):
        knn_discrepancy(np.zeros((2, 1)), np.zeros((1, 1)), 1)
    with pytest.raises(DegenerateSpreadError):
        knn_discrepancy(np.ones((2, 1)), np.zeros((3, 1)), 2)


def test_auc_rank_sum():
    assert auc_score([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auc_score([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5


def test_classifier_identical_sets(rng):
    X = rng.normal(size=(30, 2))
    d, auc = classifier_discrepancy(X, X.copy(), rng)
    assert abs(auc - 0.5) <= 0.1
    assert np.all(np.abs(d - 0.5) <= 0.1)


def test_classifier_separated_clusters(rng):
    S = -10 + 0.1 * rng.normal(size=(20, 1))
    T = 10 + 0.1 * rng.normal(size=(20, 1))
    d, auc = classifier_discrepancy(S, T, rng)
    assert auc > 0.99 and np.all(d > 0.9)


def test_classifier_orders_along_separating_direction(rng):
    T = 0.1 * rng.normal(size=(20, 2)) + [2.0, 0.0]
    S = np.vstack([T.mean(axis=0), [-4.0, 0.0]] + [rng.normal(size=2) - [2.0, 0.0] for _ in range(18)])
    d, _ = classifier_discrepancy(S, T, rng)
    assert d[0] < d[1]


def test_classifier_ranges(rng):
    for _ in range(5):
        d, auc = classifier_discrepancy(rng.normal(size=(50, 3)), rng.normal(size=(10, 3)) + 0.5, rng)
        assert np.all((d >= 0) & (d <= 1)) and 0 <= auc <= 1


def test_ball_project_cases():
    assert np.array_equal(ball_project(np.array([0.2, 0.1]), np.zeros(2), 1.0), [0.2, 0.1])
    assert np.array_equal(ball_project(np.zeros(2), np.zeros(2), 0.0), [0.0, 0.0])
    assert np.allclose(ball_project(np.array([2.0, 0.0]), np.zeros(2), 1.0), [1.0, 0.0])


def _dataset(Xs, Ys, Xt, Yt):
    m, n = len(Xs), len(Xt)
    return Dataset(
        np.vstack([Xs, Xt]),
        np.vstack([Ys, Yt]),
        np.concatenate([np.zeros(m, dtype=int), np.full(n, TARGET)]),
        np.zeros(m + n, dtype=bool),
        1,
    )


def test_localized_identical_sets_is_zero(rng):
    X, Y = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
    ref = init_learner(2, 1, 3, rng)
    d = localized_discrepancy(ref, _dataset(X, Y, X, Y), LocalizedSpec(radius=1.0))
    assert abs(d) <= 1e-9


def test_localized_zero_radius_is_reference_gap(rng):
    data = _dataset(rng.normal(size=(5, 2)), rng.normal(size=(5, 1)), rng.normal(size=(4, 2)), rng.normal(size=(4, 1)))
    ref = init_learner(2, 1, 3, rng)
    assert localized_discrepancy(ref, data, LocalizedSpec(radius=0.0)) == loss_gap(ref, data)
    want = per_example_loss(ref, data.X[5:], data.Y[5:]).mean() - per_example_loss(ref, data.X[:5], data.Y[:5]).mean()
    assert loss_gap(ref, data) == pytest.approx(want, abs=1e-15)


def test_localized_matches_grid_over_ball(rng):
    # shared inputs make the gap linear in the head, so the ascent reaches the global max
    X = rng.normal(size=(2, 1))
    data = _dataset(X, rng.normal(size=(2, 1)), X, rng.normal(size=(2, 1)))
    ref = init_learner(1, 1, 1, rng)
    radius = 0.5
    got = localized_discrepancy(ref, data, LocalizedSpec(radius, beta=0.0, steps=2000, eval_period=1, step_size=0.05))
    g = np.arange(-radius, radius + 5e-4, 1e-3)
    U, V = np.meshgrid(g, g)
    inside = U**2 + V**2 <= radius * radius
    B = ref.B[0, 0] + U[inside]
    c = ref.c[0] + V[inside]
    z = embed(ref, data.X)[:, 0]
    losses = 0.5 * (np.outer(B, z) + c[:, None] - data.Y[:, 0]) ** 2
    best = (losses[:, 2:].mean(axis=1) - losses[:, :2].mean(axis=1)).max()
    assert got >= best - 1e-3 and got <= best + 1e-3


def test_localized_monotone_in_radius(rng):
    data = _dataset(rng.normal(size=(8, 2)), rng.normal(size=(8, 1)), rng.normal(size=(5, 2)) + 1, rng.normal(size=(5, 1)))
    ref = train_reference(data.targets(), 100, 0.05, rng, embed_dim=3)
    vals = [localized_discrepancy(ref, data, LocalizedSpec(r, beta=0.0, steps=400)) for r in (0.0, 0.1, 0.3, 1.0)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_localized_spec_validation():
    with pytest.raises(ValueError):
        LocalizedSpec(radius=-1)
    with pytest.raises(ValueError):
        LocalizedSpec(radius=1, steps=5, eval_period=10)
