"""Per-source-sample discrepancy scores.

Three estimators are provided:

* ``knn_discrepancy`` -- mean distance to the k nearest target embeddings,
  normalized by the mean within-target k-NN distance (the default);
* ``classifier_discrepancy`` -- source posterior of a logistic domain
  discriminator trained on a class-balanced subsample;
* ``localized_discrepancy`` -- a single scalar: the largest target-minus-source
  mean loss over a parameter ball around a target-trained reference, with the
  encoder held fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from beacon.core import Dataset
from beacon.learner import LearnerState, loss_and_grad, per_example_loss

CLASSIFIER_STEPS = 500
CLASSIFIER_LR = 0.1
CLASSIFIER_L2 = 1e-4


class DegenerateSpreadError(ValueError):
    """All target embeddings coincide, so the k-NN normalizer is zero."""


def _as_matrix(emb) -> np.ndarray:
    emb = np.asarray(emb, dtype=float)
    if emb.ndim == 1:
        emb = emb[:, None]
    return emb


def _mean_smallest(D: np.ndarray, k: int) -> np.ndarray:
    part = np.partition(D, k - 1, axis=1)[:, :k]
    return np.sort(part, axis=1).mean(axis=1)


def knn_discrepancy(source_emb, target_emb, k: int) -> np.ndarray:
    """k-NN discrepancy of each source embedding relative to the targets.

    Parameters
    ----------
    source_emb : array, shape (m, dim)
    target_emb : array, shape (n, dim), n >= 2
    k : int
        Neighbor count; clipped to ``n`` for source queries and ``n - 1``
        for the within-target normalizer.

    Returns
    -------
    d : array, shape (m,)
    """
    S, T = _as_matrix(source_emb), _as_matrix(target_emb)
    n = T.shape[0]
    if n < 2:
        raise ValueError("k-NN discrepancy needs at least two target embeddings")
    if k < 1:
        raise ValueError("k must be positive")
    if S.shape[0] and S.shape[1] != T.shape[1]:
        raise ValueError("source and target embeddings differ in dimension")

    DT = cdist(T, T)
    np.fill_diagonal(DT, np.inf)
    Z = _mean_smallest(DT, min(k, n - 1)).mean()
    if not Z > 0:
        raise DegenerateSpreadError("target embeddings have zero k-NN spread")
    if S.shape[0] == 0:
        return np.zeros(0)
    return _mean_smallest(cdist(S, T), min(k, n)) / Z


def auc_score(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum identity (ties count 1/2)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return 0.5
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def fit_domain_classifier(
    X: np.ndarray,
    y: np.ndarray,
    steps: int = CLASSIFIER_STEPS,
    lr: float = CLASSIFIER_LR,
    l2: float = CLASSIFIER_L2,
) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on the L2-regularized mean log-loss."""
    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(steps):
        r = _sigmoid(X @ w + b) - y
        w -= lr * (X.T @ r / len(y) + l2 * w)
        b -= lr * r.mean()
    return w, b


def classifier_discrepancy(source_emb, target_emb, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Return ``(d, auc)`` with ``d_i`` the estimated P(source | z_i).

    The discriminator (target = 1, source = 0) is trained on all targets and
    a random size-``n`` subsample of sources when ``m > n``; ``d`` covers every
    source and the AUC is measured on the pooled source and target sets.
    """
    S, T = _as_matrix(source_emb), _as_matrix(target_emb)
    m, n = S.shape[0], T.shape[0]
    if m == 0 or n == 0:
        raise ValueError("classifier discrepancy needs nonempty source and target sets")
    sub = np.sort(rng.choice(m, size=n, replace=False)) if m > n else np.arange(m)
    X = np.vstack([S[sub], T])
    y = np.concatenate([np.zeros(len(sub)), np.ones(n)])
    w, b = fit_domain_classifier(X, y)
    g_source = _sigmoid(S @ w + b)
    g_target = _sigmoid(T @ w + b)
    auc = auc_score(np.concatenate([g_source, g_target]), np.concatenate([np.zeros(m), np.ones(n)]))
    return 1.0 - g_source, auc


@dataclass(frozen=True)
class LocalizedSpec:
    radius: float
    beta: float = 0.1
    steps: int = 200
    eval_period: int = 10
    noise_draws: int = 1
    step_size: float = 0.05

    def __post_init__(self):
        if self.radius < 0 or self.beta < 0:
            raise ValueError("radius and beta must be nonnegative")
        if self.steps < 1 or not 1 <= self.eval_period <= self.steps:
            raise ValueError("need steps >= 1 and 1 <= eval_period <= steps")
        if self.noise_draws < 1 or self.step_size <= 0:
            raise ValueError("noise_draws >= 1 and step_size > 0 required")

    @classmethod
    def from_hyper(cls, hp) -> LocalizedSpec:
        return cls(
            radius=hp.radius,
            beta=hp.beta,
            steps=hp.loc_steps,
            eval_period=hp.loc_eval_period,
            noise_draws=hp.noise_draws,
            step_size=hp.loc_step_size,
        )


def ball_project(free, center, radius: float) -> np.ndarray:
    free = np.asarray(free, dtype=float)
    center = np.asarray(center, dtype=float)
    if free.shape != center.shape:
        raise ValueError("free and center must have equal shapes")
    delta = free - center
    dist = np.linalg.norm(delta)
    if dist <= radius:
        return free
    return center + radius * delta / dist


def loss_gap(state: LearnerState, data: Dataset) -> float:
    """Mean target loss minus mean source loss."""
    s, t = data.source_idx, data.target_idx
    return float(
        per_example_loss(state, data.X[t], data.Y[t]).mean()
        - per_example_loss(state, data.X[s], data.Y[s]).mean()
    )


def localized_discrepancy(learner_ref: LearnerState, data: Dataset, spec: LocalizedSpec) -> float:
    """Running maximum of the loss gap along projected gradient ascent on the
    head parameters, started at (and including) the reference point."""
    m, n = data.m, data.n
    if m < 1 or n < 1:
        raise ValueError("localized discrepancy needs source and target samples")
    weights = np.concatenate([np.full(m, -1.0 / m), np.full(n, 1.0 / n)])
    center = learner_ref.free_flat()

    def evaluate(state):
        return float(np.mean([loss_gap(state, data) for _ in range(spec.noise_draws)]))

    best = evaluate(learner_ref)
    theta = center.copy()
    state = learner_ref
    for step in range(1, spec.steps + 1):
        _, grads = loss_and_grad(state, data.X, data.Y, weights)
        ascent = np.concatenate([grads["B"].ravel(), grads["c"]]) - 2.0 * spec.beta * (theta - center)
        theta = ball_project(theta + spec.step_size * ascent, center, spec.radius)
        state = learner_ref.with_free_flat(theta)
        if step % spec.eval_period == 0:
            best = max(best, evaluate(state))
    return best
