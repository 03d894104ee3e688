"""Training loops: single-source and multi-source weighted co-training and
the target-only and fixed-ratio co-training baselines."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from beacon.core import Dataset, DiscrepancyScores, HyperParams, WeightState, spawn
from beacon.discrepancy import (
    LocalizedSpec,
    classifier_discrepancy,
    knn_discrepancy,
    localized_discrepancy,
)
from beacon.learner import (
    LearnerState,
    complexity,
    embed,
    init_learner,
    make_optimizer,
    per_example_loss,
    train_reference,
    weighted_update,
)
from beacon.proximal import BoxSumSpec, project_box_sum
from beacon.weights import (
    SPLIT_EPS,
    CompositeWeights,
    DomainWeights,
    compose_weights,
    minibatches,
    objective,
    project_weights,
    q_solve_convex,
    q_sweep_stochastic,
    q_tilde_sweep,
    split_back,
    w_gradient,
    w_step,
)


@dataclass
class TrainReport:
    method: str
    learner: LearnerState
    metrics: list[dict] = field(default_factory=list)
    weight_log: list[dict] = field(default_factory=list)
    q_history: list[np.ndarray] = field(default_factory=list)
    domain_log: list[dict] = field(default_factory=list)
    discrepancy_log: list[dict] = field(default_factory=list)
    objective_trace: list[dict] = field(default_factory=list)
    weights: WeightState | None = None
    discrepancy: DiscrepancyScores | None = None
    domain_weights: DomainWeights | None = None

    @property
    def final_risk(self) -> float:
        return self.metrics[-1]["target_risk"] if self.metrics else float("nan")


def evaluate(state: LearnerState, heldout: Dataset) -> float:
    """Mean per-example loss on a held-out sample."""
    if len(heldout) == 0:
        raise ValueError("held-out set is empty")
    return float(per_example_loss(state, heldout.X, heldout.Y).mean())


def weight_stats(q: np.ndarray, data: Dataset) -> dict:
    m = data.m

    def stats(vals):
        if vals.size == 0:
            return None, None
        return float(vals.mean()), float(vals.std())

    src = q[:m]
    corrupt = data.corrupt[:m]
    out = {}
    for name, vals in (
        ("source", src),
        ("target", q[m:]),
        ("clean", src[~corrupt]),
        ("corrupt", src[corrupt]),
    ):
        out[f"mean_q_{name}"], out[f"std_q_{name}"] = stats(vals)
    return out


def refresh_discrepancy(
    learner: LearnerState, data: Dataset, hp: HyperParams, rng: np.random.Generator, epoch: int
) -> DiscrepancyScores:
    """k-NN or classifier scores in the learner's current embedding space."""
    Zs = embed(learner, data.X[: data.m])
    Zt = embed(learner, data.X[data.m :])
    if data.m == 0:
        return DiscrepancyScores(np.zeros(0), hp.estimator, epoch)
    if hp.estimator == "knn":
        return DiscrepancyScores(knn_discrepancy(Zs, Zt, hp.k), "knn", epoch)
    if hp.estimator == "classifier":
        d, auc = classifier_discrepancy(Zs, Zt, rng)
        return DiscrepancyScores(d, "classifier", epoch, auc)
    raise ValueError(f"estimator {hp.estimator!r} is not refreshed per epoch")


def frozen_localized_scores(
    learner: LearnerState, data: Dataset, hp: HyperParams
) -> tuple[DiscrepancyScores, HyperParams]:
    """Scores for the localized estimator: one scalar for every source, with
    ``lambda_d`` fixed to 1, computed once before training."""
    ref = train_reference(
        data.targets(),
        hp.reference_epochs,
        hp.eta_theta,
        rng=None,
        init=learner,
        optimizer=hp.optimizer,
        freeze_encoder=True,
    )
    d_hat = localized_discrepancy(ref, data, LocalizedSpec.from_hyper(hp)) if data.m else 0.0
    scores = DiscrepancyScores(np.full(data.m, max(d_hat, 0.0)), "localized", 0, d_hat)
    return scores, hp.replace(lambda_d=1.0)


class _Loop:
    """State shared by the training loops: learner, optimizer, RNG streams."""

    def __init__(self, data, hp, rng, init, heldout, method):
        init_rng, self.order_rng, self.est_rng = spawn(rng, 3)
        if init is None:
            init = init_learner(
                data.X.shape[1], data.Y.shape[1], hp.embed_dim, init_rng, hp.loss, hp.truncate_loss
            )
        self.data, self.hp, self.heldout = data, hp, heldout
        self.learner = init
        self.opt = make_optimizer(hp.optimizer)
        self.report = TrainReport(method=method, learner=init)

    def epoch_batches(self, size: int) -> list[np.ndarray]:
        return minibatches(self.order_rng.permutation(size), self.hp.batch_size)

    def h_phase(self, batches, X, Y, q):
        hp = self.hp
        decay = hp.gamma * float(np.max(q))
        for idx in itertools.islice(itertools.cycle(batches), hp.s_h):
            self.learner = weighted_update(
                self.learner, X[idx], Y[idx], q[idx], hp.eta_theta, decay, self.opt, hp.freeze_encoder
            )

    def log_epoch(self, epoch, q):
        data = self.data
        losses = per_example_loss(self.learner, data.X, data.Y)
        row = {"epoch": epoch, "train_loss": float(np.mean(q * losses)) if q is not None else None}
        row["target_risk"] = evaluate(self.learner, self.heldout) if self.heldout is not None else float("nan")
        self.report.metrics.append(row)

    def log_weights(self, epoch, q):
        self.report.weight_log.append({"epoch": epoch, **weight_stats(q, self.data)})
        self.report.q_history.append(q.copy())

    def trace(self, epoch, phase, q, scores, hp):
        losses = per_example_loss(self.learner, self.data.X, self.data.Y)
        value = objective(q, losses, scores.d, self.weights.p0, hp, complexity(self.learner))
        self.report.objective_trace.append({"epoch": epoch, "phase": phase, "value": value})

    def finish(self):
        self.report.learner = self.learner
        return self.report


def _initial_scores(loop: _Loop):
    hp, data = loop.hp, loop.data
    if hp.estimator == "localized":
        scores, hp = frozen_localized_scores(loop.learner, data, hp)
        loop.report.discrepancy_log.append({"epoch": 0, "estimator": "localized", "mean_d": float(scores.d.mean()) if data.m else 0.0, "aux": scores.aux})
        return scores, hp
    return DiscrepancyScores(np.zeros(data.m), hp.estimator, 0), hp


def _refresh(loop: _Loop, scores, hp, epoch):
    if hp.estimator == "localized":
        return scores
    scores = refresh_discrepancy(loop.learner, loop.data, hp, loop.est_rng, epoch)
    loop.report.discrepancy_log.append(
        {"epoch": epoch, "estimator": scores.estimator, "mean_d": float(scores.d.mean()) if scores.d.size else 0.0, "aux": scores.aux}
    )
    return scores


def train_beacon_single(
    data: Dataset,
    hp: HyperParams,
    rng: np.random.Generator,
    heldout: Dataset | None = None,
    init: LearnerState | None = None,
    track_objective: bool = False,
) -> TrainReport:
    """Alternate a q-phase (every ``k_q`` epochs) with ``s_h`` weighted
    predictor steps whose decoupled decay is ``gamma * ||q||_inf``."""
    loop = _Loop(data, hp, rng, init, heldout, "beacon")
    weights = project_weights(WeightState.initial(data.m, data.n, hp))
    loop.weights = weights
    scores, hp = _initial_scores(loop)
    N = len(data)

    for epoch in range(1, hp.epochs + 1):
        batches = loop.epoch_batches(N)
        if epoch % hp.k_q == 0:
            scores = _refresh(loop, scores, hp, epoch)
            losses = per_example_loss(loop.learner, data.X, data.Y)
            R = complexity(loop.learner)
            if hp.q_update == "convex":
                weights = q_solve_convex(losses, scores.d, weights, hp, R)
            else:
                weights = q_sweep_stochastic(weights, losses, scores.d, hp, batches=batches, complexity=R)
            loop.weights = weights
            loop.log_weights(epoch, weights.q)
            if track_objective:
                loop.trace(epoch, "q", weights.q, scores, hp)
        loop.h_phase(batches, data.X, data.Y, weights.q)
        if track_objective:
            loop.trace(epoch, "h", weights.q, scores, hp)
        loop.log_epoch(epoch, weights.q)

    loop.report.weights = weights
    loop.report.discrepancy = scores
    return loop.finish()


def train_beacon_multi(
    data: Dataset,
    hp: HyperParams,
    rng: np.random.Generator,
    heldout: Dataset | None = None,
    init: LearnerState | None = None,
) -> TrainReport:
    """Multi-source loop with ``q_i = w_{s(i)} * q_tilde_i`` on sources.

    Each refresh takes one w-step from a single loss sweep, one q_tilde
    sweep, and a joint box-and-sum projection of the composite weights
    followed by the split back into q_tilde.
    """
    if hp.q_update != "stochastic":
        raise ValueError("the multi-source loop uses the stochastic q update")
    loop = _Loop(data, hp, rng, init, heldout, "beacon_multi")
    m, N = data.m, len(data)
    template = WeightState.initial(m, data.n, hp)
    dw = DomainWeights.uniform(data.n_domains, data.domain[:m])
    q = project_box_sum(template.p0, BoxSumSpec(template.lo, template.hi, template.budget))
    q_tilde = split_back(q, dw, template.p0)
    loop.weights = template
    scores, hp = _initial_scores(loop)

    for epoch in range(1, hp.epochs + 1):
        batches = loop.epoch_batches(N)
        if epoch % hp.k_q == 0:
            scores = _refresh(loop, scores, hp, epoch)
            losses = per_example_loss(loop.learner, data.X, data.Y)
            R = complexity(loop.learner)
            dw = w_step(dw, w_gradient(dw, q_tilde, losses, scores.d, hp, template.p0), hp.eta_w)
            q_tilde = q_tilde_sweep(q_tilde, dw, template, losses, scores.d, hp, batches, R)
            # domains with vanishing weight cannot carry mass after the split
            hi = np.full(N, hp.q_max)
            hi[:m][dw.per_sample() < SPLIT_EPS] = 0.0
            composite = compose_weights(CompositeWeights(q_tilde, dw))
            q = project_box_sum(composite, BoxSumSpec(template.lo, hi, template.budget))
            q_tilde = split_back(q, dw, q_tilde)
            loop.log_weights(epoch, q)
            loop.report.domain_log.append({"epoch": epoch, "w": dw.w.tolist()})
        q = compose_weights(CompositeWeights(q_tilde, dw))
        loop.h_phase(batches, data.X, data.Y, q)
        loop.log_epoch(epoch, q)

    final = template.copy()
    final.q = q
    loop.report.weights = final
    loop.report.discrepancy = scores
    loop.report.domain_weights = dw
    return loop.finish()


def train_target_only(
    data: Dataset,
    hp: HyperParams,
    rng: np.random.Generator,
    heldout: Dataset | None = None,
    init: LearnerState | None = None,
) -> TrainReport:
    """Uniform unit weights on the target samples only."""
    loop = _Loop(data, hp, rng, init, heldout, "target_only")
    tgt = data.targets()
    q = np.ones(len(tgt))
    for epoch in range(1, hp.epochs + 1):
        batches = loop.epoch_batches(len(tgt))
        loop.h_phase(batches, tgt.X, tgt.Y, q)
        loop.log_epoch(epoch, None)
    return loop.finish()


def train_cotrain_fixed(
    data: Dataset,
    hp: HyperParams,
    rng: np.random.Generator,
    heldout: Dataset | None = None,
    init: LearnerState | None = None,
    mix_ratio: float | None = None,
) -> TrainReport:
    """Minibatches whose entries come from the source pool with probability
    ``mix_ratio`` (uniform within each pool), all with unit weight."""
    ratio = hp.mix_ratio if mix_ratio is None else mix_ratio
    if not 0 < ratio < 1:
        raise ValueError("mix_ratio must lie in (0, 1)")
    if data.m == 0:
        raise ValueError("fixed-ratio co-training needs source samples")
    loop = _Loop(data, hp, rng, init, heldout, "cotrain")
    m, n = data.m, data.n
    size = min(hp.batch_size, len(data))
    ones = np.ones(size)
    for epoch in range(1, hp.epochs + 1):
        for _ in range(hp.s_h):
            from_source = loop.order_rng.random(size) < ratio
            idx = np.where(from_source, loop.order_rng.integers(0, m, size), m + loop.order_rng.integers(0, n, size))
            loop.learner = weighted_update(
                loop.learner, data.X[idx], data.Y[idx], ones, hp.eta_theta, hp.gamma, loop.opt, hp.freeze_encoder
            )
        loop.log_epoch(epoch, None)
    return loop.finish()


TRAINERS = {
    "beacon": train_beacon_single,
    "beacon_multi": train_beacon_multi,
    "target_only": train_target_only,
    "cotrain": train_cotrain_fixed,
}
