"""Reference learner: a one-hidden-layer network whose tanh hidden layer is
the encoder block and whose linear head is the free block.

    z = tanh(A x + a)        (encoder)
    p = B z + c              (head)

Losses are ``0.5 * ||p - y||^2`` (squared) or the summed binary log-loss on
logits ``p`` (logistic).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ENCODER = ("A", "a")
HEAD = ("B", "c")
PARAMS = ENCODER + HEAD

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True, eq=False)
class LearnerState:
    A: np.ndarray
    a: np.ndarray
    B: np.ndarray
    c: np.ndarray
    loss: str = "squared"
    truncate: bool = False

    @property
    def input_dim(self) -> int:
        return self.A.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.A.shape[0]

    @property
    def output_dim(self) -> int:
        return self.B.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAMS}

    def with_params(self, **arrays) -> LearnerState:
        return dataclasses.replace(self, **arrays)

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in PARAMS])

    def from_flat(self, theta: np.ndarray) -> LearnerState:
        out, pos = {}, 0
        for name in PARAMS:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = np.asarray(theta[pos : pos + size], dtype=float).reshape(shape)
            pos += size
        return self.with_params(**out)

    def free_flat(self) -> np.ndarray:
        return np.concatenate([self.B.ravel(), self.c])

    def with_free_flat(self, theta: np.ndarray) -> LearnerState:
        nb = self.B.size
        return self.with_params(B=theta[:nb].reshape(self.B.shape), c=theta[nb:].copy())

    def to_dict(self) -> dict:
        out = {"loss": self.loss, "truncate": self.truncate}
        for name in PARAMS:
            arr = getattr(self, name)
            out[name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> LearnerState:
        arrays = {
            name: np.asarray(raw[name]["data"], dtype=float).reshape(raw[name]["shape"])
            for name in PARAMS
        }
        return cls(loss=raw["loss"], truncate=raw.get("truncate", False), **arrays)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> LearnerState:
        return cls.from_dict(json.loads(Path(path).read_text()))


def init_learner(
    input_dim: int,
    output_dim: int,
    embed_dim: int,
    rng: np.random.Generator,
    loss: str = "squared",
    truncate: bool = False,
) -> LearnerState:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    s_enc = 1.0 / np.sqrt(input_dim)
    s_head = 1.0 / np.sqrt(embed_dim)
    return LearnerState(
        A=rng.uniform(-s_enc, s_enc, (embed_dim, input_dim)),
        a=rng.uniform(-s_enc, s_enc, embed_dim),
        B=rng.uniform(-s_head, s_head, (output_dim, embed_dim)),
        c=rng.uniform(-s_head, s_head, output_dim),
        loss=loss,
        truncate=truncate,
    )


def _as_batch(state: LearnerState, X, Y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != state.input_dim:
        raise ValueError(f"expected {state.input_dim} input features, got {X.shape[1]}")
    if Y is None:
        return X
    Y = np.asarray(Y, dtype=float)
    if Y.ndim <= 1:
        Y = Y.reshape(X.shape[0], -1)
    if Y.shape != (X.shape[0], state.output_dim):
        raise ValueError(f"expected targets of shape {(X.shape[0], state.output_dim)}, got {Y.shape}")
    return X, Y


def embed(state: LearnerState, X) -> np.ndarray:
    X = _as_batch(state, X)
    return np.tanh(X @ state.A.T + state.a)


def predict(state: LearnerState, X) -> np.ndarray:
    return embed(state, X) @ state.B.T + state.c


def _raw_loss(kind: str, P: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-example loss and its derivative wrt the head output."""
    if kind == "squared":
        R = P - Y
        return 0.5 * np.sum(R * R, axis=1), R
    loss = np.sum(np.logaddexp(0.0, P) - Y * P, axis=1)
    return loss, 1.0 / (1.0 + np.exp(-P)) - Y


def per_example_loss(state: LearnerState, X, Y) -> np.ndarray:
    X, Y = _as_batch(state, X, Y)
    loss, _ = _raw_loss(state.loss, predict(state, X), Y)
    if state.truncate:
        loss = np.minimum(loss, 1.0)
    return loss


def loss_and_grad(state: LearnerState, X, Y, weights) -> tuple[float, dict[str, np.ndarray]]:
    """Value and parameter gradient of ``sum_i weights_i * loss_i``."""
    X, Y = _as_batch(state, X, Y)
    w = np.asarray(weights, dtype=float)
    Z = np.tanh(X @ state.A.T + state.a)
    P = Z @ state.B.T + state.c
    loss, dP = _raw_loss(state.loss, P, Y)
    if state.truncate:
        active = loss < 1.0
        loss = np.minimum(loss, 1.0)
        w = w * active
    G = dP * w[:, None]
    dZ = (G @ state.B) * (1.0 - Z * Z)
    grads = {"A": dZ.T @ X, "a": dZ.sum(axis=0), "B": G.T @ Z, "c": G.sum(axis=0)}
    return float(w @ loss), grads


def complexity(state: LearnerState) -> float:
    """Half the squared Euclidean norm of all parameters."""
    return 0.5 * float(sum(np.sum(p * p) for p in state.params().values()))


class SGD:
    """Plain gradient step with decoupled decay."""

    def step(self, params, grads, lr, decay, frozen=()):
        out = {}
        for name, p in params.items():
            if name in frozen:
                out[name] = p
                continue
            out[name] = (p - lr * grads[name]) * (1.0 - lr * decay)
        return out


class AdamW:
    """Adaptive-moment step followed by multiplicative decoupled decay."""

    def __init__(self, beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads, lr, decay, frozen=()):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        out = {}
        for name, p in params.items():
            if name in frozen:
                out[name] = p
                continue
            g = grads[name]
            m = self.beta1 * self.m.get(name, 0.0) + (1.0 - self.beta1) * g
            v = self.beta2 * self.v.get(name, 0.0) + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            out[name] = (p - lr * update) * (1.0 - lr * decay)
        return out


def make_optimizer(kind: str):
    return SGD() if kind == "sgd" else AdamW()


def weighted_update(
    state: LearnerState,
    X,
    Y,
    q,
    lr: float,
    decay: float,
    optimizer=None,
    freeze_encoder: bool = False,
) -> LearnerState:
    """One optimizer step on ``mean_i q_i * loss_i`` with decoupled decay.

    ``decay`` is the raw coefficient; the trainer passes ``gamma * ||q||_inf``.
    Frozen encoder parameters receive neither gradient nor decay.
    """
    if lr < 0 or decay < 0:
        raise ValueError("lr and decay must be nonnegative")
    q = np.asarray(q, dtype=float)
    if q.size == 0:
        raise ValueError("empty batch")
    if optimizer is None:
        optimizer = AdamW()
    _, grads = loss_and_grad(state, X, Y, q / q.size)
    frozen = ENCODER if freeze_encoder else ()
    return state.with_params(**optimizer.step(state.params(), grads, lr, decay, frozen))


def train_reference(
    targets,
    epochs: int,
    lr: float,
    rng: np.random.Generator,
    init: LearnerState | None = None,
    embed_dim: int = 8,
    loss: str = "squared",
    optimizer: str = "adamw",
    freeze_encoder: bool = False,
) -> LearnerState:
    """Full-batch fit on target samples only (uniform weights, no decay)."""
    X, Y = targets.X, targets.Y
    if len(X) < 1:
        raise ValueError("reference training needs at least one target sample")
    state = init if init is not None else init_learner(X.shape[1], Y.shape[1], embed_dim, rng, loss)
    opt = make_optimizer(optimizer)
    q = np.ones(len(X))
    for _ in range(epochs):
        state = weighted_update(state, X, Y, q, lr, 0.0, opt, freeze_encoder)
    return state
