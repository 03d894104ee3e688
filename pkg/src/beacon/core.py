"""Domain types, configuration schema and seeded randomness."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

TARGET = -1

ESTIMATORS = ("knn", "classifier", "localized")
Q_UPDATES = ("stochastic", "convex")
LOSSES = ("squared", "logistic")
OPTIMIZERS = ("adamw", "sgd")
CORRUPTIONS = ("flip", "offset")
METHODS = ("beacon", "beacon_multi", "target_only", "cotrain")


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def seed_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for a 64-bit seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1)))


def spawn(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in rng.bit_generator.seed_seq.spawn(n)]


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray
    y: np.ndarray
    domain: int = TARGET
    corrupt: bool = False

    @property
    def is_target(self) -> bool:
        return self.domain == TARGET


@dataclass(frozen=True, eq=False)
class Dataset:
    """Source samples first (indices ``0..m-1``), then targets (``m..m+n-1``).

    ``domain`` holds the source-domain index for sources and ``TARGET`` for
    targets. ``corrupt`` is benchmark ground truth and never read by training.
    """

    X: np.ndarray
    Y: np.ndarray
    domain: np.ndarray
    corrupt: np.ndarray
    n_domains: int = 1

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        domain = np.asarray(self.domain, dtype=int)
        corrupt = np.asarray(self.corrupt, dtype=bool)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "corrupt", corrupt)
        N = X.shape[0]
        if Y.shape[0] != N or domain.shape != (N,) or corrupt.shape != (N,):
            raise ValueError("X, Y, domain and corrupt must agree on sample count")
        is_t = domain == TARGET
        m = int((~is_t).sum())
        if is_t[:m].any() or not is_t[m:].all():
            raise ValueError("source samples must precede target samples")
        if N - m < 1:
            raise ValueError("dataset needs at least one target sample")
        if m and (domain[:m].min() < 0 or domain[:m].max() >= self.n_domains):
            raise ValueError("source domain index out of range")

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], n_domains: int | None = None) -> Dataset:
        ordered = [s for s in samples if not s.is_target] + [s for s in samples if s.is_target]
        if n_domains is None:
            n_domains = max([s.domain for s in ordered if not s.is_target], default=0) + 1
        return cls(
            X=np.array([np.atleast_1d(s.x) for s in ordered], dtype=float),
            Y=np.array([np.atleast_1d(s.y) for s in ordered], dtype=float),
            domain=np.array([s.domain for s in ordered], dtype=int),
            corrupt=np.array([s.corrupt for s in ordered], dtype=bool),
            n_domains=n_domains,
        )

    @property
    def samples(self) -> list[LabeledSample]:
        return [
            LabeledSample(self.X[i], self.Y[i], int(self.domain[i]), bool(self.corrupt[i]))
            for i in range(len(self))
        ]

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return int((self.domain != TARGET).sum())

    @property
    def n(self) -> int:
        return len(self) - self.m

    @property
    def source_idx(self) -> np.ndarray:
        return np.arange(self.m)

    @property
    def target_idx(self) -> np.ndarray:
        return np.arange(self.m, len(self))

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.Y[idx], self.domain[idx], self.corrupt[idx], self.n_domains)

    def targets(self) -> Dataset:
        return self.subset(self.target_idx)

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.Y, self.domain, self.corrupt):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


@dataclass
class WeightState:
    """Per-sample weights with reference, bounds and sum budget."""

    q: np.ndarray
    p0: np.ndarray
    lo: np.ndarray
    hi: float | np.ndarray
    budget: float

    @classmethod
    def initial(cls, m: int, n: int, hp: HyperParams) -> WeightState:
        p0 = np.concatenate([np.zeros(m), np.full(n, 1.0 / n)])
        lo = np.concatenate([np.zeros(m), np.full(n, hp.q_t_min)])
        return cls(q=p0.copy(), p0=p0, lo=lo, hi=hp.q_max, budget=n + hp.alpha * m)

    @property
    def m(self) -> int:
        return int((self.p0 == 0).sum())

    def violations(self, tol: float = 1e-6, bound_tol: float = 1e-12) -> list[str]:
        out = []
        if np.any(self.q < self.lo - bound_tol):
            out.append("lower bound")
        if np.any(self.q > np.asarray(self.hi) + bound_tol):
            out.append("upper bound")
        if abs(self.q.sum() - self.budget) > tol:
            out.append(f"budget residual {self.q.sum() - self.budget:.3g}")
        return out

    def copy(self) -> WeightState:
        return dataclasses.replace(self, q=self.q.copy())


@dataclass
class DiscrepancyScores:
    d: np.ndarray
    estimator: str
    refresh_epoch: int = 0
    aux: float | None = None

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if np.any(self.d < 0):
            raise ValueError("discrepancy scores must be nonnegative")


def _check(cond: bool, name: str, msg: str):
    if not cond:
        raise ConfigError(name, msg)


@dataclass(frozen=True)
class HyperParams:
    lambda_1: float = 0.01
    lambda_2: float = 0.01
    lambda_d: float = 0.1
    gamma: float = 1e-4
    rho_1: float = 0.01
    rho_2: float = 0.01
    alpha: float = 0.45
    q_max: float = 5.0
    q_t_min: float = 0.05
    eta_q: float = 0.01
    eta_theta: float = 0.01
    eta_w: float = 0.05
    eta_t: float | None = None
    k_q: int = 1
    s_h: int = 10
    epochs: int = 100
    k: int = 5
    estimator: str = "knn"
    q_update: str = "stochastic"
    # learner and loop plumbing
    batch_size: int = 32
    embed_dim: int = 8
    loss: str = "squared"
    optimizer: str = "adamw"
    freeze_encoder: bool = False
    truncate_loss: bool = False
    mix_ratio: float = 0.5
    # localized discrepancy; radius has no default by design
    radius: float | None = None
    beta: float = 0.1
    loc_steps: int = 200
    loc_eval_period: int = 10
    noise_draws: int = 1
    loc_step_size: float = 0.05
    reference_epochs: int = 300

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                _check(math.isfinite(v), f.name, "must be finite")
        for name in ("lambda_1", "lambda_2", "lambda_d", "gamma", "rho_1", "rho_2", "q_t_min", "beta"):
            _check(getattr(self, name) >= 0, name, "must be nonnegative")
        _check(0 < self.alpha <= 1, "alpha", "must lie in (0, 1]")
        _check(self.q_max >= 1, "q_max", "must be at least 1")
        _check(self.q_t_min < self.q_max, "q_t_min", "must be below q_max")
        for name in ("eta_q", "eta_theta", "eta_w", "loc_step_size"):
            _check(getattr(self, name) > 0, name, "must be positive")
        if self.eta_t is not None:
            _check(self.eta_t > 0, "eta_t", "must be positive")
        for name in ("k_q", "s_h", "k", "batch_size", "embed_dim", "loc_steps", "loc_eval_period", "noise_draws"):
            v = getattr(self, name)
            _check(isinstance(v, int) and v >= 1, name, "must be a positive integer")
        for name in ("epochs", "reference_epochs"):
            v = getattr(self, name)
            _check(isinstance(v, int) and v >= 0, name, "must be a nonnegative integer")
        _check(self.loc_eval_period <= self.loc_steps, "loc_eval_period", "must not exceed loc_steps")
        _check(self.estimator in ESTIMATORS, "estimator", f"one of {ESTIMATORS}")
        _check(self.q_update in Q_UPDATES, "q_update", f"one of {Q_UPDATES}")
        _check(self.loss in LOSSES, "loss", f"one of {LOSSES}")
        _check(self.optimizer in OPTIMIZERS, "optimizer", f"one of {OPTIMIZERS}")
        _check(0 < self.mix_ratio < 1, "mix_ratio", "must lie in (0, 1)")
        if self.radius is not None:
            _check(self.radius >= 0, "radius", "must be nonnegative")
        if self.estimator == "localized":
            _check(self.radius is not None, "radius", "required by the localized estimator")

    @property
    def eta_target(self) -> float:
        return self.eta_q if self.eta_t is None else self.eta_t

    def replace(self, **changes) -> HyperParams:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ShiftSpec:
    """Synthetic domain-shift task.

    Per-domain entries (``covariate_shift``, ``concept_shift``,
    ``corrupt_fraction``) accept a scalar broadcast over the ``n_sources``
    domains. A scalar covariate shift ``c`` offsets the first feature by ``c``.
    """

    input_dim: int = 5
    output_dim: int = 1
    n_target: int = 20
    m_per_source: int = 200
    n_sources: int = 1
    covariate_shift: Any = 0.0
    concept_shift: Any = 0.0
    corrupt_fraction: Any = 0.0
    label_noise_sigma: float = 0.1
    corruption: str = "offset"
    corruption_offset: float = 5.0

    def __post_init__(self):
        _check(self.input_dim >= 1, "input_dim", "must be positive")
        _check(self.output_dim >= 1, "output_dim", "must be positive")
        _check(self.n_target >= 2, "n_target", "must be at least 2")
        _check(self.m_per_source >= 0, "m_per_source", "must be nonnegative")
        _check(self.n_sources >= 1, "n_sources", "must be positive")
        _check(self.label_noise_sigma >= 0, "label_noise_sigma", "must be nonnegative")
        _check(self.corruption in CORRUPTIONS, "corruption", f"one of {CORRUPTIONS}")
        rho = self.fractions()
        _check(bool(np.all((rho >= 0) & (rho <= 1))), "corrupt_fraction", "fractions must lie in [0, 1]")
        self.offsets()
        self.angles()

    def _per_domain(self, value, name) -> np.ndarray:
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            return np.full(self.n_sources, float(arr))
        _check(arr.shape == (self.n_sources,), name, f"expected {self.n_sources} entries")
        return arr

    def fractions(self) -> np.ndarray:
        return self._per_domain(self.corrupt_fraction, "corrupt_fraction")

    def angles(self) -> np.ndarray:
        return self._per_domain(self.concept_shift, "concept_shift")

    def offsets(self) -> np.ndarray:
        """Mean offset per domain, shape ``(n_sources, input_dim)``."""
        arr = np.asarray(self.covariate_shift, dtype=float)
        out = np.zeros((self.n_sources, self.input_dim))
        if arr.ndim == 0:
            out[:, 0] = arr
        elif arr.ndim == 1 and arr.shape[0] == self.n_sources:
            out[:, 0] = arr
        elif arr.shape == (self.n_sources, self.input_dim):
            out[:] = arr
        else:
            raise ConfigError("covariate_shift", "scalar, one per domain, or (n_sources, input_dim)")
        return out


@dataclass(frozen=True)
class RunSpec:
    seed: int = 0
    out: str = "out"
    methods: tuple = ("beacon", "target_only", "cotrain")
    seeds: int = 10
    log_weights: str = "summary"

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        for meth in self.methods:
            _check(meth in METHODS, "methods", f"unknown method {meth!r}")
        _check(self.seeds >= 1, "seeds", "must be positive")
        _check(self.log_weights in ("summary", "full"), "log_weights", "summary or full")

    def seed_list(self, count: int | None = None) -> list[int]:
        return [self.seed + s for s in range(self.seeds if count is None else count)]


@dataclass(frozen=True)
class Config:
    hyper: HyperParams = field(default_factory=HyperParams)
    benchmark: ShiftSpec = field(default_factory=ShiftSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def to_dict(self) -> dict:
        out = {}
        for key in ("hyper", "benchmark", "run"):
            part = dataclasses.asdict(getattr(self, key))
            out[key] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in part.items()}
        return out


def _build(cls, section: str, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(section, "must be a JSON object")
    known = {f.name for f in fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown field")
    try:
        return cls(**raw)
    except ConfigError as err:
        raise ConfigError(f"{section}.{err.field}", str(err).split(": ", 1)[-1]) from None
    except TypeError as err:
        raise ConfigError(section, str(err)) from None


def config_from_dict(raw: dict) -> Config:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a JSON object")
    for key in raw:
        if key not in ("hyper", "benchmark", "run"):
            raise ConfigError(key, "unknown top-level key")
    return Config(
        hyper=_build(HyperParams, "hyper", raw.get("hyper")),
        benchmark=_build(ShiftSpec, "benchmark", raw.get("benchmark")),
        run=_build(RunSpec, "run", raw.get("run")),
    )


def load_config(path) -> Config:
    """Read a JSON config; missing fields take their defaults.

    A bare object without the ``hyper``/``benchmark``/``run`` sections is read
    as the ``hyper`` section.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("<json>", f"parse failure: {err}") from None
    if isinstance(raw, dict) and raw and not set(raw) & {"hyper", "benchmark", "run"}:
        raw = {"hyper": raw}
    return config_from_dict(raw)


def save_config(config: Config, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
