"""Synthetic domain-shift benchmark: task generation, method comparison over
seeds, greedy coordinate-wise hyperparameter sweeps, and metric export."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from beacon.core import TARGET, Config, ConfigError, Dataset, HyperParams, ShiftSpec, seed_rng, spawn
from beacon.learner import init_learner
from beacon.trainer import TRAINERS, TrainReport, weight_stats

METRIC_COLUMNS = (
    "method",
    "seed",
    "epoch",
    "target_risk",
    "mean_q_source",
    "mean_q_target",
    "mean_q_clean",
    "mean_q_corrupt",
)
TIE_RTOL = 1e-12


def _rotation(dim: int, angle: float) -> np.ndarray:
    R = np.eye(dim)
    if dim >= 2 and angle:
        c, s = math.cos(angle), math.sin(angle)
        R[:2, :2] = [[c, -s], [s, c]]
    return R


def gen_shifted_task(spec: ShiftSpec, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Draw ``(train, heldout_target)`` for a shift specification.

    Targets follow ``x ~ N(0, I)``, ``y = W x + noise``. Source domain ``k``
    draws ``x ~ N(delta_k, I)`` with ``W`` rotated by its concept-shift angle,
    and a ``rho_k`` fraction of its samples receives corrupted labels. The
    corrupted subset is drawn from its own stream, so changing ``rho`` leaves
    features and clean labels untouched. Held-out targets are a disjoint
    sample of the same size as the training targets.
    """
    base, pick = spawn(rng, 2)
    d, o = spec.input_dim, spec.output_dim
    W = base.normal(size=(d, o)) / math.sqrt(d)
    offsets, angles, rhos = spec.offsets(), spec.angles(), spec.fractions()

    Xs, Ys, dom, bad = [], [], [], []
    for k in range(spec.n_sources):
        mk = spec.m_per_source
        X = base.normal(size=(mk, d)) + offsets[k]
        Y = X @ (_rotation(d, angles[k]) @ W) + spec.label_noise_sigma * base.normal(size=(mk, o))
        flagged = np.zeros(mk, dtype=bool)
        flagged[pick.choice(mk, size=int(round(rhos[k] * mk)), replace=False)] = True
        if spec.corruption == "flip":
            Y[flagged] = -Y[flagged]
        else:
            Y[flagged] = Y[flagged] + spec.corruption_offset
        Xs.append(X)
        Ys.append(Y)
        dom.append(np.full(mk, k))
        bad.append(flagged)

    n = spec.n_target
    Xt = base.normal(size=(2 * n, d))
    Yt = Xt @ W + spec.label_noise_sigma * base.normal(size=(2 * n, o))
    train = Dataset(
        X=np.vstack(Xs + [Xt[:n]]),
        Y=np.vstack(Ys + [Yt[:n]]),
        domain=np.concatenate(dom + [np.full(n, TARGET)]),
        corrupt=np.concatenate(bad + [np.zeros(n, dtype=bool)]),
        n_domains=spec.n_sources,
    )
    heldout = Dataset(Xt[n:], Yt[n:], np.full(n, TARGET), np.zeros(n, dtype=bool), spec.n_sources)
    return train, heldout


@dataclass
class CellResult:
    method: str
    seed: int
    dataset_hash: str
    final_risk: float
    wall_time: float
    weights: dict
    report: TrainReport = field(repr=False)


@dataclass
class BenchReport:
    cells: list[CellResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(c.method for c in self.cells))

    def risks(self, method: str) -> np.ndarray:
        return np.array([c.final_risk for c in self.cells if c.method == method])

    def aggregate(self) -> dict:
        out = {}
        for meth in self.methods():
            r = self.risks(meth)
            sd = float(r.std(ddof=1)) if r.size > 1 else 0.0
            out[meth] = {
                "mean_risk": float(r.mean()),
                "std_risk": sd,
                "stderr_risk": sd / math.sqrt(r.size),
                "runs": int(r.size),
            }
        return out

    def win_counts(self) -> dict:
        wins = {meth: 0 for meth in self.methods()}
        by_seed: dict[int, list[CellResult]] = {}
        for c in self.cells:
            by_seed.setdefault(c.seed, []).append(c)
        for cells in by_seed.values():
            wins[min(cells, key=lambda c: c.final_risk).method] += 1
        return wins


def _seed_setup(config: Config, seed: int):
    task_rng, init_rng = spawn(seed_rng(seed), 2)
    train, heldout = gen_shifted_task(config.benchmark, task_rng)
    hp = config.hyper
    init = init_learner(train.X.shape[1], train.Y.shape[1], hp.embed_dim, init_rng, hp.loss, hp.truncate_loss)
    return train, heldout, init


def run_method(method: str, hp: HyperParams, train: Dataset, heldout: Dataset, init, seed: int) -> TrainReport:
    # every method consumes an identical training stream for a given seed
    train_rng = spawn(seed_rng(seed), 3)[2]
    return TRAINERS[method](train, hp, train_rng, heldout=heldout, init=init)


def run_experiment(config: Config, methods=None, seeds=None) -> BenchReport:
    """Run every method on the same (dataset, initial learner) per seed."""
    methods = list(config.run.methods if methods is None else methods)
    seeds = config.run.seed_list() if seeds is None else list(seeds)
    for meth in methods:
        if meth not in TRAINERS:
            raise ConfigError("methods", f"unknown method {meth!r}")
    report = BenchReport(config=config.to_dict())
    for seed in seeds:
        train, heldout, init = _seed_setup(config, seed)
        digest = train.digest()
        for meth in methods:
            start = time.perf_counter()
            rep = run_method(meth, config.hyper, train, heldout, init, seed)
            elapsed = time.perf_counter() - start
            stats = weight_stats(rep.weights.q, train) if rep.weights is not None else {}
            report.cells.append(CellResult(meth, seed, digest, rep.final_risk, elapsed, stats, rep))
    return report


@dataclass
class SweepReport:
    best: dict
    results: list[dict]
    hyper: HyperParams

    def to_dict(self) -> dict:
        return {"best": self.best, "results": self.results, "hyper": dataclasses.asdict(self.hyper)}


def _pick(values: list, means: list[float], default):
    lowest = min(means)
    tied = [v for v, mu in zip(values, means) if mu <= lowest + TIE_RTOL * max(1.0, abs(lowest))]
    if default in tied:
        return default
    return min(tied)


def run_sweep(config: Config, param_order, grids: dict, seeds=None, method: str = "beacon") -> SweepReport:
    """Greedy coordinate-wise sweep: tune one field at a time by mean
    held-out risk over seeds, fix its best value, then move on.

    Ties go to the field's default value, then to the smaller value.
    """
    known = {f.name for f in dataclasses.fields(HyperParams)}
    for name in param_order:
        if name not in known:
            raise ConfigError(name, "unknown hyperparameter")
        if name not in grids or not grids[name]:
            raise ConfigError(name, "no grid values given")
    seeds = config.run.seed_list() if seeds is None else list(seeds)
    setups = {seed: _seed_setup(config, seed) for seed in seeds}
    defaults = HyperParams()
    hp = config.hyper
    best, results = {}, []
    for name in param_order:
        values = list(grids[name])
        means = []
        for value in values:
            try:
                trial = hp.replace(**{name: value})
            except ConfigError as err:
                raise ConfigError(name, str(err)) from None
            risks = [run_method(method, trial, *setups[s], s).final_risk for s in seeds]
            means.append(float(np.mean(risks)))
            results.append({"field": name, "value": value, "mean_risk": means[-1], "risks": risks})
        best[name] = _pick(values, means, getattr(defaults, name))
        hp = hp.replace(**{name: best[name]})
    return SweepReport(best=best, results=results, hyper=hp)


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def export_metrics(report: BenchReport, out_dir, full_weights: bool = False) -> list[Path]:
    """Write ``metrics.csv``, ``weights.jsonl`` and ``summary.json``.

    The first two depend only on the report contents; wall times go to the
    summary only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path, weights_path, summary_path = out / "metrics.csv", out / "weights.jsonl", out / "summary.json"

    with metrics_path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for cell in report.cells:
            refreshes = {row["epoch"]: row for row in cell.report.weight_log}
            current: dict = {}
            for row in cell.report.metrics:
                current = refreshes.get(row["epoch"], current)
                writer.writerow(
                    [cell.method, cell.seed, row["epoch"], _fmt(row["target_risk"])]
                    + [_fmt(current.get(f"mean_q_{g}")) for g in ("source", "target", "clean", "corrupt")]
                )

    with weights_path.open("w") as fh:
        for cell in report.cells:
            domains = {row["epoch"]: row["w"] for row in cell.report.domain_log}
            for row, q in zip(cell.report.weight_log, cell.report.q_history):
                record = {"method": cell.method, "seed": cell.seed, **row}
                if row["epoch"] in domains:
                    record["w"] = domains[row["epoch"]]
                if full_weights:
                    record["q"] = q.tolist()
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    summary = {
        "aggregate": report.aggregate(),
        "wins": report.win_counts(),
        "cells": [
            {
                "method": c.method,
                "seed": c.seed,
                "dataset_hash": c.dataset_hash,
                "final_risk": c.final_risk,
                "wall_time": c.wall_time,
                "weights": c.weights,
            }
            for c in report.cells
        ],
        "config": report.config,
    }
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return [metrics_path, weights_path, summary_path]
