"""Command-line entry point.

Exit codes: 0 on success, 1 on a configuration or usage error, 2 on a
runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from beacon.bench import BenchReport, CellResult, _seed_setup, export_metrics, run_experiment, run_method, run_sweep
from beacon.core import TARGET, ConfigError, Dataset, HyperParams, load_config, seed_rng
from beacon.discrepancy import (
    DegenerateSpreadError,
    LocalizedSpec,
    classifier_discrepancy,
    knn_discrepancy,
    localized_discrepancy,
)
from beacon.learner import init_learner, train_reference
from beacon.trainer import weight_stats

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header row plus a float matrix; comma separated, ``.`` decimal."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size and data.shape[1] != len(header):
        raise ConfigError(str(path), "row width differs from header")
    return header, data.reshape(-1, len(header))


def _columns(header, data, prefix):
    cols = [i for i, name in enumerate(header) if name.strip().startswith(prefix)]
    return data[:, cols]


def _write_checkpoints(out: Path, report, train: Dataset) -> None:
    ckpt = out / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    report.learner.save(ckpt / "learner.json")
    for row, q in zip(report.weight_log, report.q_history):
        snap = {"epoch": row["epoch"], "q": q.tolist(), **weight_stats(q, train)}
        (ckpt / f"weights_{row['epoch']:05d}.json").write_text(json.dumps(snap, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    config = load_config(args.config)
    method = args.method or config.run.methods[0]
    if method not in ("beacon", "beacon_multi", "target_only", "cotrain"):
        raise ConfigError("method", f"unknown method {method!r}")
    full = args.log_weights == "full" or config.run.log_weights == "full"
    seed = config.run.seed if args.seed is None else args.seed
    train, heldout, init = _seed_setup(config, seed)
    rep = run_method(method, config.hyper, train, heldout, init, seed)
    stats = weight_stats(rep.weights.q, train) if rep.weights is not None else {}
    bench = BenchReport([CellResult(method, seed, train.digest(), rep.final_risk, 0.0, stats, rep)], config.to_dict())
    out = Path(args.out)
    export_metrics(bench, out, full_weights=full)
    if full:
        _write_checkpoints(out, rep, train)
    print(f"{method} seed={seed} final_target_risk={rep.final_risk:.6g}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = load_config(args.config)
    seeds = config.run.seed_list(args.seeds)
    methods = args.methods.split(",") if args.methods else None
    report = run_experiment(config, methods=methods, seeds=seeds)
    full = args.log_weights == "full" or config.run.log_weights == "full"
    export_metrics(report, args.out, full_weights=full)
    for meth, agg in report.aggregate().items():
        print(f"{meth}: mean={agg['mean_risk']:.6g} std={agg['std_risk']:.6g} runs={agg['runs']}")
    print("wins:", json.dumps(report.win_counts(), sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    try:
        grids = json.loads(Path(args.grids).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError("grids", f"parse failure: {err}") from None
    if not isinstance(grids, dict):
        raise ConfigError("grids", "must be a JSON object of value lists")
    order = [name.strip() for name in args.order.split(",") if name.strip()]
    seeds = config.run.seed_list(args.seeds) if args.seeds else None
    report = run_sweep(config, order, grids, seeds=seeds, method=args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    print("best:", json.dumps(report.best, sort_keys=True))
    return EXIT_OK


def cmd_discrepancy(args) -> int:
    s_head, S = read_csv(args.source)
    t_head, T = read_csv(args.target)
    if args.estimator == "knn":
        d, aux = knn_discrepancy(S, T, args.k), None
    elif args.estimator == "classifier":
        d, aux = classifier_discrepancy(S, T, seed_rng(args.seed))
    else:
        if args.radius is None:
            raise ConfigError("radius", "required for the localized estimator")
        Xs, Ys = _columns(s_head, S, "x"), _columns(s_head, S, "y")
        Xt, Yt = _columns(t_head, T, "x"), _columns(t_head, T, "y")
        if Xs.shape[1] == 0 or Ys.shape[1] == 0 or Xs.shape[1] != Xt.shape[1] or Ys.shape[1] != Yt.shape[1]:
            raise ConfigError("columns", "localized estimator needs matching x* and y* columns")
        hp = HyperParams(radius=args.radius, estimator="localized")
        data = Dataset(
            np.vstack([Xs, Xt]),
            np.vstack([Ys, Yt]),
            np.concatenate([np.zeros(len(Xs), dtype=int), np.full(len(Xt), TARGET)]),
            np.zeros(len(Xs) + len(Xt), dtype=bool),
            1,
        )
        init = init_learner(Xs.shape[1], Ys.shape[1], hp.embed_dim, seed_rng(args.seed), hp.loss)
        ref = train_reference(data.targets(), hp.reference_epochs, hp.eta_theta, rng=None, init=init, freeze_encoder=True)
        aux = localized_discrepancy(ref, data, LocalizedSpec.from_hyper(hp))
        d = np.full(len(Xs), max(aux, 0.0))
    print("d")
    for value in d:
        print(repr(float(value)))
    if aux is not None:
        print(f"aux={aux!r}")
    return EXIT_OK


def cmd_check_projections(args) -> int:
    from beacon.oracles import check_projections

    result = check_projections(instances=args.instances, seed=args.seed)
    print(f"simplex max error: {result['simplex_max_err']:.3e}")
    print(f"box-sum max error: {result['box_sum_max_err']:.3e}")
    ok = max(result["simplex_max_err"], result["box_sum_max_err"]) <= 1e-3
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="beacon", description="Weighted source/target co-training toolkit.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train one method on one seed")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method")
    p.add_argument("--seed", type=int)
    p.add_argument("--log-weights", choices=("summary", "full"))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="compare methods across seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--methods", help="comma-separated method names")
    p.add_argument("--log-weights", choices=("summary", "full"))
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="greedy coordinate-wise hyperparameter sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--order", required=True, help="comma-separated field names")
    p.add_argument("--grids", required=True, help="JSON object mapping field to values")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int)
    p.add_argument("--method", default="beacon")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("discrepancy", help="score source rows against target rows")
    p.add_argument("--estimator", choices=("knn", "classifier", "localized"), default="knn")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float)
    p.set_defaults(func=cmd_discrepancy)

    p = sub.add_parser("check-projections", help="compare projections with the grid oracle")
    p.add_argument("--instances", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_projections)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"beacon: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"beacon: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"beacon: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateSpreadError, ValueError, OSError, ArithmeticError) as err:
        print(f"beacon: runtime error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
