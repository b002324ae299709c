"""Command line: ``gface {gen-data,train,eval,bound-check,report}``.

Exit codes: 0 success, 2 bad input or usage, 3 training diverged,
4 bound coefficient nonpositive (alpha <= theta), 5 bound violated.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import config as C
from .data import DatasetError, atomic_write, generate_synthetic, load_embeddings, save_embeddings
from .evaluation import cluster_acc, evaluate_model, kmeans
from .model import CheckpointError, extract, load_checkpoint, save_checkpoint
from .report import ReportError, write_report
from .theory import BoundViolation, bound_check
from .train import TrainingDiverged, train

EXIT_INPUT, EXIT_DIVERGED, EXIT_COEFFICIENT, EXIT_VIOLATED = 2, 3, 4, 5

RUN_FILES = ("config.yaml", "checkpoint.gfck", "history.csv", "summary.txt")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _config(args) -> C.RunConfig:
    return C.with_seed(C.load_config(args.config), getattr(args, "seed", None))


def _dataset(path):
    try:
        return load_embeddings(path)
    except FileNotFoundError:
        raise CliError(f"data file not found: {path}") from None
    except DatasetError as exc:
        raise CliError(f"{path}: {exc}") from None


def _checkpoint(path):
    try:
        return load_checkpoint(path)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {path}") from None
    except CheckpointError as exc:
        raise CliError(f"{path}: {exc}") from None


def _check_compatible(params, ds, ckpt, data) -> None:
    if params.dims.d != ds.d:
        raise CliError(f"dimension mismatch: checkpoint {ckpt} expects feature dimension "
                       f"d={params.dims.d}, data {data} has d={ds.d}")
    if params.dims.K != ds.K:
        raise CliError(f"dimension mismatch: checkpoint {ckpt} has K={params.dims.K} classes, "
                       f"data {data} has K={ds.K}")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _config(args).data
    out = Path(args.out)
    if not out.parent.is_dir():
        raise CliError(f"cannot write {out}: directory {out.parent} does not exist")
    try:
        ds = generate_synthetic(cfg.K, cfg.N, cfg.d, cfg.per_class_counts, cfg.class_separation,
                                cfg.overlap_pairs, cfg.seed, cfg.noise, cfg.labeled_fraction)
    except DatasetError as exc:
        raise CliError(f"invalid data spec: {exc}") from None
    try:
        save_embeddings(ds, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror}") from None
    m = ds.manifest()
    print(f"wrote {out} ({len(ds)} samples, K={m['K']}, N={m['N']}, theta={m['theta']:.4g})")
    return 0


def cmd_train(args) -> int:
    run = _config(args)
    cfg = run.train
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs, warmup=min(cfg.warmup, args.epochs))
    if args.ablate == "no-debias":
        cfg = cfg.ablated()
    run = replace(run, train=cfg)
    ds = _dataset(args.data)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise CliError(f"run directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.yaml", C.dump_config(run))
    try:
        params, history = train(ds, cfg)
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        print(f"replay seed: {exc.seed}", file=sys.stderr)
        return EXIT_DIVERGED
    save_checkpoint(params, out / "checkpoint.gfck")
    history.save(out / "history.csv")
    last = history.rows[-1]
    summary = (f"epochs={len(history)} loss_total={last['loss_total']:.6g} "
               f"acc_all={last['acc_all']:.4f} acc_old={last['acc_old']:.4f} "
               f"acc_new={last['acc_new']:.4f}")
    atomic_write(out / "summary.txt", summary + "\n")
    print(summary)
    return 0


def cmd_eval(args) -> int:
    run = _config(args)
    ds = _dataset(args.data)
    params = _checkpoint(args.checkpoint)
    _check_compatible(params, ds, args.checkpoint, args.data)
    if not ds.has_ground_truth:
        raise CliError(f"{args.data}: unlabeled rows carry no classes, accuracy is undefined")
    reports = [("model", evaluate_model(params, ds, run.eval.tau, run.eval.matching))]
    if args.baseline == "kmeans":
        x_u, y_u = ds.unlabeled_truth()
        for label, feats in (("kmeans-raw", x_u), ("kmeans-features", extract(params, x_u).data)):
            pred = kmeans(feats, ds.K, run.eval.kmeans_seed)
            reports.append((label, cluster_acc(pred, y_u, ds.old_classes, ds.K, run.eval.matching)))
    for label, rep in reports:
        print(rep.to_text(label))
    rows = "".join(rep.to_csv(label, header=(i == 0)) for i, (label, rep) in enumerate(reports))
    if args.csv:
        atomic_write(args.csv, rows)
    else:
        print(rows, end="")
    return 0


def cmd_bound_check(args) -> int:
    run = _config(args)
    th = run.theory
    alpha = th.alpha if args.alpha is None else args.alpha
    n_perturb = th.n_perturb if args.n_perturb is None else args.n_perturb
    ds = _dataset(args.data)
    params = _checkpoint(args.checkpoint)
    _check_compatible(params, ds, args.checkpoint, args.data)
    if not ds.has_ground_truth:
        raise CliError(f"{args.data}: the bound check needs ground truth for every sample")
    report = bound_check(params, ds, run.train, alpha, n_perturb, th.reference_epochs,
                         th.perturb_scale, run.eval.tau, th.align)
    print(report.to_text(), end="")
    if args.csv:
        atomic_write(args.csv, report.to_csv())
    else:
        print(report.to_csv(), end="")
    if not report.coefficient_positive:
        print(f"error: coefficient nonpositive: alpha={alpha} <= theta={report.theta:.4g}; "
              "the bound is not asserted", file=sys.stderr)
        return EXIT_COEFFICIENT
    if report.checked and not report.holds:
        print(f"error: {BoundViolation.__name__}: lhs {report.lhs} > rhs {report.rhs}",
              file=sys.stderr)
        return EXIT_VIOLATED
    return 0


def cmd_report(args) -> int:
    try:
        paths = write_report(Path(args.rundir) / "history.csv", args.out)
    except ReportError as exc:
        raise CliError(str(exc)) from None
    for p in paths:
        print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gface", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="YAML run configuration (defaults if omitted)")
        if seed:
            p.add_argument("--seed", type=int, help=f"override the config seed (and ${C.SEED_ENV})")

    p = sub.add_parser("gen-data", help="write a synthetic embedding CSV and manifest")
    common(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on an embedding file")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--ablate", choices=["no-debias"],
                   help="no-debias: zero the adversarial, balance and cluster weights")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="All/Old/New accuracy of a checkpoint")
    common(p, seed=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", choices=["kmeans"], help="also report k-means on raw and on extracted features")
    p.add_argument("--csv", help="write the machine-readable rows here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bound-check", help="evaluate both sides of the new-class bound")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--n-perturb", type=int, dest="n_perturb")
    p.add_argument("--csv", help="write the report row here instead of stdout")
    p.set_defaults(func=cmd_bound_check)

    p = sub.add_parser("report", help="SVG plots and a CSV digest of a run's history")
    p.add_argument("--rundir", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except C.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
