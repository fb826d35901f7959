"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (bad or unreadable
input files, inconsistent inputs), 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from ..datagen import gen_linear_dataset, gen_nonlinear_dataset, load_dataset, save_dataset
from ..entropy import meann_entropy, write_traces_csv
from ..errors import DataFileError, InvalidInputError, MalformedFileError, NumericalError
from ..network import save_params
from ..randomfield import KernelConfig
from ..theory import fuzz
from .config import TrainConfig, load_config
from .experiments import RESULT_COLUMNS, SUITES, SuiteOptions, ablation_suite
from .training import train_run

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _fmt(x: float) -> str:
    return format(x, ".17g")


def _cmd_generate(args) -> int:
    if args.task == "linear":
        d = gen_linear_dataset(args.n, args.m, KernelConfig(args.length_scale, args.sigma2), args.seed,
                               queries_per_function=args.queries_per_function)
    else:
        d = gen_nonlinear_dataset(args.n, args.m, args.sigma2, args.seed,
                                  queries_per_function=args.queries_per_function)
    save_dataset(d, args.out)
    print(f"wrote {d.n} rows to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    train, test = load_dataset(args.train), load_dataset(args.test)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, traces, failed = [], [], False
    for seed in seeds:
        r = train_run(cfg, train, test, seed, method=f"seed={seed}", keep_params=True)
        if r.diverged:
            print(f"seed {seed}: diverged: {r.message}", file=sys.stderr)
            failed = True
            continue
        rows.append(["train", cfg.task, "config", seed, _fmt(r.final_test_mse),
                     _fmt(r.entropy_final), "" if args.no_timing else _fmt(r.wall_time)])
        traces.append(r.entropy)
        save_params(r.params, out / f"params_seed{seed}.txt", seed=seed)
        with open(out / f"curve_seed{seed}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "test_mse"])
            w.writerows([ep, _fmt(v)] for ep, v in zip(r.eval_epochs, r.test_mse))
        print(f"seed {seed}: test MSE {r.final_test_mse:.6g}")
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(rows)
    write_traces_csv(traces, out / "entropy.csv")
    return EXIT_NUMERICAL if failed else EXIT_OK


def _cmd_ablate(args) -> int:
    base = load_config(args.config) if args.config else TrainConfig()
    if args.epochs is not None:
        base = base.replace(epochs=args.epochs)
    opts = SuiteOptions(
        k_runs=args.seeds, master_seed=args.master_seed, n_train=args.n_train, n_test=args.n_test,
        full_test=args.full_test, tasks=tuple(args.tasks), base=base, workers=args.workers,
        timing=not args.no_timing, cache_dir=args.cache)
    res = ablation_suite(args.suite, args.out, opts)
    for (task, cid), s in res.cells.items():
        print(f"{task:10s} {cid:22s} {s.mean:.4e} +- {s.std:.2e}")
    for f in res.files:
        print(f"wrote {f}")
    return EXIT_OK


def _cmd_verify_lemma(args) -> int:
    s = fuzz(args.instances, args.seed, args.epsilon)
    print(f"holds: {s.holds}/{s.instances}")
    print(f"eta_for_epsilon below {args.epsilon:g}: {s.eta_ok}/{s.instances}")
    print(f"worst slack: {s.worst_slack:.3e}")
    ok = s.holds == s.instances and s.eta_ok == s.instances
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_NUMERICAL


def _read_features(path) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise DataFileError(f"cannot read {path}: {exc}") from exc
    if rows:
        try:
            [float(v) for v in rows[0]]
        except ValueError:
            rows = rows[1:]  # header
    try:
        Z = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise MalformedFileError(f"{path}: ragged or non-numeric rows") from exc
    if Z.ndim != 2 or not np.all(np.isfinite(Z)):
        raise MalformedFileError(f"{path}: expected a finite numeric table")
    return Z


def _cmd_entropy(args) -> int:
    est = meann_entropy(_read_features(args.input), args.epsilon, args.normalize)
    line = f"{_fmt(est.value)}\n"
    if args.out:
        Path(args.out).write_text(f"n,dim,entropy\n{est.n},{est.dim},{_fmt(est.value)}\n")
    sys.stdout.write(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ordent", description="Ordinal-entropy regression experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write an operator-learning dataset")
    g.add_argument("--task", choices=("linear", "nonlinear"), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--m", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma2", type=float, default=1.0)
    g.add_argument("--length-scale", type=float, default=0.2, help="linear task only")
    g.add_argument("--queries-per-function", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=_cmd_generate)

    t = sub.add_parser("train", help="train on dataset files")
    t.add_argument("--config")
    t.add_argument("--train", required=True)
    t.add_argument("--test", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--no-timing", action="store_true", help="leave wall_time_s empty")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_cmd_train)

    a = sub.add_parser("ablate", help="run an ablation suite")
    a.add_argument("--suite", choices=SUITES, required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", help="base training config")
    a.add_argument("--seeds", type=int, default=10, help="runs per cell")
    a.add_argument("--master-seed", type=int, default=0)
    a.add_argument("--tasks", nargs="+", choices=("linear", "nonlinear"),
                   default=["linear", "nonlinear"])
    a.add_argument("--n-train", type=int, default=1000)
    a.add_argument("--n-test", type=int, default=10_000)
    a.add_argument("--full-test", action="store_true", help="100k test samples on the linear task")
    a.add_argument("--epochs", type=int)
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--cache", help="directory of reusable per-run results")
    a.add_argument("--no-timing", action="store_true", help="leave wall_time_s empty")
    a.set_defaults(fn=_cmd_ablate)

    v = sub.add_parser("verify-lemma", help="fuzz the discretization bound")
    v.add_argument("--instances", type=int, default=10_000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--epsilon", type=float, default=1e-3)
    v.set_defaults(fn=_cmd_verify_lemma)

    e = sub.add_parser("entropy", help="meanNN entropy of a feature CSV")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--out")
    e.add_argument("--epsilon", type=float, default=1e-12)
    e.add_argument("--normalize", action="store_true")
    e.set_defaults(fn=_cmd_entropy)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (DataFileError, InvalidInputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


cli = main
