"""Multi-seed aggregation, the ablation suites and their CSV outputs."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datagen import Dataset, gen_linear_dataset, gen_nonlinear_dataset, load_dataset, save_dataset
from ..entropy import EntropyEstimate, EntropyTrace, write_traces_csv
from ..errors import InvalidInputError
from .config import TrainConfig
from .training import RunResult, train_run

log = logging.getLogger(__name__)

SUITES = ("table1", "sweep_M", "sweep_lambda_d", "entropy_curves")
RESULT_COLUMNS = ("suite", "task", "config_id", "seed", "test_mse", "entropy_final", "wall_time_s")
LAMBDA_D = 1e-3
M_VALUES = (2, 4, 8, 16, 32, 64, 0)  # 0 = full batch
LAMBDA_GRID = tuple(10.0 ** k for k in range(-5, 1))


def derive_seeds(master_seed: int, k: int) -> tuple[int, ...]:
    """``k`` run seeds from one master seed; a prefix of a longer derivation."""
    if k < 1:
        raise InvalidInputError("need at least one run")
    return tuple(int(s) for s in np.random.SeedSequence(master_seed).generate_state(k))


@dataclass
class SeedSummary:
    mean: float
    std: float  # population std over seeds
    results: list[RunResult] = field(default_factory=list)

    @property
    def seeds(self) -> list[int]:
        return [r.seed for r in self.results]


def aggregate(results) -> SeedSummary:
    """Mean and std of final test MSE; independent of the order of ``results``."""
    results = sorted(results, key=lambda r: r.seed)
    vals = [r.final_test_mse for r in results]
    n = len(vals)
    if n == 0:
        raise InvalidInputError("nothing to aggregate")
    mean = math.fsum(vals) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n)
    return SeedSummary(mean, std, results)


# ---------------------------------------------------------------------------
# run cache


def _result_to_dict(r: RunResult) -> dict:
    return {
        "seed": r.seed, "final_test_mse": r.final_test_mse, "eval_epochs": r.eval_epochs,
        "test_mse": r.test_mse, "train_loss": r.train_loss,
        "entropy": {"split": r.entropy.split, "method": r.entropy.method,
                    "epochs": r.entropy.epochs,
                    "estimates": [[e.value, e.n, e.dim, e.normalized_inputs]
                                  for e in r.entropy.estimates]},
        "wall_time": r.wall_time, "config": r.config, "diverged": r.diverged,
        "message": r.message,
    }


def _result_from_dict(d: dict) -> RunResult:
    e = d["entropy"]
    trace = EntropyTrace(e["split"], e["method"], list(e["epochs"]),
                         [EntropyEstimate(v, n, dim, norm) for v, n, dim, norm in e["estimates"]])
    return RunResult(d["seed"], d["final_test_mse"], d["eval_epochs"], d["test_mse"],
                     d["train_loss"], trace, d["wall_time"], d["config"], d["diverged"],
                     d["message"])


def _cache_key(cfg: TrainConfig, seed: int, train: Dataset, test: Dataset, method: str) -> str:
    cfg_d = cfg.to_dict()
    cfg_d.pop("seeds")
    blob = json.dumps([cfg_d, seed, train.meta, test.meta, method], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:32]


def _run_one(args) -> RunResult:
    cfg, train, test, seed, method, cache_dir = args
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{_cache_key(cfg, seed, train, test, method)}.json"
        if path.exists():
            return _result_from_dict(json.loads(path.read_text()))
    r = train_run(cfg, train, test, seed, method=method)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(_result_to_dict(r)))
        tmp.replace(path)
    return r


def multi_seed(cfg: TrainConfig, train: Dataset, test: Dataset, k_runs: int | None = None, *,
               master_seed: int | None = None, method: str = "", workers: int = 1,
               cache_dir=None) -> SeedSummary:
    """Train one run per seed and aggregate.

    With ``k_runs`` the seeds are derived from ``master_seed`` (default
    ``cfg.seeds[0]``); otherwise ``cfg.seeds`` is used as given. Cached
    runs are reused when ``cache_dir`` holds a result for the same
    config, seed and data.
    """
    if k_runs is None:
        seeds = cfg.seeds
    else:
        seeds = derive_seeds(cfg.seeds[0] if master_seed is None else master_seed, k_runs)
    jobs = [(cfg, train, test, s, method, cache_dir) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    return aggregate(results)


# ---------------------------------------------------------------------------
# suites


@dataclass(frozen=True)
class SuiteOptions:
    k_runs: int = 10
    master_seed: int = 0
    n_train: int = 1000
    n_test: int = 10_000
    full_test: bool = False  # 100k test samples on the linear task
    train_seed: int = 1
    test_seed: int = 2
    tasks: tuple[str, ...] = ("linear", "nonlinear")
    base: TrainConfig = field(default_factory=TrainConfig)
    workers: int = 1
    timing: bool = True  # False writes an empty wall_time_s column
    cache_dir: str | None = None


def suite_cells(name: str, base: TrainConfig) -> list[tuple[str, TrainConfig]]:
    """(config_id, config) pairs run by suite ``name`` for one task."""
    if name not in SUITES:
        raise InvalidInputError(f"unknown suite {name!r}; choose from {SUITES}")
    ld = base.with_regularizer(lambda_d=LAMBDA_D)
    if name == "table1":
        return [
            ("baseline", base),
            ("ld_unweighted", ld.with_regularizer(weight_fn="constant_one")),
            ("ld", ld),
            ("ld_cosine", ld.with_regularizer(feature_distance="cosine")),
            ("ld_no_normalization", ld.with_regularizer(normalize_features=False)),
            ("ld_squared_l2", ld.with_regularizer(weight_fn="squared_l2")),
            ("ld_sqrt_l2", ld.with_regularizer(weight_fn="sqrt_l2")),
        ]
    if name == "sweep_M":
        cells = [("baseline", base)]
        for M in M_VALUES:
            cells.append((f"M={M or 'full'}", ld.with_regularizer(sample_size_M=M)))
        return cells
    if name == "sweep_lambda_d":
        cells = [("baseline", base)]
        for lam in LAMBDA_GRID:
            cells.append((f"lambda_d={lam:g}", base.with_regularizer(lambda_d=lam)))
        return cells
    traced = base.replace(entropy_every=1)
    return [
        ("regression", traced),
        ("classification", traced.replace(head="classification", n_classes=100)),
        ("ld_unweighted", traced.with_regularizer(lambda_d=LAMBDA_D, weight_fn="constant_one")),
        ("ld", traced.with_regularizer(lambda_d=LAMBDA_D)),
        ("ld_lt", traced.with_regularizer(lambda_d=LAMBDA_D, lambda_t=LAMBDA_D)),
    ]


def task_data(task: str, opts: SuiteOptions, data_dir=None) -> tuple[Dataset, Dataset]:
    """Train and test sets for ``task``, reloaded from ``data_dir`` when present there."""
    gen = gen_linear_dataset if task == "linear" else gen_nonlinear_dataset
    n_test = 100_000 if opts.full_test and task == "linear" else opts.n_test
    out = []
    for split, n, seed in (("train", opts.n_train, opts.train_seed), ("test", n_test, opts.test_seed)):
        path = None if data_dir is None else Path(data_dir) / f"{task}_{split}_n{n}_s{seed}.csv"
        if path is not None and path.exists():
            out.append(load_dataset(path))
            continue
        d = gen(n, seed=seed)
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            save_dataset(d, path)
        out.append(d)
    return out[0], out[1]


def _fmt(x: float) -> str:
    return format(x, ".17g")


def mean_trace(results, method: str) -> EntropyTrace:
    """Per-epoch mean of the seeds' traces (all must share epochs)."""
    epochs = results[0].entropy.epochs
    if any(r.entropy.epochs != epochs for r in results):
        raise InvalidInputError("entropy traces have different epochs")
    vals = np.array([r.entropy.values for r in results])
    first = results[0].entropy.estimates
    est = [EntropyEstimate(float(v), e.n, e.dim, e.normalized_inputs)
           for v, e in zip(vals.mean(axis=0), first)]
    return EntropyTrace(results[0].entropy.split, method, list(epochs), est)


@dataclass
class SuiteResult:
    name: str
    cells: dict  # (task, config_id) -> SeedSummary
    files: list[Path]


def ablation_suite(name: str, out_dir, opts: SuiteOptions = SuiteOptions()) -> SuiteResult:
    """Run every cell of suite ``name`` on each task and write its CSVs.

    Files: ``<name>_results.csv`` (one row per run), ``<name>_summary.csv``
    (mean/std per cell) and ``<name>_<task>_entropy.csv`` (seed-mean traces).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = {}
    for task in opts.tasks:
        base = opts.base.replace(task=task)
        train, test = task_data(task, opts, out / "data")
        for config_id, cfg in suite_cells(name, base):
            log.info("%s %s %s", name, task, config_id)
            cells[(task, config_id)] = multi_seed(
                cfg, train, test, opts.k_runs, master_seed=opts.master_seed, method=config_id,
                workers=opts.workers, cache_dir=opts.cache_dir)

    files = [out / f"{name}_results.csv", out / f"{name}_summary.csv"]
    with open(files[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for (task, cid), summ in cells.items():
            for r in summ.results:
                w.writerow([name, task, cid, r.seed, _fmt(r.final_test_mse),
                            _fmt(r.entropy_final), _fmt(r.wall_time) if opts.timing else ""])
    with open(files[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "task", "config_id", "runs", "mean_test_mse", "std_test_mse"])
        for (task, cid), summ in cells.items():
            w.writerow([name, task, cid, len(summ.results), _fmt(summ.mean), _fmt(summ.std)])
    for task in opts.tasks:
        traces = [mean_trace(s.results, cid) for (t, cid), s in cells.items() if t == task]
        path = out / f"{name}_{task}_entropy.csv"
        write_traces_csv(traces, path)
        files.append(path)
    return SuiteResult(name, cells, files)
