"""Training, multi-seed experiments, ablation suites and the CLI."""

from .config import TrainConfig, load_config, save_config
from .experiments import SeedSummary, SuiteOptions, ablation_suite, aggregate, derive_seeds, multi_seed
from .training import RunResult, train_run

__all__ = [
    "RunResult", "SeedSummary", "SuiteOptions", "TrainConfig", "ablation_suite", "aggregate",
    "derive_seeds", "load_config", "multi_seed", "save_config", "train_run",
]
