"""Single training run: mini-batch training of the two-layer network on one
operator dataset, with periodic test MSE and feature-entropy evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from ..datagen import Dataset
from ..entropy import EntropyTrace, entropy_trace_update, evaluation_subset
from ..errors import InvalidInputError, NumericalError
from ..network import MlpParams, backward, forward, init_params
from ..objectives import discretize_targets, total_loss
from .config import TrainConfig
from .optim import SGD, Adam

log = logging.getLogger(__name__)


@dataclass
class RunResult:
    seed: int
    final_test_mse: float
    eval_epochs: list[int] = field(default_factory=list)
    test_mse: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)  # mean total loss per epoch
    entropy: EntropyTrace = field(default_factory=EntropyTrace)
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)
    diverged: bool = False
    message: str = ""
    params: MlpParams | None = None

    @property
    def entropy_final(self) -> float:
        return float(self.entropy.values[-1]) if len(self.entropy) else float("nan")


class ClassBins:
    """Uniform label bins fixed from the training labels; predictions are bin centers."""

    def __init__(self, y_train: np.ndarray, K: int):
        self.K = K
        self.lo = float(y_train.min())
        self.hi = float(y_train.max())
        if not self.hi > self.lo:
            self.hi = self.lo + 1.0

    def classes(self, y: np.ndarray) -> np.ndarray:
        return discretize_targets(y, self.K, self.lo, self.hi).indices

    def predict(self, logits: np.ndarray) -> np.ndarray:
        width = (self.hi - self.lo) / self.K
        return self.lo + (np.argmax(logits, axis=1) + 0.5) * width


def _derived_seeds(seed: int) -> tuple[int, int, int]:
    init_s, shuffle_s, sub_s = np.random.SeedSequence(seed).generate_state(3)
    return int(init_s), int(shuffle_s), int(sub_s)


def predict(p: MlpParams, X: np.ndarray, bins: ClassBins | None = None, chunk: int = 4096):
    """Predictions and hidden features for a whole dataset, evaluated in chunks."""
    preds, feats = [], []
    for start in range(0, X.shape[0], chunk):
        c = forward(p, X[start:start + chunk])
        preds.append(c.yhat[:, 0] if bins is None else bins.predict(c.yhat))
        feats.append(c.z)
    return np.concatenate(preds), np.concatenate(feats)


def train_run(cfg: TrainConfig, train: Dataset, test: Dataset, seed: int | None = None,
              *, method: str = "", keep_params: bool = False) -> RunResult:
    """Train from scratch with ``seed`` (default ``cfg.seeds[0]``).

    Deterministic for a given (cfg, seed, data). A non-finite loss stops
    training and returns a result flagged ``diverged``.
    """
    seed = cfg.seeds[0] if seed is None else seed
    if train.m != test.m:
        raise InvalidInputError(f"train m={train.m} but test m={test.m}")
    kind = train.meta.get("kind")
    if kind is not None and kind != cfg.task:
        raise InvalidInputError(f"config task {cfg.task!r} but training data is {kind!r}")
    t0 = time.perf_counter()
    init_seed, shuffle_seed, sub_seed = _derived_seeds(seed)

    X, y = train.inputs(), train.targets
    X_test, y_test = test.inputs(), test.targets
    bins = ClassBins(y, cfg.n_classes) if cfg.head == "classification" else None
    out_dim = cfg.n_classes if bins else 1
    p = init_params(X.shape[1], cfg.hidden, out_dim, init_seed, cfg.activation)
    params = p.arrays()
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps) if cfg.optimizer == "adam" \
        else SGD(cfg.learning_rate)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seed))
    ent_idx = evaluation_subset(X_test.shape[0], cfg.entropy_subset, cfg.entropy_seed)
    ent_every = cfg.entropy_every or cfg.eval_every
    reg = cfg.regularizer
    y_classes = bins.classes(y) if bins else None

    result = RunResult(seed=seed, final_test_mse=float("nan"), config=cfg.to_dict(),
                       entropy=EntropyTrace("test", method))
    step = 0
    n = X.shape[0]
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(n)
            if cfg.lr_schedule == "cosine":
                frac = (epoch - 1) / cfg.epochs
                opt.lr = 0.5 * cfg.learning_rate * (1.0 + np.cos(np.pi * frac))
            epoch_loss = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                with np.errstate(over="ignore", invalid="ignore"):
                    cache = forward(p, X[idx])
                step_reg = reg
                if reg.lambda_d > 0 and len(idx) < 2:
                    step_reg = replace(reg, lambda_d=0.0)
                elif reg.sample_size_M > len(idx):
                    # short last batch
                    step_reg = replace(reg, sample_size_M=len(idx))
                br, g_yhat, g_z, g_zhat = total_loss(
                    cache, y[idx], step_reg,
                    classes=None if bins is None else y_classes[idx],
                    seed=sub_seed, step=step)
                if not np.isfinite(br.total):
                    raise NumericalError(f"non-finite loss at epoch {epoch}, step {step}")
                grads = backward(p, cache, g_yhat, g_z, g_zhat)
                opt.step(params, grads.arrays())
                epoch_loss += br.total * len(idx)
                step += 1
            result.train_loss.append(epoch_loss / n)

            last = epoch == cfg.epochs
            if epoch % cfg.eval_every == 0 or last:
                pred, _ = predict(p, X_test, bins)
                mse = float(np.mean((pred - y_test) ** 2))
                if not np.isfinite(mse):
                    raise NumericalError(f"non-finite test MSE at epoch {epoch}")
                result.eval_epochs.append(epoch)
                result.test_mse.append(mse)
            if epoch % ent_every == 0 or last:
                feats = forward(p, X_test[ent_idx]).z
                entropy_trace_update(result.entropy, epoch, feats,
                                     normalize=cfg.entropy_normalize)
    except (NumericalError, FloatingPointError) as exc:
        result.diverged = True
        result.message = str(exc)
        log.warning("seed %d diverged: %s", seed, exc)

    result.final_test_mse = result.test_mse[-1] if result.test_mse and not result.diverged \
        else float("nan")
    result.wall_time = time.perf_counter() - t0
    if keep_params:
        result.params = p
    return result
