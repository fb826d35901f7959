"""meanNN differential-entropy estimate of a point cloud, and per-epoch traces.

The estimator averages ``D * log ||z_i - z_j||^2`` over all ordered pairs
``i != j``. Its additive constant is dropped: values are only meaningful
relative to each other.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from .errors import InvalidInputError, NumericalError


@dataclass(frozen=True)
class EntropyEstimate:
    value: float
    n: int
    dim: int
    normalized_inputs: bool = False


def meann_entropy(Z, epsilon: float = 1e-12, normalize: bool = False) -> EntropyEstimate:
    """meanNN estimate of ``H(Z)`` up to a constant.

    ``epsilon`` is added to each squared distance before the log. With
    ``normalize`` the rows are first scaled to unit L2 norm.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    N, D = Z.shape
    if N < 2:
        raise InvalidInputError("meanNN entropy needs at least 2 points")
    if epsilon < 0:
        raise InvalidInputError("epsilon must be >= 0")
    if normalize:
        Z = Z / np.maximum(np.linalg.norm(Z, axis=1), 1e-12)[:, None]
    sq = pdist(Z, "sqeuclidean") + epsilon
    if np.any(sq <= 0.0):
        raise NumericalError("coincident points with epsilon=0 give log(0)")
    # each unordered pair stands for both (i, j) and (j, i)
    total = 2.0 * math.fsum(np.log(sq))
    return EntropyEstimate(D * total / (N * (N - 1)), N, D, normalize)


@dataclass
class EntropyTrace:
    split: str = "test"
    method: str = ""
    epochs: list[int] = field(default_factory=list)
    estimates: list[EntropyEstimate] = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    def rows(self):
        for ep, est in zip(self.epochs, self.estimates):
            yield ep, self.split, self.method, est.value


def entropy_trace_update(trace: EntropyTrace, epoch: int, Z, *, subset=None,
                         epsilon: float = 1e-12, normalize: bool = False) -> EntropyTrace:
    """Append the estimate for ``Z[subset]`` at ``epoch``; epochs must increase."""
    if trace.epochs and epoch <= trace.epochs[-1]:
        raise InvalidInputError(f"epoch {epoch} is not after {trace.epochs[-1]}")
    Z = np.asarray(Z)
    if subset is not None:
        Z = Z[subset]
    trace.epochs.append(int(epoch))
    trace.estimates.append(meann_entropy(Z, epsilon, normalize))
    return trace


def evaluation_subset(n: int, size: int = 512, seed: int = 0) -> np.ndarray:
    """Fixed sorted subset of row indices used for every epoch of a trace."""
    if size >= n:
        return np.arange(n)
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.sort(rng.choice(n, size=size, replace=False))


def write_traces_csv(traces, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "method", "entropy"])
        for tr in traces:
            for ep, split, method, val in tr.rows():
                w.writerow([ep, split, method, format(val, ".17g")])
