"""Mean-zero Gaussian random fields on a 1-D grid with an RBF covariance.

Random streams are numpy ``PCG64`` generators seeded through ``SeedSequence``,
so a draw depends only on the seed and is identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError

JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True, eq=False)
class Grid:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size < 2:
            raise InvalidInputError("grid needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InvalidInputError("grid coordinates must be finite")
        if np.any(np.diff(pts) <= 0):
            raise InvalidInputError("grid must be strictly increasing")
        if pts[0] < 0.0 or pts[-1] > 1.0:
            raise InvalidInputError("grid must lie within [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.size

    @classmethod
    def uniform(cls, count: int) -> "Grid":
        return cls(np.linspace(0.0, 1.0, count))

    def __eq__(self, other):
        return isinstance(other, Grid) and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class KernelConfig:
    length_scale: float = 0.2
    variance: float = 1.0
    jitter: float = 0.0

    def __post_init__(self):
        if not self.length_scale > 0:
            raise InvalidInputError(f"length_scale must be > 0, got {self.length_scale}")
        if not self.variance > 0:
            raise InvalidInputError(f"variance must be > 0, got {self.variance}")
        if not self.jitter >= 0:
            raise InvalidInputError(f"jitter must be >= 0, got {self.jitter}")


@dataclass(frozen=True, eq=False)
class FieldSample:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (self.grid.count,):
            raise InvalidInputError(
                f"field has {vals.shape} values for a grid of {self.grid.count} points"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("field values must be finite")
        object.__setattr__(self, "values", vals)

    def restrict(self, indices) -> "FieldSample":
        return FieldSample(Grid(self.grid.points[indices]), self.values[indices])


@dataclass(frozen=True)
class CovarianceFactor:
    """Lower Cholesky factor of a kernel matrix plus the jitter it needed."""

    grid: Grid
    lower: np.ndarray
    jitter: float


def nested_grids(m: int, min_fine: int = 1000) -> tuple[Grid, np.ndarray]:
    """Fine uniform grid of at least ``min_fine`` points containing the uniform
    ``m``-point sensor grid exactly; returns the grid and the sensor indices."""
    if m < 2:
        raise InvalidInputError("need at least 2 sensors")
    stride = max(1, -(-(min_fine - 1) // (m - 1)))
    fine = Grid.uniform((m - 1) * stride + 1)
    return fine, np.arange(m) * stride


def rbf_kernel_matrix(grid: Grid, cfg: KernelConfig) -> np.ndarray:
    x = grid.points
    diff = x[:, None] - x[None, :]
    K = cfg.variance * np.exp(-(diff * diff) / (2.0 * cfg.length_scale**2))
    # diff is exactly antisymmetric, so K is exactly symmetric
    K[np.diag_indices_from(K)] += cfg.jitter
    return K


def factor_covariance(K: np.ndarray, grid: Grid | None = None) -> CovarianceFactor:
    """Cholesky factor of ``K``; adds escalating diagonal jitter if needed.

    Tries the bare matrix first, then jitter 1e-10, 1e-9, ... up to 1e-6.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidInputError(f"covariance must be square, got {K.shape}")
    if not np.array_equal(K, K.T):
        raise InvalidInputError("covariance must be symmetric")
    if grid is None:
        grid = Grid.uniform(K.shape[0])
    jitter = 0.0
    eye = np.eye(K.shape[0])
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * eye if jitter else K)
            return CovarianceFactor(grid, L, jitter)
        except np.linalg.LinAlgError:
            pass
        jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
        if jitter > JITTER_MAX * (1 + 1e-9):
            min_eig = float(np.linalg.eigvalsh(K)[0])
            raise NumericalError(
                f"Cholesky failed with jitter up to {JITTER_MAX:g}; "
                f"n={K.shape[0]}, smallest eigenvalue {min_eig:.3e}"
            )


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sample_grf(factor: CovarianceFactor, rng_seed) -> FieldSample:
    """One draw ``L @ xi`` with ``xi`` standard normal.

    ``rng_seed`` may be an int, a ``SeedSequence`` or an existing ``Generator``.
    """
    xi = _generator(rng_seed).standard_normal(factor.lower.shape[0])
    return FieldSample(factor.grid, factor.lower @ xi)


def sample_grf_batch(factor: CovarianceFactor, seeds) -> np.ndarray:
    """Stack of draws, one row per seed; row ``i`` equals ``sample_grf(factor, seeds[i])``."""
    out = np.empty((len(seeds), factor.lower.shape[0]))
    for i, s in enumerate(seeds):
        # per-row matvec keeps each row bit-identical to sample_grf
        out[i] = sample_grf(factor, s).values
    return out
