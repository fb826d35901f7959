"""Operator-learning datasets: ([u(x_1..x_m), y], G(u)(y)) regression pairs.

Two operators are provided. The linear one integrates a GRF draw from 0 to the
query point; the nonlinear one solves a 1-D diffusion problem whose log
coefficient is a GRF draw with a random correlation length.

Every function draw gets its own child ``SeedSequence`` spawned from the dataset
seed, so generation is a pure function of (n, m, config, seed) no matter how
the draws are scheduled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import (
    ConsistencyError,
    DataFileError,
    InvalidInputError,
    MalformedFileError,
    NumericalError,
    VersionMismatchError,
)
from .randomfield import (
    FieldSample,
    Grid,
    KernelConfig,
    factor_covariance,
    nested_grids,
    rbf_kernel_matrix,
)

FORMAT_VERSION = 1
HEADER_TAG = "#ordent-dataset"

FieldOverride = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class OperatorSample:
    sensors: np.ndarray
    query: float
    target: float


@dataclass(eq=False)
class Dataset:
    """Column-oriented storage; iterate to get :class:`OperatorSample` rows."""

    sensors: np.ndarray  # (n, m)
    queries: np.ndarray  # (n,)
    targets: np.ndarray  # (n,)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sensors = np.asarray(self.sensors, dtype=np.float64)
        self.queries = np.asarray(self.queries, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        n = self.queries.shape[0] if self.queries.ndim == 1 else -1
        if n < 1 or self.sensors.ndim != 2 or self.sensors.shape[0] != n:
            raise InvalidInputError("dataset needs n >= 1 rows with matching columns")
        if self.targets.shape != (n,):
            raise InvalidInputError("targets must have one entry per row")
        for arr in (self.sensors, self.queries, self.targets):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError("dataset values must be finite")
        if np.any(self.queries < 0.0) or np.any(self.queries > 1.0):
            raise InvalidInputError("queries must lie in [0, 1]")
        self.meta = dict(self.meta)
        if self.meta.setdefault("m", self.m) != self.m:
            raise ConsistencyError(f"meta says m={self.meta['m']} but rows have {self.m}")

    @property
    def n(self) -> int:
        return self.queries.shape[0]

    @property
    def m(self) -> int:
        return self.sensors.shape[1]

    @property
    def samples(self) -> list[OperatorSample]:
        return list(self)

    def __len__(self):
        return self.n

    def __iter__(self) -> Iterator[OperatorSample]:
        for i in range(self.n):
            yield OperatorSample(self.sensors[i], float(self.queries[i]), float(self.targets[i]))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.meta == other.meta
            and np.array_equal(self.sensors, other.sensors)
            and np.array_equal(self.queries, other.queries)
            and np.array_equal(self.targets, other.targets)
        )

    def inputs(self) -> np.ndarray:
        """Network encoding: sensor values followed by the query, shape (n, m + 1)."""
        return np.hstack([self.sensors, self.queries[:, None]])


def _child_generators(seed: int, count: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


# ---------------------------------------------------------------------------
# linear operator: s(x) = int_0^x u


def antiderivative(field: FieldSample, x) -> float | np.ndarray:
    """Composite-trapezoid integral of ``field`` from 0 to ``x``.

    Inside the cell containing ``x`` the field is interpolated linearly.
    """
    xq = np.asarray(x, dtype=np.float64)
    pts = field.grid.points
    if pts[0] != 0.0 or pts[-1] != 1.0:
        raise InvalidInputError("antiderivative needs a grid spanning [0, 1]")
    if np.any(~np.isfinite(xq)) or np.any(xq < 0.0) or np.any(xq > 1.0):
        raise InvalidInputError(f"query outside [0, 1]: {x}")
    vals = field.values
    cum = cumulative_trapezoid(vals, pts, initial=0.0)
    # whole cells up to the node left of x, then a trapezoid to the
    # linearly interpolated value at x
    k = np.clip(np.searchsorted(pts, xq, side="right") - 1, 0, pts.size - 2)
    u_x = np.interp(xq, pts, vals)
    out = cum[k] + 0.5 * (xq - pts[k]) * (vals[k] + u_x)
    return float(out) if out.ndim == 0 else out


def gen_linear_dataset(
    n: int,
    m: int = 100,
    kernel: KernelConfig = KernelConfig(),
    seed: int = 0,
    *,
    fine_points: int = 1000,
    queries_per_function: int = 1,
    field_override: FieldOverride | None = None,
) -> Dataset:
    """``n`` rows for the antiderivative operator.

    Each function draw lives on a fine uniform grid (at least ``fine_points``
    nodes) that contains the ``m`` sensors exactly. ``field_override`` maps the
    fine grid coordinates to field values and replaces the random draw.
    """
    if n < 1 or m < 2 or queries_per_function < 1:
        raise InvalidInputError("need n >= 1, m >= 2, queries_per_function >= 1")
    fine, sensor_idx = nested_grids(m, fine_points)
    factor = factor_covariance(rbf_kernel_matrix(fine, kernel), fine)
    n_funcs = -(-n // queries_per_function)

    sensors = np.empty((n, m))
    queries = np.empty(n)
    targets = np.empty(n)
    row = 0
    for gen in _child_generators(seed, n_funcs):
        # queries first, so they do not depend on the fine-grid size
        q = gen.uniform(size=queries_per_function)
        xi = gen.standard_normal(fine.count)
        if field_override is not None:
            values = np.asarray(field_override(fine.points), dtype=np.float64)
        else:
            values = factor.lower @ xi
        u = FieldSample(fine, values)
        s = antiderivative(u, q)
        take = min(queries_per_function, n - row)
        sensors[row : row + take] = values[sensor_idx]
        queries[row : row + take] = q[:take]
        targets[row : row + take] = s[:take]
        row += take

    meta = {
        "kind": "linear",
        "n": n,
        "m": m,
        "seed": seed,
        "length_scale": kernel.length_scale,
        "variance": kernel.variance,
        "kernel_jitter": kernel.jitter,
        "factor_jitter": factor.jitter,
        "fine_points": fine.count,
        "queries_per_function": queries_per_function,
    }
    return Dataset(sensors, queries, targets, meta)


# ---------------------------------------------------------------------------
# nonlinear operator: (e^b u')' = f, u(0) = u(1) = 0


def solve_spde(coeff_exponent: FieldSample, f=10.0) -> np.ndarray:
    """Finite-volume solve of ``(exp(b) u')' = f`` with zero Dirichlet ends.

    ``coeff_exponent`` holds ``b`` at the nodes of a uniform grid on [0, 1].
    The flux coefficient at each half point is the arithmetic mean of the two
    adjacent nodal values of ``exp(b)``. ``f`` is a scalar or an array of
    nodal values. Returns ``u`` at every node, boundary zeros included.
    """
    x = coeff_exponent.grid.points
    n_nodes = x.size
    if n_nodes - 2 < 16:
        raise InvalidInputError("solver grid needs at least 16 interior points")
    h = x[1] - x[0]
    if x[0] != 0.0 or x[-1] != 1.0 or not np.allclose(np.diff(x), h, rtol=1e-9, atol=0):
        raise InvalidInputError("solver grid must be uniform on [0, 1]")
    a = np.exp(coeff_exponent.values)
    if not np.all(a > 0) or not np.all(np.isfinite(a)):
        raise NumericalError("diffusion coefficient must be positive and finite")
    a_half = 0.5 * (a[:-1] + a[1:])

    rhs = np.broadcast_to(np.asarray(f, dtype=np.float64), (n_nodes,))[1:-1] * (h * h)
    n_int = n_nodes - 2
    ab = np.zeros((3, n_int))
    ab[0, 1:] = a_half[1:-1]
    ab[1, :] = -(a_half[:-1] + a_half[1:])
    ab[2, :-1] = a_half[1:-1]
    try:
        interior = solve_banded((1, 1), ab, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"tridiagonal solve failed: {exc}") from exc
    u = np.zeros(n_nodes)
    u[1:-1] = interior
    return u


def gen_nonlinear_dataset(
    n: int,
    m: int = 100,
    sigma2: float = 1.0,
    seed: int = 0,
    *,
    solver_nodes: int = 101,
    length_scale_range: tuple[float, float] = (1.0, 2.0),
    forcing: float = 10.0,
    queries_per_function: int = 1,
    field_override: FieldOverride | None = None,
) -> Dataset:
    """``n`` rows for the map from log-coefficient ``b`` to the diffusion solution.

    Per draw: ``l ~ U(length_scale_range)``, ``b ~ GP(0, sigma2 * RBF_l)`` sampled
    jointly on the solver nodes and the ``m`` sensors, solve, then evaluate the
    solution at a uniform query with a not-a-knot cubic spline.
    """
    if n < 1 or m < 2 or queries_per_function < 1:
        raise InvalidInputError("need n >= 1, m >= 2, queries_per_function >= 1")
    lo, hi = length_scale_range
    if not 0 < lo <= hi:
        raise InvalidInputError(f"bad length-scale range {length_scale_range}")
    solver_x = np.linspace(0.0, 1.0, solver_nodes)
    sensor_x = np.linspace(0.0, 1.0, m)
    union = np.union1d(solver_x, sensor_x)
    union_grid = Grid(union)
    solver_idx = np.searchsorted(union, solver_x)
    sensor_idx = np.searchsorted(union, sensor_x)
    solver_grid = Grid(solver_x)
    n_funcs = -(-n // queries_per_function)

    sensors = np.empty((n, m))
    queries = np.empty(n)
    targets = np.empty(n)
    max_jitter = 0.0
    row = 0
    for gen in _child_generators(seed, n_funcs):
        ell = gen.uniform(lo, hi)
        q = gen.uniform(size=queries_per_function)
        xi = gen.standard_normal(union.size)
        if field_override is not None:
            b = np.asarray(field_override(union), dtype=np.float64)
        else:
            K = rbf_kernel_matrix(union_grid, KernelConfig(ell, sigma2))
            factor = factor_covariance(K, union_grid)
            max_jitter = max(max_jitter, factor.jitter)
            b = factor.lower @ xi
        u = solve_spde(FieldSample(solver_grid, b[solver_idx]), forcing)
        s = CubicSpline(solver_x, u)(q)
        take = min(queries_per_function, n - row)
        sensors[row : row + take] = b[sensor_idx]
        queries[row : row + take] = q[:take]
        targets[row : row + take] = s[:take]
        row += take

    meta = {
        "kind": "nonlinear",
        "n": n,
        "m": m,
        "seed": seed,
        "sigma2": sigma2,
        "length_scale_min": lo,
        "length_scale_max": hi,
        "forcing": forcing,
        "solver_nodes": solver_nodes,
        "max_factor_jitter": max_jitter,
        "queries_per_function": queries_per_function,
    }
    return Dataset(sensors, queries, targets, meta)


# ---------------------------------------------------------------------------
# text file format


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_dataset(d: Dataset, path) -> None:
    """Header line ``#ordent-dataset <json meta>`` then one CSV row per sample:
    m sensor values, query, target, all with 17 significant digits."""
    header = dict(d.meta)
    header["format_version"] = FORMAT_VERSION
    header["m"] = d.m
    header["n_rows"] = d.n
    lines = [f"{HEADER_TAG} {json.dumps(header, sort_keys=True)}"]
    for i in range(d.n):
        vals = [*d.sensors[i], d.queries[i], d.targets[i]]
        lines.append(",".join(_fmt(v) for v in vals))
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise DataFileError(f"cannot write {path}: {exc}") from exc


def load_dataset(path) -> Dataset:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataFileError(f"cannot read {path}: {exc}") from exc
    lines = text.split("\n")
    first = lines[0]
    if not first.startswith(HEADER_TAG + " "):
        raise MalformedFileError(f"{path}: missing dataset header")
    try:
        header = json.loads(first[len(HEADER_TAG) + 1 :])
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"{path}: unreadable header: {exc}") from exc
    version = header.pop("format_version", None)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    try:
        m = int(header["m"])
        n_rows = int(header.pop("n_rows"))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFileError(f"{path}: header lacks m / n_rows") from exc

    if not text.endswith("\n"):
        raise MalformedFileError(f"{path}: file is truncated (no final newline)")
    rows = [ln for ln in lines[1:-1]]
    if len(rows) != n_rows:
        raise MalformedFileError(f"{path}: header promises {n_rows} rows, found {len(rows)}")
    widths = {ln.count(",") + 1 for ln in rows}
    if len(widths) > 1:
        raise MalformedFileError(f"{path}: ragged rows (widths {sorted(widths)})")
    width = widths.pop()
    if width != m + 2:
        raise ConsistencyError(f"{path}: header says m={m} but rows carry {width - 2} sensors")
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in rows])
    except ValueError as exc:
        raise MalformedFileError(f"{path}: non-numeric field: {exc}") from exc
    try:
        return Dataset(data[:, :m], data[:, m], data[:, m + 1], header)
    except InvalidInputError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
