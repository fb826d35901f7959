"""Two-layer fully connected network with hand-written backpropagation.

The hidden activations ``z`` are the feature vectors the regularizers act on.
``forward`` also returns the row-wise L2-normalised copy ``zhat`` and
``backward`` takes upstream gradients for ``yhat``, ``z`` and ``zhat`` at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import (
    DataFileError,
    InvalidInputError,
    MalformedFileError,
    NumericalError,
    VersionMismatchError,
)

NORM_FLOOR = 1e-12
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh")


@dataclass
class MlpParams:
    W1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (output, hidden)
    b2: np.ndarray  # (output,)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        h, d = self.W1.shape
        o = self.W2.shape[0]
        if self.b1.shape != (h,) or self.W2.shape != (o, h) or self.b2.shape != (o,):
            raise InvalidInputError("inconsistent parameter shapes")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.W2.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self) -> "MlpParams":
        return MlpParams(**{k: v.copy() for k, v in self.arrays().items()}, activation=self.activation)


@dataclass
class ForwardCache:
    X: np.ndarray
    pre: np.ndarray
    z: np.ndarray
    norms: np.ndarray  # clamped row norms of z
    zhat: np.ndarray
    yhat: np.ndarray  # (batch, output)


@dataclass
class Gradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def init_params(input_dim: int, hidden: int = 100, output_dim: int = 1, seed: int = 0,
                activation: str = "relu") -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if min(input_dim, hidden, output_dim) < 1:
        raise InvalidInputError("all layer sizes must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    a1 = np.sqrt(6.0 / (input_dim + hidden))
    a2 = np.sqrt(6.0 / (hidden + output_dim))
    return MlpParams(
        W1=rng.uniform(-a1, a1, size=(hidden, input_dim)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-a2, a2, size=(output_dim, hidden)),
        b2=np.zeros(output_dim),
        activation=activation,
    )


def normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.maximum(np.linalg.norm(z, axis=1), NORM_FLOOR)
    return z / norms[:, None], norms


def forward(p: MlpParams, X: np.ndarray) -> ForwardCache:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.input_dim:
        raise InvalidInputError(f"expected (batch, {p.input_dim}) input, got {X.shape}")
    pre = X @ p.W1.T + p.b1
    z = np.maximum(pre, 0.0) if p.activation == "relu" else np.tanh(pre)
    zhat, norms = normalize_rows(z)
    yhat = z @ p.W2.T + p.b2
    return ForwardCache(X, pre, z, norms, zhat, yhat)


def normalization_vjp(cache: ForwardCache, g_zhat: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``zhat`` back to ``z`` through ``(I - zhat zhat^T) / ||z||``.

    Rows whose norm sits on the floor use the derivative of ``z / floor``.
    """
    radial = np.einsum("ij,ij->i", g_zhat, cache.zhat)
    clamped = cache.norms <= NORM_FLOOR
    radial[clamped] = 0.0
    return (g_zhat - radial[:, None] * cache.zhat) / cache.norms[:, None]


def backward(p: MlpParams, cache: ForwardCache, g_yhat=None, g_z=None, g_zhat=None) -> Gradients:
    """Parameter gradients given upstream gradients on the network outputs.

    Any of ``g_yhat`` (batch, output), ``g_z`` and ``g_zhat`` (batch, hidden)
    may be None; contributions are summed.
    """
    B = cache.X.shape[0]
    g_feat = np.zeros_like(cache.z)
    if g_yhat is not None:
        g_yhat = np.asarray(g_yhat, dtype=np.float64).reshape(B, p.output_dim)
        g_feat += g_yhat @ p.W2
        gW2 = g_yhat.T @ cache.z
        gb2 = g_yhat.sum(axis=0)
    else:
        gW2 = np.zeros_like(p.W2)
        gb2 = np.zeros_like(p.b2)
    if g_z is not None:
        g_feat += g_z
    if g_zhat is not None:
        g_feat += normalization_vjp(cache, g_zhat)
    if not np.all(np.isfinite(g_feat)):
        raise NumericalError("non-finite upstream gradient")

    if p.activation == "relu":
        g_pre = g_feat * (cache.pre > 0.0)
    else:
        g_pre = g_feat * (1.0 - cache.z * cache.z)
    return Gradients(W1=g_pre.T @ cache.X, b1=g_pre.sum(axis=0), W2=gW2, b2=gb2)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(p: MlpParams, path, seed: int | None = None) -> None:
    """Header line with dims/seed/version as JSON, then one weight per line
    (W1, b1, W2, b2 in C order, 17 significant digits)."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "input_dim": p.input_dim,
        "hidden": p.hidden,
        "output_dim": p.output_dim,
        "activation": p.activation,
        "seed": seed,
    }
    flat = np.concatenate([a.ravel() for a in p.arrays().values()])
    body = "\n".join(format(float(v), ".17g") for v in flat)
    try:
        Path(path).write_text("#ordent-mlp " + json.dumps(header, sort_keys=True) + "\n" + body + "\n")
    except OSError as exc:
        raise DataFileError(f"cannot write {path}: {exc}") from exc


def load_params(path) -> MlpParams:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataFileError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith("#ordent-mlp "):
        raise MalformedFileError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(lines[0][len("#ordent-mlp "):])
        values = np.array([float(v) for v in lines[1:]])
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {header.get('format_version')}")
    d, h, o = header["input_dim"], header["hidden"], header["output_dim"]
    sizes = [h * d, h, o * h, o]
    if values.size != sum(sizes):
        raise MalformedFileError(f"{path}: expected {sum(sizes)} weights, found {values.size}")
    W1, b1, W2, b2 = np.split(values, np.cumsum(sizes)[:-1])
    return MlpParams(W1.reshape(h, d), b1, W2.reshape(o, h), b2, activation=header["activation"])
