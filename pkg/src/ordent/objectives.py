"""Training losses and their analytic gradients.

Every loss returns ``(value, gradient)`` where the gradient is taken with
respect to the loss's first argument. The diversity and tightness terms act
on feature matrices of shape (batch, dim).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .network import ForwardCache

WEIGHT_FNS = ("l2", "squared_l2", "sqrt_l2", "constant_one")
FEATURE_DISTANCES = ("l2", "cosine")
COINCIDENT_REL = 1e-14


@dataclass(frozen=True)
class RegularizerConfig:
    lambda_d: float = 0.0
    lambda_t: float = 0.0
    sample_size_M: int = 0  # 0 means the whole batch
    weight_fn: str = "l2"
    feature_distance: str = "l2"
    normalize_features: bool = True
    label_bins_for_centers: int = 10
    detach_centers: bool = False

    def __post_init__(self):
        if self.lambda_d < 0 or self.lambda_t < 0:
            raise InvalidInputError("trade-off weights must be >= 0")
        if self.sample_size_M < 0:
            raise InvalidInputError("sample_size_M must be >= 0")
        if self.weight_fn not in WEIGHT_FNS:
            raise InvalidInputError(f"weight_fn must be one of {WEIGHT_FNS}")
        if self.feature_distance not in FEATURE_DISTANCES:
            raise InvalidInputError(f"feature_distance must be one of {FEATURE_DISTANCES}")
        if self.label_bins_for_centers < 1:
            raise InvalidInputError("label_bins_for_centers must be >= 1")


@dataclass(frozen=True)
class LossBreakdown:
    task_loss: float
    diversity: float
    tightness: float
    total: float


@dataclass(frozen=True)
class Binning:
    indices: np.ndarray
    centers: np.ndarray
    width: float
    n_clamped: int


def mse_loss(yhat, y) -> tuple[float, np.ndarray]:
    yhat = np.asarray(yhat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if yhat.shape != y.shape or yhat.size < 1:
        raise InvalidInputError(f"shape mismatch: {yhat.shape} vs {y.shape}")
    r = yhat - y
    n = r.size
    return float(np.mean(r * r)), 2.0 * r / n


def discretize_targets(y, K: int, lo: float, hi: float) -> Binning:
    """Uniform bins over ``[lo, hi]``; out-of-range labels go to the edge bins."""
    if K < 1 or not hi > lo:
        raise InvalidInputError(f"need K >= 1 and hi > lo, got K={K}, [{lo}, {hi}]")
    y = np.asarray(y, dtype=np.float64)
    width = (hi - lo) / K
    raw = np.floor((y - lo) / width)
    idx = np.clip(raw, 0, K - 1).astype(np.int64)
    n_clamped = int(np.count_nonzero((y < lo) | (y > hi)))
    return Binning(idx, lo + (idx + 0.5) * width, width, n_clamped)


def cross_entropy_loss(logits, classes) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    classes = np.asarray(classes)
    N, K = logits.shape
    if K < 2:
        raise InvalidInputError("need at least 2 classes")
    if classes.shape != (N,) or np.any(classes < 0) or np.any(classes >= K):
        raise InvalidInputError("class index out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(N)
    loss = float(np.mean(log_z - shifted[rows, classes]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, classes] -= 1.0
    return loss, grad / N


def label_weights(y, weight_fn: str = "l2") -> np.ndarray:
    """Symmetric pairwise weights from label distances, zero diagonal."""
    y = np.asarray(y, dtype=np.float64)
    y2 = y[:, None] if y.ndim == 1 else y
    diff = y2[:, None, :] - y2[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    if weight_fn == "l2":
        w = dist
    elif weight_fn == "squared_l2":
        w = dist * dist
    elif weight_fn == "sqrt_l2":
        w = np.sqrt(dist)
    elif weight_fn == "constant_one":
        w = np.ones_like(dist)
    else:
        raise InvalidInputError(f"unknown weight_fn {weight_fn!r}")
    np.fill_diagonal(w, 0.0)
    return w


def diversity_loss(feats, y, weight_fn: str = "l2",
                   feature_distance: str = "l2") -> tuple[float, np.ndarray]:
    """Negative label-weighted mean pairwise feature distance over ordered pairs.

    With ``weight_fn="constant_one"`` this is the unweighted variant. Pairs at
    zero distance get a zero gradient (subgradient of the norm at its kink).
    """
    F = np.asarray(feats, dtype=np.float64)
    M = F.shape[0]
    if M < 2:
        raise InvalidInputError("diversity needs at least 2 samples")
    if np.asarray(y).shape[0] != M:
        raise InvalidInputError("one label per feature row required")
    if feature_distance not in FEATURE_DISTANCES:
        raise InvalidInputError(f"unknown feature_distance {feature_distance!r}")
    w = label_weights(y, weight_fn)
    scale = 1.0 / (M * (M - 1))

    if feature_distance == "l2":
        sq = np.einsum("ij,ij->i", F, F)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (F @ F.T)
        # Gram-form cancellation: treat pairs within ~1e-7 relative as coincident
        tiny = COINCIDENT_REL * (sq[:, None] + sq[None, :])
        d = np.sqrt(np.where(d2 > tiny, d2, 0.0))
        d = 0.5 * (d + d.T)
        terms = w * d
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.where(d > 0.0, w / d, 0.0)
        np.fill_diagonal(c, 0.0)
        grad = -2.0 * scale * (c.sum(axis=1)[:, None] * F - c @ F)
    else:
        d = 1.0 - F @ F.T
        terms = w * d
        grad = 2.0 * scale * (w @ F)
    np.fill_diagonal(terms, 0.0)
    loss = -scale * float(terms.sum())
    return loss, grad


def tightness_loss(feats, y, bins: int = 10, *, label_range=None,
                   detach_centers: bool = False) -> tuple[float, np.ndarray]:
    """Mean distance from each feature to the mean feature of its label bin.

    Bins are uniform over ``label_range`` (default: the batch's own label
    range). The gradient flows through the bin means unless ``detach_centers``.
    """
    F = np.asarray(feats, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    N = F.shape[0]
    if N < 1 or y.shape[0] != N:
        raise InvalidInputError("tightness needs a nonempty batch with one label per row")
    lo, hi = label_range if label_range is not None else (float(y.min()), float(y.max()))
    if hi > lo:
        groups = discretize_targets(y, bins, lo, hi).indices
    else:
        groups = np.zeros(N, dtype=np.int64)
    n_groups = int(groups.max()) + 1
    counts = np.bincount(groups, minlength=n_groups).astype(np.float64)
    sums = np.zeros((n_groups, F.shape[1]))
    np.add.at(sums, groups, F)
    centers = sums / np.maximum(counts, 1.0)[:, None]

    r = F - centers[groups]
    d = np.linalg.norm(r, axis=1)
    # singletons sit exactly on their own center
    d[counts[groups] == 1] = 0.0
    loss = float(d.sum()) / N

    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(d[:, None] > 0.0, r / d[:, None], 0.0)
    grad = u.copy()
    if not detach_centers:
        u_sums = np.zeros_like(sums)
        np.add.at(u_sums, groups, u)
        grad -= (u_sums / np.maximum(counts, 1.0)[:, None])[groups]
    return loss, grad / N


def subsample_for_diversity(batch_size: int, M: int, seed: int, step: int) -> np.ndarray:
    """Sorted subset of ``M`` of ``range(batch_size)``, uniform without replacement."""
    if M > batch_size:
        raise InvalidInputError(f"M={M} exceeds batch size {batch_size}")
    if M < 1:
        raise InvalidInputError("M must be >= 1")
    if M == batch_size:
        return np.arange(batch_size)
    rng = np.random.Generator(np.random.PCG64([seed, step]))
    return np.sort(rng.choice(batch_size, size=M, replace=False))


def total_loss(cache: ForwardCache, y, cfg: RegularizerConfig, *, classes=None,
               seed: int = 0, step: int = 0):
    """Task loss plus weighted diversity and tightness terms.

    The task loss is MSE on ``yhat[:, 0]``, or cross-entropy on the logits when
    ``classes`` is given. Regularizers see ``zhat`` when
    ``cfg.normalize_features`` is set, raw ``z`` otherwise.

    Returns ``(LossBreakdown, g_yhat, g_z, g_zhat)``; the last two are the
    upstream gradients to hand to :func:`ordent.network.backward`.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    B = cache.yhat.shape[0]
    if y.shape[0] != B:
        raise InvalidInputError("one label per batch row required")

    if classes is None:
        task, g_col = mse_loss(cache.yhat[:, 0], y)
        g_yhat = np.zeros_like(cache.yhat)
        g_yhat[:, 0] = g_col
    else:
        task, g_yhat = cross_entropy_loss(cache.yhat, classes)

    feats = cache.zhat if cfg.normalize_features else cache.z
    g_feat = np.zeros_like(feats)
    div = tight = 0.0
    if cfg.lambda_d > 0:
        M = cfg.sample_size_M or B
        idx = subsample_for_diversity(B, M, seed, step)
        div, g_div = diversity_loss(feats[idx], y[idx], cfg.weight_fn, cfg.feature_distance)
        g_feat[idx] += cfg.lambda_d * g_div
    if cfg.lambda_t > 0:
        tight, g_t = tightness_loss(feats, y, cfg.label_bins_for_centers,
                                    detach_centers=cfg.detach_centers)
        g_feat += cfg.lambda_t * g_t

    total = task + cfg.lambda_d * div + cfg.lambda_t * tight
    breakdown = LossBreakdown(task, div, tight, total)
    if cfg.normalize_features:
        return breakdown, g_yhat, None, g_feat
    return breakdown, g_yhat, g_feat, None
