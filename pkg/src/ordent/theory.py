"""Numerical check of the label-discretization bound for a linear regressor.

For features ``z_i``, labels ``y_i`` and bin centers ``c_i`` with
``|c_i - y_i| <= eta / 2``::

    | mean((theta.z - y)^2) - mean((theta.z - c)^2) |
        <= eta / (2n) * sum |2 theta.z - c - y|

The identity behind it is ``(a - y)^2 - (a - c)^2 = (c - y)(2a - c - y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .objectives import discretize_targets

SLACK = 1e-12


@dataclass(frozen=True)
class LemmaInstance:
    theta: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    eta: float
    centers: np.ndarray

    def __post_init__(self):
        if self.Z.ndim != 2 or self.Z.shape != (self.y.size, self.theta.size):
            raise InvalidInputError("shapes of theta, Z and y disagree")
        if self.centers.shape != self.y.shape:
            raise InvalidInputError("one center per label required")
        if not self.eta >= 0:
            raise InvalidInputError("eta must be >= 0")
        # a few ulps of slack: bin centers are rounded floats
        ulps = 8 * np.finfo(float).eps * np.maximum(np.abs(self.y), np.abs(self.centers))
        if np.any(np.abs(self.centers - self.y) > self.eta / 2 * (1 + 1e-12) + ulps + 1e-300):
            raise InvalidInputError("some label is farther than eta/2 from its center")


@dataclass(frozen=True)
class LemmaReport:
    lhs: float
    bound: float
    epsilon_target: float | None
    eta_used: float
    holds: bool


@dataclass(frozen=True)
class EtaChoice:
    eta: float
    unbounded: bool
    instance: LemmaInstance | None = None


def bin_instance(theta, Z, y, eta: float, lo: float | None = None) -> LemmaInstance:
    """Bin ``y`` with uniform bins of width at most ``eta`` starting at ``lo``."""
    y = np.asarray(y, dtype=np.float64)
    lo = float(y.min()) if lo is None else lo
    span = float(y.max()) - lo
    if span <= 0:
        K, hi = 1, lo + eta
    else:
        K = max(1, math.ceil(span / eta))
        hi = lo + K * eta
    centers = discretize_targets(y, K, lo, hi).centers
    return LemmaInstance(np.asarray(theta, float), np.asarray(Z, float), y, eta, centers)


def _sides(inst: LemmaInstance) -> tuple[float, float, float]:
    a = inst.Z @ inst.theta
    n = inst.y.size
    mse = math.fsum((a - inst.y) ** 2) / n
    surrogate = math.fsum((a - inst.centers) ** 2) / n
    resid = math.fsum(np.abs(2 * a - inst.centers - inst.y))
    return abs(mse - surrogate), inst.eta / (2 * n) * resid, resid


def lemma1_check(inst: LemmaInstance, epsilon: float | None = None) -> LemmaReport:
    lhs, bound, _ = _sides(inst)
    return LemmaReport(lhs, bound, epsilon, inst.eta, lhs <= bound + SLACK)


def eta_for_epsilon(inst: LemmaInstance, epsilon: float, max_iter: int = 200) -> EtaChoice:
    """Bin width making the discretization error smaller than ``epsilon``.

    Starts from ``2 n eps / sum|2 theta.z - c - y|`` with the instance's own
    centers. Re-binning at that width moves the centers, so the width is
    recomputed from the new centers (and halved if that does not shrink it)
    until the re-binned bound is below ``epsilon``.
    """
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be > 0")
    n = inst.y.size
    _, _, resid = _sides(inst)
    if resid == 0.0:
        return EtaChoice(math.inf, True, None)
    eta = 2 * n * epsilon / resid
    lo = float(inst.y.min())
    for _ in range(max_iter):
        cand = bin_instance(inst.theta, inst.Z, inst.y, eta, lo)
        _, bound, resid = _sides(cand)
        if bound < epsilon:
            return EtaChoice(eta, False, cand)
        eta = min(0.5 * eta, 2 * n * epsilon / resid)
    raise InvalidInputError("could not find a bin width for this epsilon")


def random_instance(rng: np.random.Generator, max_n: int = 64, max_dim: int = 16,
                    max_eta: float = 0.5) -> LemmaInstance:
    n = int(rng.integers(1, max_n + 1))
    D = int(rng.integers(1, max_dim + 1))
    theta = rng.normal(size=D)
    Z = rng.normal(size=(n, D))
    y = Z @ theta + rng.normal(scale=rng.uniform(0, 2), size=n)
    eta = float(rng.uniform(1e-6, max_eta))
    return bin_instance(theta, Z, y, eta)


@dataclass(frozen=True)
class FuzzSummary:
    instances: int
    holds: int
    eta_ok: int
    worst_slack: float  # min over instances of bound - lhs


def fuzz(instances: int = 10_000, seed: int = 0, epsilon: float = 1e-3) -> FuzzSummary:
    rng = np.random.Generator(np.random.PCG64(seed))
    holds = eta_ok = 0
    worst = math.inf
    for _ in range(instances):
        inst = random_instance(rng)
        rep = lemma1_check(inst)
        holds += rep.holds
        worst = min(worst, rep.bound - rep.lhs)
        choice = eta_for_epsilon(inst, epsilon)
        if choice.unbounded or lemma1_check(choice.instance).lhs < epsilon:
            eta_ok += 1
    return FuzzSummary(instances, holds, eta_ok, worst)
