import math

import numpy as np
import pytest
from gradcheck import numeric_grad, rel_error
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ordent.entropy import meann_entropy
from ordent.errors import InvalidInputError
from ordent.network import backward, forward, init_params
from ordent.objectives import (
    FEATURE_DISTANCES,
    WEIGHT_FNS,
    RegularizerConfig,
    cross_entropy_loss,
    discretize_targets,
    diversity_loss,
    label_weights,
    mse_loss,
    subsample_for_diversity,
    tightness_loss,
    total_loss,
)


def brute_diversity(F, y, weight_fn, feature_distance):
    M = len(F)
    total = 0.0
    for i in range(M):
        for j in range(M):
            if i == j:
                continue
            dy = abs(y[i] - y[j])
            w = {"l2": dy, "squared_l2": dy**2, "sqrt_l2": math.sqrt(dy), "constant_one": 1.0}[weight_fn]
            if feature_distance == "l2":
                d = math.sqrt(sum((a - b) ** 2 for a, b in zip(F[i], F[j])))
            else:
                d = 1.0 - sum(a * b for a, b in zip(F[i], F[j]))
            total += w * d
    return -total / (M * (M - 1))


def unit_rows(rng, M, D):
    F = rng.normal(size=(M, D))
    return F / np.linalg.norm(F, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# mse


def test_mse_zero_at_target():
    loss, g = mse_loss([1.0, -2.0], [1.0, -2.0])
    assert loss == 0.0 and not g.any()


def test_mse_value():
    loss, g = mse_loss([1.0, 2.0], [0.0, 0.0])
    assert loss == 2.5
    np.testing.assert_allclose(g, [1.0, 2.0])


def test_mse_gradient_fd():
    rng = np.random.default_rng(0)
    yhat, y = rng.normal(size=7), rng.normal(size=7)
    _, g = mse_loss(yhat, y)
    num = numeric_grad(lambda: mse_loss(yhat, y)[0], yhat)
    assert np.max(np.abs(g - num)) < 1e-8


def test_mse_length_mismatch():
    with pytest.raises(InvalidInputError):
        mse_loss([1.0], [1.0, 2.0])


# ---------------------------------------------------------------------------
# discretization


def test_bin_center_maps_to_itself():
    b = discretize_targets([0.25], 2, 0.0, 1.0)
    assert b.indices[0] == 0 and b.centers[0] == 0.25


def test_discretize_example():
    b = discretize_targets([0.75], 2, 0.0, 1.0)
    assert b.indices[0] == 1 and b.centers[0] == 0.75 and b.width == 0.5


def test_discretize_clamps_and_counts():
    b = discretize_targets([-1.0, 0.5, 1.0, 3.0], 4, 0.0, 1.0)
    np.testing.assert_array_equal(b.indices, [0, 2, 3, 3])
    assert b.n_clamped == 2


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-5, 5)),
       st.integers(2, 200))
def test_center_within_half_width(y, K):
    b = discretize_targets(y, K, -5.0, 5.0)
    assert np.all(np.abs(b.centers - y) <= b.width / 2 * (1 + 1e-12))


# ---------------------------------------------------------------------------
# cross-entropy


def test_ce_uniform_logits():
    loss, _ = cross_entropy_loss(np.zeros((3, 5)), [0, 2, 4])
    assert loss == pytest.approx(math.log(5), abs=1e-15)


def test_ce_confident_logits():
    loss, _ = cross_entropy_loss(np.array([[10.0, -10.0]]), [0])
    # -log softmax = log(1 + e^-20)
    assert loss == pytest.approx(math.log1p(math.exp(-20)), rel=1e-9)
    assert loss == pytest.approx(2.06e-9, rel=1e-2)


def test_ce_gradient_rows_sum_to_zero():
    rng = np.random.default_rng(1)
    _, g = cross_entropy_loss(rng.normal(size=(6, 4)), rng.integers(0, 4, 6))
    np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-15)


def test_ce_class_out_of_range():
    with pytest.raises(InvalidInputError):
        cross_entropy_loss(np.zeros((2, 3)), [0, 3])


@pytest.mark.parametrize("trial", range(20))
def test_ce_gradient_fd(trial):
    rng = np.random.default_rng(trial)
    N, K = rng.integers(1, 6), rng.integers(2, 8)
    logits = rng.normal(scale=3, size=(N, K))
    cls = rng.integers(0, K, N)
    _, g = cross_entropy_loss(logits, cls)
    num = numeric_grad(lambda: cross_entropy_loss(logits, cls)[0], logits)
    assert rel_error(g, num) < 1e-5


# ---------------------------------------------------------------------------
# diversity


def test_diversity_identical_features_zero():
    F = np.tile([0.6, 0.8], (5, 1))
    loss, g = diversity_loss(F, np.arange(5.0))
    assert loss == 0.0 and not g.any()


@pytest.mark.parametrize("wf", ["l2", "squared_l2", "sqrt_l2"])
def test_diversity_identical_labels_zero(wf):
    F = unit_rows(np.random.default_rng(0), 6, 3)
    loss, g = diversity_loss(F, np.ones(6), wf)
    assert loss == 0.0 and not g.any()


def test_diversity_two_point_example():
    loss, _ = diversity_loss(np.array([[1.0, 0.0], [0.0, 1.0]]), [0.0, 1.0])
    assert loss == pytest.approx(-math.sqrt(2), abs=1e-15)


@pytest.mark.parametrize("wf", WEIGHT_FNS)
@pytest.mark.parametrize("dist", FEATURE_DISTANCES)
def test_diversity_matches_brute_force(wf, dist):
    rng = np.random.default_rng(5)
    F, y = unit_rows(rng, 9, 4), rng.uniform(size=9)
    loss, _ = diversity_loss(F, y, wf, dist)
    assert loss == pytest.approx(brute_diversity(F.tolist(), y.tolist(), wf, dist), abs=1e-13)


def test_unweighted_variant_is_mean_pairwise_distance():
    rng = np.random.default_rng(6)
    F = unit_rows(rng, 7, 3)
    loss, _ = diversity_loss(F, rng.uniform(size=7), "constant_one")
    d = [np.linalg.norm(F[i] - F[j]) for i in range(7) for j in range(7) if i != j]
    assert loss == pytest.approx(-np.mean(d), abs=1e-14)


def test_two_samples_reduce_to_single_pair():
    rng = np.random.default_rng(7)
    F, y = unit_rows(rng, 2, 5), np.array([0.2, 0.9])
    loss, _ = diversity_loss(F, y)
    assert loss == pytest.approx(-0.7 * np.linalg.norm(F[0] - F[1]), abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 10**6),
       st.sampled_from(WEIGHT_FNS), st.sampled_from(FEATURE_DISTANCES))
def test_diversity_permutation_invariant_and_nonpositive(M, D, seed, wf, dist):
    rng = np.random.default_rng(seed)
    F, y = unit_rows(rng, M, D), rng.uniform(size=M)
    loss, g = diversity_loss(F, y, wf, dist)
    perm = rng.permutation(M)
    loss_p, g_p = diversity_loss(F[perm], y[perm], wf, dist)
    assert loss_p == pytest.approx(loss, abs=1e-13)
    np.testing.assert_allclose(g_p, g[perm], atol=1e-13)
    assert loss <= 0.0


def test_weights_symmetric_zero_diagonal():
    w = label_weights(np.random.default_rng(2).uniform(size=8), "sqrt_l2")
    assert np.array_equal(w, w.T) and not np.diag(w).any()


def test_diversity_needs_two_samples():
    with pytest.raises(InvalidInputError):
        diversity_loss(np.ones((1, 3)), [0.0])


@pytest.mark.parametrize("wf", WEIGHT_FNS)
@pytest.mark.parametrize("dist", FEATURE_DISTANCES)
@pytest.mark.parametrize("trial", range(20))
def test_diversity_gradient_fd(wf, dist, trial):
    rng = np.random.default_rng(1000 + trial)
    M, D = rng.integers(2, 9), rng.integers(1, 6)
    F, y = rng.normal(size=(M, D)), rng.uniform(size=M)
    _, g = diversity_loss(F, y, wf, dist)
    num = numeric_grad(lambda: diversity_loss(F, y, wf, dist)[0], F)
    assert rel_error(g, num) < 1e-5


def test_minimizing_diversity_raises_entropy():
    rng = np.random.default_rng(11)
    for _ in range(5):
        F = unit_rows(rng, 16, 3) * 0.1 + np.array([0.0, 0.0, 1.0])
        F /= np.linalg.norm(F, axis=1, keepdims=True)
        y = rng.uniform(size=16)
        before = meann_entropy(F).value
        for _ in range(100):
            _, g = diversity_loss(F, y)
            F = F - 0.5 * g
            F /= np.linalg.norm(F, axis=1, keepdims=True)
        assert meann_entropy(F).value > before


# ---------------------------------------------------------------------------
# tightness


def test_tightness_singletons_zero():
    rng = np.random.default_rng(3)
    loss, g = tightness_loss(rng.normal(size=(5, 3)), [0.0, 1.0, 2.0, 3.0, 4.0], bins=5)
    assert loss == 0.0 and not g.any()


def test_tightness_two_sample_example():
    loss, _ = tightness_loss(np.array([[0.0, 0.0], [2.0, 0.0]]), [0.5, 0.5])
    assert loss == 1.0


def test_tightness_nonnegative_and_zero_on_centers():
    rng = np.random.default_rng(4)
    y = np.repeat([0.0, 1.0, 2.0], 4)
    F = np.repeat(rng.normal(size=(3, 5)), 4, axis=0)
    assert tightness_loss(F, y, bins=3)[0] == pytest.approx(0.0, abs=1e-15)
    assert tightness_loss(F + rng.normal(size=F.shape), y, bins=3)[0] > 0


@pytest.mark.parametrize("detach", [False, True])
@pytest.mark.parametrize("trial", range(20))
def test_tightness_gradient_fd(detach, trial):
    rng = np.random.default_rng(2000 + trial)
    N, D = rng.integers(2, 12), rng.integers(1, 6)
    F, y = rng.normal(size=(N, D)), rng.uniform(size=N)
    bins = int(rng.integers(1, 5))
    _, g = tightness_loss(F, y, bins, detach_centers=detach)
    if detach:
        # detached centers are constants: differentiate with them frozen
        groups = discretize_targets(y, bins, y.min(), y.max()).indices if y.max() > y.min() \
            else np.zeros(N, int)
        C = np.stack([F[groups == k].mean(axis=0) for k in groups])
        counts = np.bincount(groups)[groups]
        num = numeric_grad(lambda: np.sum(np.linalg.norm(F - C, axis=1) * (counts > 1)) / N, F)
    else:
        num = numeric_grad(lambda: tightness_loss(F, y, bins)[0], F)
    assert rel_error(g, num) < 1e-5


# ---------------------------------------------------------------------------
# subsampling


def test_subsample_full_batch_identity():
    np.testing.assert_array_equal(subsample_for_diversity(10, 10, 0, 0), np.arange(10))


def test_subsample_deterministic_and_distinct_across_steps():
    a = subsample_for_diversity(64, 2, seed=3, step=7)
    assert np.array_equal(a, subsample_for_diversity(64, 2, seed=3, step=7))
    assert len(set(a)) == 2
    draws = {tuple(subsample_for_diversity(64, 8, 3, s)) for s in range(20)}
    assert len(draws) > 1


def test_subsample_too_large():
    with pytest.raises(InvalidInputError):
        subsample_for_diversity(4, 5, 0, 0)


# ---------------------------------------------------------------------------
# total loss through the network


def _setup(rng, out_dim=1, activation="relu"):
    d, h, B = rng.integers(2, 5), rng.integers(3, 8), rng.integers(4, 10)
    p = init_params(d, h, out_dim, seed=int(rng.integers(1 << 30)), activation=activation)
    p.b1[:] = rng.normal(scale=0.5, size=h) + 0.3
    return p, rng.normal(size=(B, d)), rng.uniform(size=B)


def test_total_without_regularizers_is_mse():
    rng = np.random.default_rng(0)
    p, X, y = _setup(rng)
    c = forward(p, X)
    br, *_ = total_loss(c, y, RegularizerConfig())
    assert br.total == mse_loss(c.yhat[:, 0], y)[0]
    assert br.diversity == 0.0 and br.tightness == 0.0


@pytest.mark.parametrize("trial", range(20))
def test_breakdown_recombines(trial):
    rng = np.random.default_rng(trial)
    p, X, y = _setup(rng)
    cfg = RegularizerConfig(lambda_d=rng.uniform(0, 2), lambda_t=rng.uniform(0, 2),
                            sample_size_M=int(rng.integers(2, len(y) + 1)), label_bins_for_centers=3)
    br, *_ = total_loss(forward(p, X), y, cfg, seed=1, step=trial)
    assert abs(br.total - (br.task_loss + cfg.lambda_d * br.diversity
                           + cfg.lambda_t * br.tightness)) <= 1e-12


REG_VARIANTS = [
    dict(lambda_d=0.7, weight_fn="constant_one"),
    dict(lambda_d=0.7, weight_fn="l2"),
    dict(lambda_d=0.7, weight_fn="squared_l2"),
    dict(lambda_d=0.7, weight_fn="sqrt_l2"),
    dict(lambda_d=0.7, weight_fn="l2", feature_distance="cosine"),
    dict(lambda_d=0.7, weight_fn="sqrt_l2", feature_distance="cosine"),
    dict(lambda_d=0.7, normalize_features=False),
    dict(lambda_t=0.9, label_bins_for_centers=3),
    dict(lambda_t=0.9, label_bins_for_centers=2, normalize_features=False),
    dict(lambda_d=0.5, lambda_t=0.9, sample_size_M=3, label_bins_for_centers=3),
]


@pytest.mark.parametrize("variant", range(len(REG_VARIANTS)))
@pytest.mark.parametrize("head", ["regression", "classification"])
@pytest.mark.parametrize("trial", range(20))
def test_total_loss_gradient_through_network(variant, head, trial):
    rng = np.random.default_rng(10_000 + 97 * variant + trial)
    K = 4
    p, X, y = _setup(rng, out_dim=K if head == "classification" else 1)
    cfg = RegularizerConfig(**REG_VARIANTS[variant])
    classes = rng.integers(0, K, len(y)) if head == "classification" else None

    def loss():
        return total_loss(forward(p, X), y, cfg, classes=classes, seed=4, step=trial)[0].total

    c = forward(p, X)
    _, gy, gz, gzh = total_loss(c, y, cfg, classes=classes, seed=4, step=trial)
    grads = backward(p, c, gy, gz, gzh).arrays()
    for name, arr in p.arrays().items():
        assert rel_error(grads[name], numeric_grad(loss, arr)) < 1e-5, name
