import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordent.errors import InvalidInputError, NumericalError
from ordent.randomfield import (
    FieldSample,
    Grid,
    KernelConfig,
    factor_covariance,
    nested_grids,
    rbf_kernel_matrix,
    sample_grf,
    sample_grf_batch,
)


def test_kernel_zero_distance_is_variance():
    K = rbf_kernel_matrix(Grid([0.0, 0.3]), KernelConfig(0.2, 1.0))
    assert K[0, 0] == 1.0 and K[1, 1] == 1.0


def test_kernel_one_length_scale_apart():
    ell = 0.2
    K = rbf_kernel_matrix(Grid([0.0, ell]), KernelConfig(ell, 1.0))
    # closed form: exp(-l^2 / (2 l^2))
    assert K[0, 1] == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert K[0, 1] == pytest.approx(0.60653, abs=1e-5)


def test_kernel_variance_and_jitter():
    K = rbf_kernel_matrix(Grid.uniform(5), KernelConfig(0.3, 2.5, jitter=1e-3))
    np.testing.assert_array_equal(np.diag(K), np.full(5, 2.5 + 1e-3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=40, unique=True),
       st.floats(0.01, 2.0), st.floats(0.1, 3.0))
def test_kernel_exactly_symmetric(points, ell, var):
    pts = np.sort(np.array(points))
    if np.any(np.diff(pts) <= 0):
        return
    K = rbf_kernel_matrix(Grid(pts), KernelConfig(ell, var))
    assert np.array_equal(K, K.T)


def test_unit_diagonal_default_kernel():
    K = rbf_kernel_matrix(Grid.uniform(50), KernelConfig())
    assert np.all(np.diag(K) == 1.0)


@pytest.mark.parametrize("pts", [[0.0, float("nan")], [0.5, 0.2], [0.0, 1.5], [0.3]])
def test_grid_rejects_bad_points(pts):
    with pytest.raises(InvalidInputError):
        Grid(pts)


def test_kernel_config_validation():
    with pytest.raises(InvalidInputError):
        KernelConfig(length_scale=0.0)
    with pytest.raises(InvalidInputError):
        KernelConfig(variance=-1.0)
    with pytest.raises(InvalidInputError):
        KernelConfig(jitter=-1e-9)


def test_factor_identity():
    f = factor_covariance(np.eye(4))
    np.testing.assert_array_equal(f.lower, np.eye(4))
    assert f.jitter == 0.0


def test_factor_two_by_two():
    f = factor_covariance(np.array([[4.0, 2.0], [2.0, 3.0]]))
    expected = np.array([[2.0, 0.0], [1.0, math.sqrt(2.0)]])
    np.testing.assert_allclose(f.lower, expected, atol=1e-15)
    np.testing.assert_allclose(f.lower @ f.lower.T, [[4.0, 2.0], [2.0, 3.0]], atol=1e-15)


def test_factor_rbf_reconstruction():
    grid = Grid.uniform(100)
    K = rbf_kernel_matrix(grid, KernelConfig(0.2))
    f = factor_covariance(K, grid)
    assert f.jitter <= 1e-6
    assert np.max(np.abs(f.lower @ f.lower.T - K)) < 1e-8


def test_factor_fine_grid_needs_jitter_but_reconstructs():
    fine, _ = nested_grids(100, 1000)
    K = rbf_kernel_matrix(fine, KernelConfig(0.2))
    f = factor_covariance(K, fine)
    assert 0.0 < f.jitter <= 1e-6
    assert np.max(np.abs(f.lower @ f.lower.T - K)) < 1e-8


def test_factor_fails_on_indefinite_matrix():
    with pytest.raises(NumericalError, match="smallest eigenvalue"):
        factor_covariance(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_factor_rejects_asymmetric():
    with pytest.raises(InvalidInputError):
        factor_covariance(np.array([[1.0, 0.1], [0.2, 1.0]]))


def test_nested_grids_contain_sensors():
    fine, idx = nested_grids(100, 1000)
    assert fine.count >= 1000
    np.testing.assert_allclose(fine.points[idx], np.linspace(0, 1, 100), atol=1e-15)


@pytest.fixture(scope="module")
def small_factor():
    grid = Grid.uniform(12)
    return factor_covariance(rbf_kernel_matrix(grid, KernelConfig(0.2)), grid)


def test_sample_deterministic(small_factor):
    a = sample_grf(small_factor, 42)
    b = sample_grf(small_factor, 42)
    assert np.array_equal(a.values, b.values)
    assert a.grid == small_factor.grid


def test_distinct_seeds_distinct_draws(small_factor):
    assert not np.array_equal(sample_grf(small_factor, 1).values, sample_grf(small_factor, 2).values)


def test_batch_rows_match_single_draws(small_factor):
    seeds = [3, 4, 5]
    batch = sample_grf_batch(small_factor, seeds)
    for row, s in zip(batch, seeds):
        assert np.array_equal(row, sample_grf(small_factor, s).values)


def test_monte_carlo_moments(small_factor):
    n = 10_000
    rng = np.random.Generator(np.random.PCG64(7))
    draws = np.stack([sample_grf(small_factor, rng).values for _ in range(n)])
    K = small_factor.lower @ small_factor.lower.T
    # unit variance, so 5 standard errors of the mean is 5 / sqrt(n)
    assert np.all(np.abs(draws.mean(axis=0)) < 5.0 / math.sqrt(n))
    cov = draws.T @ draws / n
    assert np.max(np.abs(cov - K)) < 0.1


def test_field_sample_validation():
    g = Grid.uniform(3)
    with pytest.raises(InvalidInputError):
        FieldSample(g, np.zeros(4))
    with pytest.raises(InvalidInputError):
        FieldSample(g, np.array([0.0, np.inf, 0.0]))
