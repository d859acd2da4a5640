import math

import numpy as np
import pytest

from hdclt import rng
from hdclt.datagen import DesignSpec, Dataset, sample_dataset
from hdclt.errors import NotPositiveSemidefiniteError, ParameterError
from hdclt.sums import (
    CholFactor,
    CovMatrix,
    empirical_covariance,
    empirical_resample_draw,
    empirical_resample_draw_batch,
    gaussian_draw,
    gaussian_draw_batch,
    interpolated_draw,
    multiplier_draw,
    multiplier_draw_batch,
    normalized_sum,
    robust_cholesky,
)


def test_normalized_sum_hand_cases():
    assert normalized_sum(Dataset(np.ones((4, 1)))).values[0] == 2.0
    alt = Dataset(np.array([[1.0], [-1.0], [1.0], [-1.0]]))
    assert normalized_sum(alt).values[0] == 0.0
    two = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.allclose(normalized_sum(two).values, 1.0 / math.sqrt(2.0))


def test_normalized_sum_negation():
    ds = sample_dataset(DesignSpec(kind="gaussian", p=3), 10, 3)
    neg = Dataset(-ds.values)
    assert np.array_equal(normalized_sum(neg).values, -normalized_sum(ds).values)


def test_empirical_covariance_divisor_n():
    assert empirical_covariance(Dataset(np.array([[1.0], [-1.0]]))).matrix[0, 0] == 1.0
    assert empirical_covariance(Dataset(np.array([[2.0], [0.0]]))).matrix[0, 0] == 1.0
    const = Dataset(np.full((5, 3), 2.5))
    assert np.all(empirical_covariance(const).matrix == 0.0)


def test_covariance_validation():
    with pytest.raises(ParameterError):
        CovMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ParameterError):
        CovMatrix(np.array([[-1.0, 0.0], [0.0, 1.0]]))


def test_cholesky_identity_and_diagonal():
    c = robust_cholesky(CovMatrix(np.eye(3)))
    assert c.jitter_used == 0.0
    assert np.array_equal(c.L, np.eye(3))
    c = robust_cholesky(CovMatrix(np.diag([4.0, 9.0])))
    assert np.allclose(np.diag(c.L), [2.0, 3.0])


def test_cholesky_rank_one_jitter():
    a = np.array([[1.0, 1.0], [1.0, 1.0]])
    c = robust_cholesky(CovMatrix(a), base_jitter=1e-10)
    assert c.jitter_used > 0.0
    assert np.max(np.abs(c.L @ c.L.T - a)) <= 1e-8 * (1.0 + a.max())


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveSemidefiniteError):
        robust_cholesky(CovMatrix(np.array([[1.0, 2.0], [2.0, 1.0]])))


def test_gaussian_draw_zero_factor():
    chol = CholFactor(L=np.zeros((3, 3)))
    assert np.all(gaussian_draw(chol, 5).values == 0.0)


def test_gaussian_draw_statistics():
    chol = robust_cholesky(CovMatrix(np.eye(3)))
    draws = gaussian_draw_batch(chol, 11, 0, 100_000)
    assert np.all(np.abs(draws.var(axis=0) - 1.0) <= 5.0 * math.sqrt(2.0 / 100_000))
    one = robust_cholesky(CovMatrix(np.array([[4.0]])))
    d1 = gaussian_draw_batch(one, 12, 0, 100_000)
    assert abs(d1.mean()) <= 4.0 * 2.0 / math.sqrt(100_000)


def test_gaussian_batch_matches_single():
    chol = robust_cholesky(CovMatrix(np.array([[2.0, 0.5], [0.5, 1.0]])))
    batch = gaussian_draw_batch(chol, 42, 0, 20)
    for r in (0, 7, 19):
        single = gaussian_draw(chol, rng.mix64(42, r)).values
        assert np.allclose(batch[r], single, rtol=1e-12, atol=1e-14)


def test_gaussian_covariance_convergence():
    sigma = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 1.0]])
    chol = robust_cholesky(CovMatrix(sigma))
    R = 100_000
    draws = gaussian_draw_batch(chol, 3, 0, R)
    got = draws.T @ draws / R
    tol = 6.0 * np.sqrt((np.outer(np.diag(sigma), np.diag(sigma)) + sigma**2) / R)
    assert np.all(np.abs(got - sigma) <= tol)


def test_interpolated_boundaries_exact():
    design = DesignSpec(kind="gaussian", p=3)
    chol = robust_cholesky(CovMatrix(np.eye(3)))
    at_one = interpolated_draw(design, 10, chol, 1.0, 99)
    sx = normalized_sum(sample_dataset(design, 10, rng.mix64(99, 1)))
    assert np.array_equal(at_one.values, sx.values)
    at_zero = interpolated_draw(design, 10, chol, 0.0, 99)
    sy = gaussian_draw(chol, rng.mix64(99, 2))
    assert np.array_equal(at_zero.values, sy.values)
    with pytest.raises(ParameterError):
        interpolated_draw(design, 10, chol, 1.5, 99)


def test_multiplier_draw_identical_rows_zero():
    const = Dataset(np.full((6, 3), 1.7))
    assert np.all(multiplier_draw(const, 9).values == 0.0)


def test_multiplier_draw_variance():
    data = Dataset(np.array([[1.0], [-1.0]]))
    draws = multiplier_draw_batch(data, 5, 0, 100_000)
    assert abs(draws.var() - 1.0) <= 5.0 * math.sqrt(2.0 / 100_000)
    assert abs(draws.mean()) <= 4.0 * math.sqrt(1.0 / 100_000)


def test_multiplier_conditional_covariance_identity():
    data = Dataset(np.random.default_rng(0).standard_normal((50, 4)))
    shat = empirical_covariance(data).matrix
    R = 100_000
    draws = multiplier_draw_batch(data, 77, 0, R)
    got = draws.T @ draws / R
    tol = 6.0 * np.sqrt((np.outer(np.diag(shat), np.diag(shat)) + shat**2) / R)
    assert np.all(np.abs(got - shat) <= tol)


def test_multiplier_batch_matches_single():
    data = Dataset(np.random.default_rng(1).standard_normal((20, 3)))
    batch = multiplier_draw_batch(data, 5, 0, 10)
    for r in (0, 3, 9):
        single = multiplier_draw(data, rng.mix64(5, r)).values
        assert np.allclose(batch[r], single, rtol=1e-12, atol=1e-14)


def test_empirical_draw_identical_rows_zero():
    const = Dataset(np.full((6, 3), -0.4))
    assert np.all(empirical_resample_draw(const, 3).values == 0.0)


def test_empirical_draw_conditional_moments():
    data = Dataset(np.array([[1.0], [-1.0]]))
    draws = empirical_resample_draw_batch(data, 6, 0, 100_000)
    assert abs(draws.var() - 1.0) <= 5.0 * math.sqrt(2.0 / 100_000)
    assert abs(draws.mean()) <= 4.0 * math.sqrt(1.0 / 100_000)


def test_empirical_batch_matches_single():
    data = Dataset(np.random.default_rng(2).standard_normal((30, 3)))
    batch = empirical_resample_draw_batch(data, 8, 0, 10)
    for r in (0, 4, 9):
        single = empirical_resample_draw(data, rng.mix64(8, r)).values
        assert np.allclose(batch[r], single, rtol=1e-12, atol=1e-14)


def test_draws_are_deterministic():
    data = Dataset(np.random.default_rng(3).standard_normal((25, 4)))
    assert np.array_equal(multiplier_draw(data, 9).values, multiplier_draw(data, 9).values)
    assert np.array_equal(
        empirical_resample_draw(data, 9).values, empirical_resample_draw(data, 9).values
    )
