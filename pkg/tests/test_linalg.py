"""Gaussian primitives: factorization, sampling, densities, moments."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmpf.errors import EmptyEnsemble, NotPositiveDefinite, SingleParticle
from dmpf.linalg import (
    LOG_2PI,
    GaussianDist,
    derive_seed,
    gaussian_mixture_logpdf,
    rng_from_seed,
    robust_cholesky,
    unweighted_moments,
    weighted_moments,
)

from oracles import brute_force_mixture_logpdf


# --------------------------------------------------------------------------
# cholesky


def test_cholesky_identity():
    np.testing.assert_array_equal(robust_cholesky(np.eye(3)), np.eye(3))


def test_cholesky_scalar():
    np.testing.assert_allclose(robust_cholesky([[4.0]]), [[2.0]])


def test_cholesky_reconstructs_2x2():
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    ell = robust_cholesky(cov)
    np.testing.assert_allclose(ell @ ell.T, cov, rtol=1e-12)
    assert np.allclose(np.triu(ell, 1), 0.0)


def test_cholesky_jitter_rescues_collapsed_cov():
    ell = robust_cholesky(np.zeros((2, 2)))
    assert np.all(np.isfinite(ell))
    assert float(np.abs(ell @ ell.T).max()) < 1e-6


def test_cholesky_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        robust_cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cholesky_rejects_nonsquare():
    with pytest.raises(ValueError):
        robust_cholesky(np.ones((2, 3)))


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_cholesky_reconstruction_error(seed, dim):
    rng = rng_from_seed(seed)
    root = rng.standard_normal((dim, dim))
    cov = root @ root.T + 0.1 * np.eye(dim)
    ell = robust_cholesky(cov)
    err = np.linalg.norm(ell @ ell.T - cov) / np.linalg.norm(cov)
    assert err < 1e-8


# --------------------------------------------------------------------------
# GaussianDist


def test_logpdf_standard_normal_at_mode():
    d = GaussianDist([0.0], [[1.0]])
    np.testing.assert_allclose(d.logpdf([0.0]), -0.5 * LOG_2PI)


def test_logpdf_standard_2d_at_origin():
    d = GaussianDist(np.zeros(2), np.eye(2))
    np.testing.assert_allclose(d.logpdf([0.0, 0.0]), -LOG_2PI)


def test_logpdf_hand_value_1d():
    # N(1, 4) at x = 3: -0.5 ln(8 pi) - (3-1)^2 / (2*4)
    d = GaussianDist([1.0], [[4.0]])
    np.testing.assert_allclose(d.logpdf([3.0]), -0.5 * math.log(8.0 * math.pi) - 0.5)


def test_logpdf_integrates_to_one():
    d = GaussianDist([0.7], [[2.5]])
    sigma = math.sqrt(2.5)
    grid = np.linspace(0.7 - 8 * sigma, 0.7 + 8 * sigma, 40001)
    mass = np.trapezoid(np.exp(d.logpdf_many(grid[:, None])), grid)
    assert abs(mass - 1.0) < 1e-6


def test_logpdf_matches_scipy():
    from scipy.stats import multivariate_normal

    mean = np.array([0.3, -1.2, 2.0])
    cov = np.array([[1.0, 0.2, 0.0], [0.2, 0.5, 0.1], [0.0, 0.1, 0.8]])
    d = GaussianDist(mean, cov)
    pts = rng_from_seed(0).standard_normal((20, 3))
    np.testing.assert_allclose(
        d.logpdf_many(pts), multivariate_normal.logpdf(pts, mean, cov), rtol=1e-10)


def test_logpdf_escaped_row_is_minus_inf():
    d = GaussianDist(np.zeros(2), np.eye(2))
    pts = np.array([[0.0, 0.0], [np.nan, 1.0], [np.inf, 0.0]])
    out = d.logpdf_many(pts)
    assert np.isfinite(out[0])
    assert out[1] == -np.inf and out[2] == -np.inf


def test_sample_zero_cov_returns_mean():
    d = GaussianDist([1.0, -2.0], np.zeros((2, 2)))
    np.testing.assert_array_equal(d.sample(rng_from_seed(0)), [1.0, -2.0])
    np.testing.assert_array_equal(
        d.sample(rng_from_seed(0), size=3), np.tile([1.0, -2.0], (3, 1)))


def test_sample_deterministic_under_seed():
    d = GaussianDist(np.zeros(2), np.eye(2))
    np.testing.assert_array_equal(
        d.sample(rng_from_seed(42), size=5), d.sample(rng_from_seed(42), size=5))


def test_sample_moments_match():
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    d = GaussianDist([0.5, -0.5], cov)
    draws = d.sample(rng_from_seed(7), size=100_000)
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - d.mean) < 4 * se)
    emp = np.cov(draws.T)
    assert float(np.abs(emp - cov).max()) / float(np.abs(cov).max()) < 0.05


def test_gaussian_rejects_bad_parameters():
    with pytest.raises(ValueError):
        GaussianDist([0.0, 1.0], np.eye(3))
    with pytest.raises(ValueError):
        GaussianDist([np.nan], [[1.0]])
    with pytest.raises(ValueError):
        GaussianDist(np.zeros(2), np.array([[1.0, 0.5], [0.1, 1.0]]))


# --------------------------------------------------------------------------
# moments


def test_weighted_moments_symmetric_pair():
    mean, cov = weighted_moments(np.array([[-1.0], [1.0]]), [0.5, 0.5])
    np.testing.assert_allclose(mean, [0.0])
    np.testing.assert_allclose(cov, [[1.0]])  # population normalization


def test_weighted_moments_single_point():
    mean, cov = weighted_moments(np.array([[2.5]]), [1.0])
    np.testing.assert_allclose(mean, [2.5])
    np.testing.assert_allclose(cov, [[0.0]])


def test_weighted_moments_hand_value():
    mean, cov = weighted_moments(
        np.array([[0.0], [1.0], [2.0]]), [0.5, 0.25, 0.25])
    np.testing.assert_allclose(mean, [0.75])
    np.testing.assert_allclose(cov, [[0.6875]])


def test_weighted_moments_validation():
    with pytest.raises(EmptyEnsemble):
        weighted_moments(np.empty((0, 1)), [])
    with pytest.raises(ValueError):
        weighted_moments(np.array([[0.0], [1.0]]), [0.9, 0.2])
    with pytest.raises(ValueError):
        weighted_moments(np.array([[0.0], [1.0]]), [1.1, -0.1])


def test_unweighted_moments_examples():
    mean, cov = unweighted_moments(np.array([[-1.0], [1.0]]))
    np.testing.assert_allclose(mean, [0.0])
    np.testing.assert_allclose(cov, [[2.0]])  # 1/(M-1) normalization
    mean, cov = unweighted_moments(np.array([[0.0], [1.0], [2.0]]))
    np.testing.assert_allclose(mean, [1.0])
    np.testing.assert_allclose(cov, [[1.0]])
    _, cov = unweighted_moments(np.tile([3.0, -1.0], (5, 1)))
    np.testing.assert_allclose(cov, np.zeros((2, 2)))


def test_unweighted_moments_validation():
    with pytest.raises(EmptyEnsemble):
        unweighted_moments(np.empty((0, 2)))
    with pytest.raises(SingleParticle):
        unweighted_moments(np.array([[1.0, 2.0]]))


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**31), st.integers(2, 30), st.integers(1, 3))
def test_equal_weight_moments_match_unweighted(seed, m, dim):
    pts = rng_from_seed(seed).standard_normal((m, dim))
    w_mean, w_cov = weighted_moments(pts, np.full(m, 1.0 / m))
    u_mean, u_cov = unweighted_moments(pts)
    np.testing.assert_allclose(w_mean, u_mean, atol=1e-12)
    np.testing.assert_allclose(w_cov, u_cov * (m - 1) / m, atol=1e-12)


# --------------------------------------------------------------------------
# mixture log-density kernel


def test_mixture_logpdf_matches_brute_force():
    rng = rng_from_seed(3)
    means = rng.standard_normal((64, 2))
    pts = rng.standard_normal((40, 2)) * 1.5
    logw = np.log(rng.random(64) + 0.1)
    logw -= np.logaddexp.reduce(logw)
    cov = np.array([[0.8, 0.2], [0.2, 0.5]])
    got = gaussian_mixture_logpdf(pts, means, logw, cov)
    ref = brute_force_mixture_logpdf(pts, means, logw, cov)
    np.testing.assert_allclose(got, ref, atol=1e-10, rtol=1e-10)


def test_mixture_logpdf_blocking_is_invisible():
    rng = rng_from_seed(11)
    means = rng.standard_normal((23, 3))
    pts = rng.standard_normal((50, 3))
    logw = np.full(23, -np.log(23.0))
    cov = 0.4 * np.eye(3)
    full = gaussian_mixture_logpdf(pts, means, logw, cov, block=512)
    small = gaussian_mixture_logpdf(pts, means, logw, cov, block=7)
    np.testing.assert_allclose(full, small, rtol=1e-13, atol=1e-13)


def test_mixture_logpdf_handles_escaped_rows():
    means = np.array([[0.0], [np.nan], [1.0]])
    logw = np.log([0.25, 0.5, 0.25])
    pts = np.array([[0.0], [np.inf], [1.0]])
    out = gaussian_mixture_logpdf(pts, means, logw, np.eye(1))
    ref = brute_force_mixture_logpdf(
        pts[[0, 2]], means[[0, 2]], logw[[0, 2]], np.eye(1))
    assert out[1] == -np.inf
    np.testing.assert_allclose(out[[0, 2]], ref, atol=1e-12)


def test_mixture_logpdf_all_components_dead():
    out = gaussian_mixture_logpdf(
        np.zeros((3, 1)), np.zeros((2, 1)), np.full(2, -np.inf), np.eye(1))
    assert np.all(out == -np.inf)


def test_mixture_logpdf_far_point_underflows_to_minus_inf():
    out = gaussian_mixture_logpdf(
        np.array([[60.0]]), np.zeros((4, 1)), np.full(4, -np.log(4.0)),
        np.eye(1) * 0.01)
    assert out[0] < -1e5  # astronomically unlikely, still finite in log space


@settings(deadline=None, max_examples=30)
@given(st.integers(0, 2**31), st.integers(1, 64), st.integers(1, 16),
       st.integers(1, 3))
def test_mixture_logpdf_brute_force_property(seed, n_comp, n_pts, dim):
    rng = rng_from_seed(seed)
    means = rng.standard_normal((n_comp, dim))
    pts = rng.standard_normal((n_pts, dim)) * 2.0
    logw = np.log(rng.dirichlet(np.ones(n_comp)) + 1e-12)
    logw -= np.logaddexp.reduce(logw)
    cov = 0.3 * np.eye(dim)
    got = gaussian_mixture_logpdf(pts, means, logw, cov)
    ref = brute_force_mixture_logpdf(pts, means, logw, cov)
    np.testing.assert_allclose(got, ref, atol=1e-10, rtol=1e-10)


# --------------------------------------------------------------------------
# seeding


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, "pf", 0) == derive_seed(1, "pf", 0)
    assert derive_seed(1, "pf", 0) != derive_seed(1, "pf", 1)
    assert derive_seed(1, "pf", 0) != derive_seed(1, "enkf", 0)
    assert derive_seed(1, "pf", 0) != derive_seed(2, "pf", 0)
    assert 0 <= derive_seed(0, "traj", 0) < 2**64


def test_rng_streams_reproduce():
    a = rng_from_seed(derive_seed(9, "x", 3)).standard_normal(4)
    b = rng_from_seed(derive_seed(9, "x", 3)).standard_normal(4)
    np.testing.assert_array_equal(a, b)
