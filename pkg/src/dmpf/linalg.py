"""Dense Gaussian primitives shared by every filter.

Covariances here are small (state dimension <= 4 in all benchmark models),
so everything is plain dense numpy with a Cholesky factor cached per
distribution. All weight arithmetic elsewhere in the library is done in
log space; this module provides the stable building blocks for that.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
from scipy.linalg import solve_triangular

from .errors import EmptyEnsemble, NotPositiveDefinite, SingleParticle

LOG_2PI = math.log(2.0 * math.pi)

RngStream = np.random.Generator


def rng_from_seed(seed: int) -> RngStream:
    """Independent generator; identical seed gives a bit-identical stream."""
    return np.random.default_rng(seed)


def derive_seed(*tokens) -> int:
    """Stable 64-bit seed from arbitrary tokens (base seed, filter name, trial index).

    Uses sha256 so the derivation is identical across platforms and runs,
    unlike the builtin ``hash``.
    """
    payload = "\x1f".join(str(t) for t in tokens).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def symmetrize(a: np.ndarray) -> np.ndarray:
    """0.5 * (A + A^T); removes floating-point asymmetry before factorization."""
    return 0.5 * (a + a.T)


def robust_cholesky(cov: np.ndarray, jitter_scale: float = 1e-9) -> np.ndarray:
    """Lower Cholesky factor of a symmetric PSD matrix, with one jittered retry.

    If the plain factorization fails, retries once after adding
    ``jitter_scale * max(diag(cov), 1)`` to the diagonal. This keeps
    proposal construction alive when an ensemble has (nearly) collapsed.

    Raises
    ------
    NotPositiveDefinite
        If the jittered retry also fails.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {cov.shape}")
    sym = symmetrize(cov)
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError:
        pass
    lam = jitter_scale * max(float(np.max(np.diag(sym))) if sym.size else 0.0, 1.0)
    try:
        return np.linalg.cholesky(sym + lam * np.eye(sym.shape[0]))
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(
            f"matrix not positive definite after jitter {lam:.3e}"
        ) from None


class GaussianDist:
    """Immutable multivariate normal with a lazily cached Cholesky factor.

    An exactly-zero covariance is treated as a point mass: ``sample``
    returns the mean unchanged (the jitter path is never consulted).
    """

    __slots__ = ("mean", "cov", "_chol")

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"mean {mean.shape} and cov {cov.shape} do not agree")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("non-finite entries in Gaussian parameters")
        scale = max(1.0, float(np.abs(cov).max()) if cov.size else 0.0)
        if cov.size and float(np.abs(cov - cov.T).max()) > 1e-10 * scale:
            raise ValueError("covariance is not symmetric within tolerance")
        self.mean = mean
        self.cov = cov
        self._chol = None

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            self._chol = robust_cholesky(self.cov)
        return self._chol

    def sample(self, rng: RngStream, size: int | None = None) -> np.ndarray:
        """Draw ``size`` vectors (or one, if size is None) as mean + L z."""
        k = 1 if size is None else int(size)
        if not self.cov.any():
            out = np.tile(self.mean, (k, 1))
        else:
            z = rng.standard_normal((k, self.dim))
            out = self.mean + z @ self.chol.T
        return out[0] if size is None else out

    def logpdf(self, x) -> float:
        return float(self.logpdf_many(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def logpdf_many(self, points: np.ndarray) -> np.ndarray:
        """Log-density at each row of ``points``, via the cached factor.

        Rows with non-finite entries (particles that numerically escaped)
        get log-density -inf rather than NaN, so they drop out downstream.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        chol = self.chol
        diag = np.diag(chol)
        if np.any(diag <= 0.0):
            raise NotPositiveDefinite("degenerate covariance has no density")
        bad = ~np.isfinite(points).all(axis=1)
        if bad.any():
            points = np.where(bad[:, None], self.mean, points)
        z = solve_triangular(chol, (points - self.mean).T, lower=True)
        # finite-but-huge points overflow the quadratic form to inf, which
        # maps to a clean -inf log-density, so silence the warning
        with np.errstate(over="ignore"):
            out = -0.5 * np.sum(z * z, axis=0) - 0.5 * self.dim * LOG_2PI - np.sum(np.log(diag))
        out[bad] = -np.inf
        return out


def weighted_moments(points, weights) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a weighted ensemble (no bias correction).

    ``weights`` must be nonnegative and sum to one within 1e-12; the
    covariance is the plain weighted sum of outer products around the
    weighted mean.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if points.shape[0] == 0:
        raise EmptyEnsemble("weighted_moments of zero points")
    if weights.shape != (points.shape[0],):
        raise ValueError("one weight per point required")
    if np.any(weights < 0.0) or abs(float(weights.sum()) - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to 1")
    mean = weights @ points
    diffs = points - mean
    cov = (weights[:, None] * diffs).T @ diffs
    return mean, symmetrize(cov)


def unweighted_moments(points) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance with 1/(M-1) normalization."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m = points.shape[0]
    if m == 0:
        raise EmptyEnsemble("unweighted_moments of zero points")
    if m == 1:
        raise SingleParticle("sample covariance needs at least two points")
    mean = points.mean(axis=0)
    diffs = points - mean
    cov = diffs.T @ diffs / (m - 1)
    return mean, symmetrize(cov)


def gaussian_mixture_logpdf(
    points: np.ndarray,
    means: np.ndarray,
    log_weights: np.ndarray,
    cov: np.ndarray,
    block: int = 512,
) -> np.ndarray:
    """log sum_m exp(log_weights[m]) N(points_k; means[m], cov), per point k.

    This is the O(K*M) kernel behind the marginal predictive density. The
    shared covariance lets us whiten both point sets once; squared
    distances are then formed blockwise from a GEMM after centering (the
    centering keeps the a^2 - 2ab + b^2 expansion from cancelling badly).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    means = np.atleast_2d(np.asarray(means, dtype=float))
    log_weights = np.asarray(log_weights, dtype=float)
    n = means.shape[1]
    chol = robust_cholesky(cov)
    log_norm = -0.5 * n * LOG_2PI - float(np.sum(np.log(np.diag(chol))))

    # numerically escaped rows: points get density -inf, components drop out
    bad_points = ~np.isfinite(points).all(axis=1)
    if bad_points.any():
        points = np.where(bad_points[:, None], 0.0, points)
    bad_means = ~np.isfinite(means).all(axis=1)
    if bad_means.any():
        means = np.where(bad_means[:, None], 0.0, means)
        log_weights = np.where(bad_means, -np.inf, log_weights)

    zp = solve_triangular(chol, points.T, lower=True).T
    zm = solve_triangular(chol, means.T, lower=True).T
    center = zm.mean(axis=0)
    zp = zp - center
    zm = zm - center

    # log_weights[m] - 0.5 |zp_k - zm_m|^2 splits into a GEMM term zp_k.zm_m
    # plus biases that depend on k or m alone; the per-point bias moves
    # outside the row-wise log-sum-exp entirely, so the inner loop is one
    # GEMM, one bias add, and one shifted exp/sum over each block.
    col_bias = log_weights - 0.5 * np.sum(zm * zm, axis=1)
    row_bias = -0.5 * np.sum(zp * zp, axis=1)
    zmt = np.ascontiguousarray(zm.T)

    n_points = points.shape[0]
    out = np.empty(n_points)
    buf = np.empty((min(block, n_points), means.shape[0]))
    with np.errstate(invalid="ignore", divide="ignore"):
        for start in range(0, n_points, block):
            stop = min(start + block, n_points)
            zb = zp[start:stop]
            part = buf[: stop - start]
            np.matmul(zb, zmt, out=part)
            part += col_bias[None, :]
            peak = part.max(axis=1)
            good = np.isfinite(peak)
            part -= np.where(good, peak, 0.0)[:, None]
            np.exp(part, out=part)
            row = np.where(good, peak + np.log(part.sum(axis=1)), -np.inf)
            out[start:stop] = row
    out += row_bias + log_norm
    out[bad_points] = -np.inf
    return out
