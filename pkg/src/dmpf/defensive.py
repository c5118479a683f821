"""Defensive marginal particle filter.

Each step targets the marginal posterior p(u_t | y_0:t) directly: particles
are drawn from a two-component mixture proposal

    q(u) = a * q_gauss(u) + (1 - a) * q_boot(u)

where q_boot is the bootstrap proposal (the predictive mixture implied by
the previous particle set) and q_gauss is a Gaussian fitted to an ensemble
Kalman analysis of the same ancestors. Importance weights use the full
mixture density in the denominator (balance heuristic), so a single bad
component cannot produce unbounded weights. The mixture weight ``a`` is
re-optimized every step by minimizing an empirical weight-variance
surrogate over a fixed grid, using draws taken at a pilot value ``a0``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .baseline import (
    FilterRunResult,
    _summarize,
    enkf_update,
    observation_loglik,
)
from .errors import (
    AllWeightsZero,
    DmpfError,
    FilterDiverged,
    NotPositiveDefinite,
    NumericalDomain,
)
from .linalg import (
    GaussianDist,
    RngStream,
    gaussian_mixture_logpdf,
    robust_cholesky,
    unweighted_moments,
    weighted_moments,
)
from .models import StateSpaceModel
from .particles import ParticleSet, ess, normalize, systematic_resample


@dataclass(frozen=True)
class DmpfSettings:
    """Knobs for the mixture-weight search and ancestor handling."""

    a0: float = 0.5  # pilot mixture weight used for the optimization draw
    grid_size: int = 101  # grid over [0, 1] searched for the mixture weight
    optimize: bool = True  # if False, keep a = a0 at every step
    ancestor_mode: str = "resample"  # "resample" or "weighted"

    def __post_init__(self):
        if not 0.0 <= self.a0 <= 1.0:
            raise ValueError("a0 must lie in [0, 1]")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.ancestor_mode not in ("resample", "weighted"):
            raise ValueError(f"unknown ancestor_mode '{self.ancestor_mode}'")


class PfComponent:
    """Bootstrap proposal component: a Gaussian mixture with one component
    per ancestor, sharing the process-noise covariance.

    At t = 0 this degenerates to the one-component state prior, so the same
    code path covers initialization.
    """

    def __init__(self, means: np.ndarray, log_weights: np.ndarray, cov: np.ndarray):
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        self.log_weights = np.asarray(log_weights, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        if self.log_weights.shape[0] != self.means.shape[0]:
            raise ValueError("one log-weight per component required")
        # components whose transition mean overflowed carry no mass
        escaped = ~np.isfinite(self.means).all(axis=1)
        if escaped.any():
            self.means = np.where(escaped[:, None], 0.0, self.means)
            self.log_weights = np.where(escaped, -np.inf, self.log_weights)
        self._chol = robust_cholesky(self.cov)

    @classmethod
    def from_prior(cls, prior: GaussianDist) -> "PfComponent":
        return cls(prior.mean[None, :], np.zeros(1), prior.cov)

    @classmethod
    def from_ancestors(cls, means: np.ndarray, log_weights: np.ndarray,
                       process_cov: np.ndarray) -> "PfComponent":
        return cls(means, log_weights, process_cov)

    def sample(self, rng: RngStream, k: int) -> np.ndarray:
        if k == 0:
            return np.empty((0, self.means.shape[1]))
        weights = np.exp(self.log_weights - np.logaddexp.reduce(self.log_weights))
        idx = rng.choice(self.means.shape[0], size=k, p=weights / weights.sum())
        z = rng.standard_normal((k, self.means.shape[1]))
        return self.means[idx] + z @ self._chol.T

    def logpdf_many(self, points: np.ndarray) -> np.ndarray:
        return gaussian_mixture_logpdf(points, self.means, self.log_weights, self.cov)


def predictive_logpdf(component: PfComponent, points: np.ndarray) -> np.ndarray:
    """Density of the one-step-ahead predictive mixture at the given points."""
    return component.logpdf_many(points)


def build_enkf_proposal(model: StateSpaceModel, t: int, y: np.ndarray,
                        forecast: np.ndarray, pf_comp: PfComponent,
                        rng: RngStream) -> GaussianDist:
    """Fit the Gaussian proposal from an ensemble Kalman analysis.

    The analysis ensemble gives a pilot Gaussian via unweighted moments;
    fresh draws from it are importance-reweighted against the actual
    target integrand (likelihood times predictive) and the Gaussian is
    refitted from weighted moments. Raises NotPositiveDefinite or
    AllWeightsZero when the fit degenerates; callers fall back to the
    bootstrap proposal.
    """
    m = forecast.shape[0]
    forecast = forecast[np.isfinite(forecast).all(axis=1)]
    if forecast.shape[0] < 2:
        raise AllWeightsZero("forecast ensemble numerically escaped")
    analysis = enkf_update(model, forecast, t, y, rng)
    mean, cov = unweighted_moments(analysis)
    pilot = GaussianDist(mean, cov)
    draws = pilot.sample(rng, size=m)
    log_target = observation_loglik(model, t, draws, y) + pf_comp.logpdf_many(draws)
    logw = log_target - pilot.logpdf_many(draws)
    norm = np.logaddexp.reduce(logw)
    if not np.isfinite(norm):
        raise AllWeightsZero("proposal refit weights vanished")
    weights = np.exp(logw - norm)
    mean, cov = weighted_moments(draws, weights)
    return GaussianDist(mean, cov)


@dataclass(frozen=True)
class WeightBreakdown:
    """Per-particle log factors of the balance-heuristic weight, cached so
    the mixture-weight search never re-evaluates a density."""

    log_lik: np.ndarray
    log_pred: np.ndarray
    log_qgauss: np.ndarray

    def log_balance_at(self, a: float) -> np.ndarray:
        """log [ lik * pred / (a * q_gauss + (1 - a) * pred) ]."""
        if a <= 0.0:
            return self.log_lik
        if a >= 1.0:
            return self.log_lik + self.log_pred - self.log_qgauss
        log_denom = np.logaddexp(
            math.log(a) + self.log_qgauss,
            math.log1p(-a) + self.log_pred,
        )
        return self.log_lik + self.log_pred - log_denom


def sample_mixture(rng: RngStream, mix_weight: float, q_gauss: GaussianDist | None,
                   pf_comp: PfComponent, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic-mixture draw: round(a * M) points from the Gaussian,
    the rest from the bootstrap component. Returns (points, from_gauss)
    where the boolean labels are diagnostic only — weights never use them.
    """
    m_gauss = int(round(mix_weight * m))
    m_gauss = min(max(m_gauss, 0), m)
    parts = []
    labels = np.zeros(m, dtype=bool)
    if m_gauss > 0:
        parts.append(q_gauss.sample(rng, size=m_gauss))
        labels[:m_gauss] = True
    if m - m_gauss > 0:
        parts.append(pf_comp.sample(rng, m - m_gauss))
    return np.vstack(parts), labels


def balance_weights(model: StateSpaceModel, t: int, y: np.ndarray, points: np.ndarray,
                    q_gauss: GaussianDist | None, pf_comp: PfComponent) -> WeightBreakdown:
    """Evaluate every density factor once at the sampled points."""
    log_lik = observation_loglik(model, t, points, y)
    log_pred = pf_comp.logpdf_many(points)
    if q_gauss is None:
        log_qgauss = np.full(points.shape[0], -np.inf)
    else:
        log_qgauss = q_gauss.logpdf_many(points)
    return WeightBreakdown(log_lik, log_pred, log_qgauss)


def mix_weight_objectives(breakdown: WeightBreakdown, grid: np.ndarray,
                          a0: float) -> np.ndarray:
    """Empirical variance surrogate of the balance weights at each grid
    value, importance-corrected back to the pilot draw at a0.

    A single evidence estimate, taken from the pilot weights, normalizes
    the weights for every candidate mixture value. Renormalizing per value
    would let a component that piles all its mass on a few points hide its
    own degeneracy, so the shared constant is load-bearing.
    """
    logw0 = breakdown.log_balance_at(a0)
    log_evidence = np.logaddexp.reduce(logw0) - math.log(logw0.shape[0])
    if not np.isfinite(log_evidence):
        return np.full(grid.shape[0], np.inf)
    w0 = np.exp(logw0 - log_evidence)
    objectives = np.empty(grid.shape[0])
    with np.errstate(over="ignore", invalid="ignore"):
        for k, a in enumerate(grid):
            wa = np.exp(breakdown.log_balance_at(float(a)) - log_evidence)
            # overflow of wa means the candidate badly misses mass the pilot
            # saw; 0 * inf can then produce NaN, which also deserves +inf
            objectives[k] = np.mean(np.nan_to_num((wa - 1.0) ** 2 * w0, nan=np.inf))
    return objectives


def optimize_mix_weight(breakdown: WeightBreakdown, settings: DmpfSettings
                        ) -> tuple[float, np.ndarray]:
    """Grid-search the mixture weight; ties resolve to the smallest a so the
    cheap bootstrap component wins when the Gaussian adds nothing."""
    grid = np.linspace(0.0, 1.0, settings.grid_size)
    objectives = mix_weight_objectives(breakdown, grid, settings.a0)
    if not np.any(np.isfinite(objectives)):
        return settings.a0, objectives
    best = np.min(objectives[np.isfinite(objectives)])
    cutoff = best + 1e-12 * max(1.0, abs(best))
    idx = int(np.argmax(objectives <= cutoff))
    return float(grid[idx]), objectives


def _mixture_step(model, t, y, pf_comp, forecast, m, rng, settings, diag):
    """Shared body of init and step: build the Gaussian, pick a, draw, weight.

    Returns the normalized particle set plus the chosen mixture weight. On a
    degenerate Gaussian fit the step falls back to the pure bootstrap
    proposal (a = 0), which is always available.
    """
    if not settings.optimize and settings.a0 == 0.0:
        q_gauss = None  # pure bootstrap requested; the Gaussian is never used
    else:
        try:
            q_gauss = build_enkf_proposal(model, t, y, forecast, pf_comp, rng)
        except (NotPositiveDefinite, AllWeightsZero, NumericalDomain, ValueError):
            # degenerate Gaussian fit; the bootstrap proposal is always available
            q_gauss = None
            diag["fallback"] = True

    if q_gauss is None:
        mix_weight = 0.0
        points = pf_comp.sample(rng, m)
        logw = observation_loglik(model, t, points, y)
        ps = normalize(ParticleSet(points, logw))
        return ps, mix_weight

    if settings.optimize and t > 0:
        pilot_points, _ = sample_mixture(rng, settings.a0, q_gauss, pf_comp, m)
        pilot = balance_weights(model, t, y, pilot_points, q_gauss, pf_comp)
        mix_weight, objectives = optimize_mix_weight(pilot, settings)
        chosen = int(round(mix_weight * (settings.grid_size - 1)))
        diag["objective_at_0"] = float(objectives[0])
        diag["objective_at_1"] = float(objectives[-1])
        diag["objective_at_a"] = float(objectives[chosen])
    else:
        mix_weight = settings.a0

    points, _ = sample_mixture(rng, mix_weight, q_gauss, pf_comp, m)
    breakdown = balance_weights(model, t, y, points, q_gauss, pf_comp)
    ps = normalize(ParticleSet(points, breakdown.log_balance_at(mix_weight)))
    return ps, mix_weight


def dmpf_init(model: StateSpaceModel, y0: np.ndarray, m: int, rng: RngStream,
              settings: DmpfSettings) -> tuple[ParticleSet, float, dict]:
    """First step: the predictive mixture is the exact state prior and the
    mixture weight stays at the pilot value (no optimization at t = 0)."""
    diag = {"t": 0, "fallback": False}
    pf_comp = PfComponent.from_prior(model.prior)
    forecast = model.prior.sample(rng, size=m)
    ps, mix_weight = _mixture_step(model, 0, np.asarray(y0, dtype=float), pf_comp,
                                   forecast, m, rng, settings, diag)
    diag["a"] = mix_weight
    return ps, mix_weight, diag


def dmpf_step(model: StateSpaceModel, ps: ParticleSet, t: int, y: np.ndarray,
              m: int, rng: RngStream, settings: DmpfSettings
              ) -> tuple[ParticleSet, float, dict]:
    """One defensive update from the previous particle set."""
    diag = {"t": t, "fallback": False}
    y = np.asarray(y, dtype=float)
    q_cov = model.process_noise_cov(t)
    with np.errstate(over="ignore", invalid="ignore"):
        if settings.ancestor_mode == "resample":
            ancestors = systematic_resample(ps, rng)
            means = model.transition_mean_many(t, ancestors.particles)
            pf_comp = PfComponent.from_ancestors(means, ancestors.log_weights, q_cov)
            forecast_means = means
        else:
            pf_comp = PfComponent.from_ancestors(
                model.transition_mean_many(t, ps.particles), ps.log_weights, q_cov)
            ensemble = systematic_resample(ps, rng)
            forecast_means = model.transition_mean_many(t, ensemble.particles)
        chol_q = robust_cholesky(q_cov)
        forecast = forecast_means + rng.standard_normal(forecast_means.shape) @ chol_q.T
    ps_new, mix_weight = _mixture_step(model, t, y, pf_comp, forecast, m, rng,
                                       settings, diag)
    diag["a"] = mix_weight
    return ps_new, mix_weight, diag


def run_dmpf(model: StateSpaceModel, observations: np.ndarray, m: int, rng: RngStream,
             settings: DmpfSettings | None = None, seed: int = -1) -> FilterRunResult:
    settings = settings or DmpfSettings()
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    result = FilterRunResult("dmpf", model.name, m, seed)
    try:
        tic = time.perf_counter()
        ps, mix_weight, diag = dmpf_init(model, observations[0], m, rng, settings)
        diag["ess"] = ess(ps)
        result.records.append(
            _summarize(ps, 0, mix_weight=mix_weight, wallclock=time.perf_counter() - tic))
        result.diagnostics.append(diag)
        for t in range(1, observations.shape[0]):
            tic = time.perf_counter()
            ps, mix_weight, diag = dmpf_step(model, ps, t, observations[t], m, rng,
                                             settings)
            rec = _summarize(ps, t, mix_weight=mix_weight,
                             wallclock=time.perf_counter() - tic)
            diag["ess"] = rec.ess
            result.records.append(rec)
            result.diagnostics.append(diag)
    except DmpfError as exc:
        raise FilterDiverged(
            f"dmpf failed at step {len(result.records)}: {exc}", partial=result) from exc
    return result
