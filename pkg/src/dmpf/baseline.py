"""Baseline filters: bootstrap particle filter and stochastic ensemble
Kalman filter, plus the per-step record / run-result containers that all
filters (including the defensive one) share.

Every filter here consumes one observation per step, including t = 0,
and carries weights in log space throughout.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DmpfError, FilterDiverged, NumericalDomain
from .linalg import GaussianDist, RngStream, robust_cholesky, unweighted_moments
from .models import StateSpaceModel, Trajectory
from .particles import ParticleSet, ess, normalize, systematic_resample


@dataclass(frozen=True)
class FilterStepRecord:
    """Posterior summary for one step. ``mix_weight`` is None for filters
    without a mixture proposal; ``wallclock`` is measured, never serialized."""

    t: int
    mean: np.ndarray
    var: np.ndarray
    ess: float
    mix_weight: float | None = None
    wallclock: float = 0.0


@dataclass
class FilterRunResult:
    filter_name: str
    model_name: str
    n_particles: int
    seed: int
    records: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        return np.asarray([r.mean for r in self.records])

    @property
    def variances(self) -> np.ndarray:
        return np.asarray([r.var for r in self.records])

    @property
    def mix_weights(self) -> np.ndarray:
        return np.asarray([
            np.nan if r.mix_weight is None else r.mix_weight for r in self.records
        ])

    def save_csv(self, path) -> None:
        """Columns: t, mean_i.., var_i.., ess and (mixture filters only) a."""
        dim = self.records[0].mean.shape[0]
        with_a = self.records[0].mix_weight is not None
        header = (
            ["t"]
            + [f"mean_{i + 1}" for i in range(dim)]
            + [f"var_{i + 1}" for i in range(dim)]
            + ["ess"]
            + (["a"] if with_a else [])
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for rec in self.records:
                row = [str(rec.t)]
                row += [format(v, ".17g") for v in rec.mean]
                row += [format(v, ".17g") for v in rec.var]
                row.append(format(rec.ess, ".17g"))
                if with_a:
                    row.append(format(rec.mix_weight, ".17g"))
                writer.writerow(row)

    def save_meta(self, path, extra: dict | None = None) -> None:
        meta = {
            "filter": self.filter_name,
            "model": self.model_name,
            "M": self.n_particles,
            "seed": self.seed,
            "n_steps": len(self.records),
        }
        meta.update(extra or {})
        with open(path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def flush_escaped(particles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Replace non-finite particle rows by zeros and report which rows were
    hit, so callers can force their weights to zero. Chaotic transition maps
    can overflow for particles far off the attractor; flushing keeps the
    rest of the ensemble usable."""
    escaped = ~np.isfinite(particles).all(axis=1)
    if escaped.any():
        particles = np.where(escaped[:, None], 0.0, particles)
    return particles, escaped


def _summarize(ps: ParticleSet, t: int, mix_weight=None, wallclock=0.0) -> FilterStepRecord:
    return FilterStepRecord(
        t=t,
        mean=ps.mean(),
        var=ps.var_diag(),
        ess=ess(ps),
        mix_weight=mix_weight,
        wallclock=wallclock,
    )


def observation_loglik(model: StateSpaceModel, t: int, particles: np.ndarray,
                       y: np.ndarray) -> np.ndarray:
    """log N(y; H u, R) for each particle row u.

    Particles that numerically escaped (non-finite state) get -inf.
    """
    h = model.obs_operator(t)
    noise = GaussianDist(np.zeros(model.n_v), model.obs_noise_cov(t))
    with np.errstate(over="ignore", invalid="ignore"):
        innov = np.asarray(y) - particles @ h.T
    return noise.logpdf_many(innov)


# --------------------------------------------------------------------------
# bootstrap particle filter


def pf_init(model: StateSpaceModel, y0: np.ndarray, m: int, rng: RngStream) -> ParticleSet:
    """Draw from the state prior and weight by the first observation."""
    particles = model.prior.sample(rng, size=m)
    logw = observation_loglik(model, 0, particles, y0)
    return normalize(ParticleSet(particles, logw))


def pf_step(model: StateSpaceModel, ps: ParticleSet, t: int, y: np.ndarray,
            rng: RngStream, resample: str = "ess") -> ParticleSet:
    """One bootstrap update: (maybe) resample, propagate, reweight.

    resample="ess" triggers on incoming ESS < M/2; "always" resamples
    every step (used for reference runs).
    """
    if resample not in ("ess", "always"):
        raise ValueError(f"unknown resample policy '{resample}'")
    if resample == "always" or ess(ps) < ps.m / 2.0:
        ps = systematic_resample(ps, rng)
    with np.errstate(over="ignore", invalid="ignore"):
        mean_next = model.transition_mean_many(t, ps.particles)
        noise = rng.standard_normal(mean_next.shape) @ robust_cholesky(
            model.process_noise_cov(t)).T
        particles = mean_next + noise
    particles, escaped = flush_escaped(particles)
    logw = ps.log_weights + observation_loglik(model, t, particles, y)
    logw[escaped] = -np.inf
    return normalize(ParticleSet(particles, logw))


def run_pf(model: StateSpaceModel, observations: np.ndarray, m: int, rng: RngStream,
           resample: str = "ess", seed: int = -1) -> FilterRunResult:
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    result = FilterRunResult("pf", model.name, m, seed)
    try:
        tic = time.perf_counter()
        ps = pf_init(model, observations[0], m, rng)
        result.records.append(_summarize(ps, 0, wallclock=time.perf_counter() - tic))
        for t in range(1, observations.shape[0]):
            tic = time.perf_counter()
            ps = pf_step(model, ps, t, observations[t], rng, resample=resample)
            result.records.append(_summarize(ps, t, wallclock=time.perf_counter() - tic))
    except DmpfError as exc:
        raise FilterDiverged(
            f"pf failed at step {len(result.records)}: {exc}", partial=result) from exc
    return result


def run_reference(model: StateSpaceModel, observations: np.ndarray, m_ref: int,
                  rng: RngStream, seed: int = -1) -> FilterRunResult:
    """Large-M bootstrap run with unconditional resampling; its per-step
    means serve as the posterior-mean reference for error reporting."""
    result = run_pf(model, observations, m_ref, rng, resample="always", seed=seed)
    result.filter_name = "reference"
    return result


# --------------------------------------------------------------------------
# stochastic ensemble Kalman filter


def kalman_gain(cov_uu: np.ndarray, h: np.ndarray, r: np.ndarray) -> np.ndarray:
    """K = C H' (H C H' + R)^{-1}, computed by Cholesky solve."""
    cross = cov_uu @ h.T
    innov_cov = h @ cross + r
    chol = robust_cholesky(innov_cov)
    # K' = (H C H' + R)^{-1} (C H')'
    kt = np.linalg.solve(chol.T, np.linalg.solve(chol, cross.T))
    return kt.T


def enkf_update(model: StateSpaceModel, ensemble: np.ndarray, t: int, y: np.ndarray,
                rng: RngStream) -> np.ndarray:
    """Perturbed-observation analysis step applied to a forecast ensemble."""
    if not np.isfinite(ensemble).all():
        raise NumericalDomain("ensemble contains non-finite states")
    with np.errstate(over="ignore", invalid="ignore"):
        _, cov = unweighted_moments(ensemble)
    if not np.isfinite(cov).all():
        raise NumericalDomain("forecast covariance overflowed")
    h = model.obs_operator(t)
    r = model.obs_noise_cov(t)
    gain = kalman_gain(cov, h, r)
    eta = GaussianDist(np.zeros(model.n_v), r).sample(rng, size=ensemble.shape[0])
    innovation = np.asarray(y) - ensemble @ h.T - eta
    return ensemble + innovation @ gain.T


def enkf_step(model: StateSpaceModel, ensemble: np.ndarray, t: int, y: np.ndarray,
              rng: RngStream) -> np.ndarray:
    """Forecast with the stochastic transition, then analyse."""
    with np.errstate(over="ignore", invalid="ignore"):
        mean_next = model.transition_mean_many(t, ensemble)
        forecast = mean_next + rng.standard_normal(mean_next.shape) @ robust_cholesky(
            model.process_noise_cov(t)).T
    return enkf_update(model, forecast, t, y, rng)


def run_enkf(model: StateSpaceModel, observations: np.ndarray, m: int, rng: RngStream,
             seed: int = -1) -> FilterRunResult:
    observations = np.atleast_2d(np.asarray(observations, dtype=float))
    result = FilterRunResult("enkf", model.name, m, seed)
    try:
        tic = time.perf_counter()
        ensemble = model.prior.sample(rng, size=m)
        ensemble = enkf_update(model, ensemble, 0, observations[0], rng)
        ps = ParticleSet(ensemble, np.zeros(m))
        result.records.append(
            _summarize(normalize(ps), 0, wallclock=time.perf_counter() - tic))
        for t in range(1, observations.shape[0]):
            tic = time.perf_counter()
            ensemble = enkf_step(model, ensemble, t, observations[t], rng)
            ps = normalize(ParticleSet(ensemble, np.zeros(m)))
            result.records.append(_summarize(ps, t, wallclock=time.perf_counter() - tic))
    except DmpfError as exc:
        raise FilterDiverged(
            f"enkf failed at step {len(result.records)}: {exc}", partial=result) from exc
    return result
