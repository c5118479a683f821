"""Weighted particle ensembles: normalization, ESS, systematic resampling."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import AllWeightsZero
from .linalg import RngStream


@dataclass(frozen=True)
class ParticleSet:
    """M particles with log-weights; the carrier of every filter's posterior.

    ``normalized`` means exp(log_weights) sums to one. Instances are treated
    as immutable: operations return new sets.
    """

    particles: np.ndarray  # (M, n)
    log_weights: np.ndarray  # (M,)
    normalized: bool = False

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.particles, dtype=float))
        lw = np.atleast_1d(np.asarray(self.log_weights, dtype=float))
        if p.shape[0] < 1:
            raise ValueError("a particle set needs at least one particle")
        if lw.shape != (p.shape[0],):
            raise ValueError("one log-weight per particle required")
        if not np.all(np.isfinite(p)):
            raise ValueError("NaN/Inf particle positions are not admitted")
        if np.any(np.isnan(lw)):
            raise ValueError("NaN log-weights are not admitted")
        object.__setattr__(self, "particles", p)
        object.__setattr__(self, "log_weights", lw)

    @property
    def m(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def weights(self) -> np.ndarray:
        self._require_normalized()
        return np.exp(self.log_weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def var_diag(self) -> np.ndarray:
        """Weighted per-coordinate variance (no bias correction)."""
        w = self.weights
        mu = w @ self.particles
        return w @ (self.particles - mu) ** 2

    def _require_normalized(self):
        if not self.normalized:
            raise ValueError("operation requires a normalized particle set")


def normalize(ps: ParticleSet) -> ParticleSet:
    """Self-normalize weights via log-sum-exp; shift-invariant in log space."""
    lw = ps.log_weights
    peak = lw.max()
    if not np.isfinite(peak):
        raise AllWeightsZero("every log-weight is -inf")
    lse = peak + np.log(np.exp(lw - peak).sum())
    return replace(ps, log_weights=lw - lse, normalized=True)


def ess(ps: ParticleSet) -> float:
    """Effective sample size 1 / sum(W^2)."""
    w = ps.weights
    return float(1.0 / np.sum(w * w))


def systematic_resample(ps: ParticleSet, rng: RngStream) -> ParticleSet:
    """Resample to M equally weighted particles with a single uniform offset.

    Copy counts are floor(M W) or ceil(M W) for every particle, and the
    expected count of particle m is exactly M W_m.
    """
    w = ps.weights
    m = ps.m
    positions = (rng.uniform() + np.arange(m)) / m
    idx = np.searchsorted(np.cumsum(w), positions, side="right")
    np.clip(idx, 0, m - 1, out=idx)
    return ParticleSet(
        particles=ps.particles[idx],
        log_weights=np.full(m, -np.log(m)),
        normalized=True,
    )
