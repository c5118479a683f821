"""State-space models and the three benchmark systems.

A model provides a Gaussian state prior, a deterministic transition-mean
map plus Gaussian process noise, and a linear observation operator with
Gaussian observation noise:

    u_0 ~ prior,  u_t = transition_mean(t, u_{t-1}) + xi_t,   xi_t ~ N(0, Q_t)
    y_t = H_t u_t + eta_t,                                    eta_t ~ N(0, R_t)

Observations exist at every step including t = 0. ``steps`` on the concrete
models counts transitions, so a default trajectory has steps + 1 time points.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalDomain
from .linalg import GaussianDist, RngStream


class StateSpaceModel:
    """Interface shared by all models; concrete classes are dataclasses."""

    n_u: int
    n_v: int
    name: str

    @property
    def prior(self) -> GaussianDist:
        raise NotImplementedError

    def transition_mean(self, t: int, u: np.ndarray) -> np.ndarray:
        """Mean of u_t given u_{t-1} = u."""
        return self.transition_mean_many(t, u[None, :])[0]

    def transition_mean_many(self, t: int, states: np.ndarray) -> np.ndarray:
        """Vectorized transition mean, one row per state."""
        raise NotImplementedError

    def process_noise_cov(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def obs_operator(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def obs_noise_cov(self, t: int) -> np.ndarray:
        raise NotImplementedError

    def default_n_steps(self) -> int:
        """Number of time points (t = 0 .. steps) in a default trajectory."""
        return self.steps + 1


# --------------------------------------------------------------------------
# transition-mean maps


def bernoulli_mean(x, dt):
    """Exact flow map of dx/dt = x - x^3 over an interval dt.

    x * (x^2 + (1 - x^2) exp(-2 dt))^(-1/2). For dt > 0 the radicand is
    bounded below by exp(-2 dt) and the map is defined for every real x;
    a nonpositive radicand (possible only for dt <= 0) raises.
    """
    x = np.asarray(x, dtype=float)
    radicand = x * x + (1.0 - x * x) * math.exp(-2.0 * dt)
    if np.any(radicand <= 0.0):
        raise NumericalDomain("nonpositive radicand in the flow map")
    out = x / np.sqrt(radicand)
    return float(out) if out.ndim == 0 else out


def _bernoulli_mean_rows(x, dt):
    """Filter-side variant of the flow map: rows with a nonpositive radicand
    become NaN (downstream they are treated as escaped particles and receive
    zero weight) instead of aborting the whole ensemble."""
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        radicand = x * x + (1.0 - x * x) * math.exp(-2.0 * dt)
        return np.where(radicand > 0.0, x / np.sqrt(np.abs(radicand)), np.nan)


def lorenz_mean(u, dt, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    """One explicit Euler step of the Lorenz 63 drift (vectorized over rows)."""
    u = np.asarray(u, dtype=float)
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    return np.stack(
        [
            x + sigma * (y - x) * dt,
            y + (x * (rho - z) - y) * dt,
            z + (x * y - beta * z) * dt,
        ],
        axis=-1,
    )


def robot_speed(t):
    return 0.7 * abs(math.sin(t)) + 0.1


def robot_turn_rate(t):
    return 0.08 * math.cos(t)


def _robot_rhs(t, u, length, v_fn, omega_fn):
    theta, phi = u[..., 2], u[..., 3]
    v = v_fn(t)
    return np.stack(
        [
            v * np.cos(theta),
            v * np.sin(theta),
            (v / length) * np.tan(phi),
            np.full_like(theta, omega_fn(t)),
        ],
        axis=-1,
    )


def robot_mean(t0, u, dt, length, v_fn=robot_speed, omega_fn=robot_turn_rate):
    """Classical RK4 step of the car-like kinematics over [t0, t0 + dt].

    State rows are (x, y, theta, phi); controls are evaluated at the RK4
    stage times, so time-varying speed/turn-rate laws are integrated
    consistently. Angles are left unwrapped.
    """
    u = np.asarray(u, dtype=float)
    k1 = _robot_rhs(t0, u, length, v_fn, omega_fn)
    k2 = _robot_rhs(t0 + 0.5 * dt, u + 0.5 * dt * k1, length, v_fn, omega_fn)
    k3 = _robot_rhs(t0 + 0.5 * dt, u + 0.5 * dt * k2, length, v_fn, omega_fn)
    k4 = _robot_rhs(t0 + dt, u + dt * k3, length, v_fn, omega_fn)
    return u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# --------------------------------------------------------------------------
# concrete models


@dataclass(frozen=True)
class LinearGaussianModel(StateSpaceModel):
    """u_t = A u_{t-1} + noise, y_t = H u_t + noise; used as a test bed
    where the exact posterior is available in closed form."""

    a_matrix: np.ndarray
    q_cov: np.ndarray
    h_matrix: np.ndarray
    r_cov: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    name: str = "linear_gaussian"
    steps: int = 20

    def __post_init__(self):
        for field in ("a_matrix", "q_cov", "h_matrix", "r_cov", "prior_mean", "prior_cov"):
            object.__setattr__(self, field, np.asarray(getattr(self, field), dtype=float))

    @property
    def n_u(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def n_v(self) -> int:
        return self.h_matrix.shape[0]

    @property
    def prior(self) -> GaussianDist:
        return GaussianDist(self.prior_mean, self.prior_cov)

    def transition_mean_many(self, t, states):
        return np.asarray(states, dtype=float) @ self.a_matrix.T

    def process_noise_cov(self, t):
        return self.q_cov

    def obs_operator(self, t):
        return self.h_matrix

    def obs_noise_cov(self, t):
        return self.r_cov


@dataclass(frozen=True)
class BernoulliModel(StateSpaceModel):
    """Scalar logistic-saturation system with a strongly non-Gaussian posterior."""

    mu0: float = -0.1
    sigma0: float = 0.2
    dt: float = 0.3
    process_std: float = 0.01
    obs_std: float = 0.8
    steps: int = 40

    name = "bernoulli"
    n_u = 1
    n_v = 1

    @property
    def prior(self) -> GaussianDist:
        return GaussianDist([self.mu0], [[self.sigma0**2]])

    def transition_mean_many(self, t, states):
        states = np.asarray(states, dtype=float)
        return _bernoulli_mean_rows(states[:, 0], self.dt)[:, None]

    def process_noise_cov(self, t):
        return np.array([[self.process_std**2]])

    def obs_operator(self, t):
        return np.eye(1)

    def obs_noise_cov(self, t):
        return np.array([[self.obs_std**2]])


@dataclass(frozen=True)
class Lorenz63Model(StateSpaceModel):
    """Euler-discretized Lorenz 63 with additive noise on state and data.

    The discretization is the fixed-step explicit Euler map itself (the
    benchmark's definition), not an approximation of the continuous flow.
    """

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.03
    process_std: float = 0.5
    obs_std: float = 1.0
    init_mean: tuple = (1.51, -1.53, 25.46)
    prior_std: float = 1.0
    steps: int = 150

    name = "lorenz63"
    n_u = 3
    n_v = 3

    @property
    def prior(self) -> GaussianDist:
        return GaussianDist(np.array(self.init_mean), self.prior_std**2 * np.eye(3))

    def transition_mean_many(self, t, states):
        return lorenz_mean(states, self.dt, self.sigma, self.rho, self.beta)

    def process_noise_cov(self, t):
        return self.process_std**2 * np.eye(3)

    def obs_operator(self, t):
        return np.eye(3)

    def obs_noise_cov(self, t):
        return self.obs_std**2 * np.eye(3)


@dataclass(frozen=True)
class CarRobotModel(StateSpaceModel):
    """Car-like robot with pose observations (x, y, theta); phi is hidden.

    L is the vehicle length. Per-step process noise is additive on all
    four components after the RK4 propagation.
    """

    L: float = 0.1
    dt: float = 0.05
    process_std: float = 0.3
    obs_std: float = 0.3
    prior_std: float = 0.5
    steps: int = 100

    name = "robot"
    n_u = 4
    n_v = 3

    @property
    def prior(self) -> GaussianDist:
        return GaussianDist(np.zeros(4), self.prior_std**2 * np.eye(4))

    def transition_mean_many(self, t, states):
        t0 = (t - 1) * self.dt
        return robot_mean(t0, states, self.dt, self.L)

    def process_noise_cov(self, t):
        return self.process_std**2 * np.eye(4)

    def obs_operator(self, t):
        return np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]])

    def obs_noise_cov(self, t):
        return self.obs_std**2 * np.eye(3)


MODEL_REGISTRY = {
    "bernoulli": BernoulliModel,
    "lorenz63": Lorenz63Model,
    "robot": CarRobotModel,
}


def build_model(name: str, overrides: dict | None = None) -> StateSpaceModel:
    """Instantiate a registered model with scalar parameter overrides."""
    if name not in MODEL_REGISTRY:
        raise ConfigError(f"unknown model '{name}' (choose from {sorted(MODEL_REGISTRY)})")
    cls = MODEL_REGISTRY[name]
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"model '{name}' has no parameter '{key}'")
        default = defaults[key]
        if isinstance(default, int) and not isinstance(default, bool):
            kwargs[key] = int(float(value))
        elif isinstance(default, float):
            kwargs[key] = float(value)
        else:
            raise ConfigError(f"parameter '{key}' cannot be overridden from a scalar")
    return cls(**kwargs)


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class Trajectory:
    """Ground-truth states with their noisy observations, one row per step."""

    states: np.ndarray  # (T, n_u)
    observations: np.ndarray  # (T, n_v)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        o = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if s.shape[0] != o.shape[0]:
            raise ValueError("states and observations must have equal length")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "observations", o)

    @property
    def n_steps(self) -> int:
        return self.states.shape[0]


def simulate(model: StateSpaceModel, rng: RngStream,
             n_steps: int | None = None) -> Trajectory:
    """Ancestral sampling of ``n_steps`` time points t = 0 .. n_steps - 1."""
    if n_steps is None:
        n_steps = model.default_n_steps()
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    states = np.empty((n_steps, model.n_u))
    obs = np.empty((n_steps, model.n_v))
    u = model.prior.sample(rng)
    for t in range(n_steps):
        if t > 0:
            noise = GaussianDist(np.zeros(model.n_u), model.process_noise_cov(t)).sample(rng)
            with np.errstate(over="ignore", invalid="ignore"):
                u = model.transition_mean(t, u) + noise
        eta = GaussianDist(np.zeros(model.n_v), model.obs_noise_cov(t)).sample(rng)
        if not np.all(np.isfinite(u)):
            raise NumericalDomain(f"simulated state diverged at step {t}; "
                                  "pick another seed or smaller noise")
        states[t] = u
        obs[t] = model.obs_operator(t) @ u + eta
    return Trajectory(states, obs)


def save_trajectory_csv(traj: Trajectory, path) -> None:
    n_u, n_v = traj.states.shape[1], traj.observations.shape[1]
    header = ["t"] + [f"u_{i + 1}" for i in range(n_u)] + [f"y_{i + 1}" for i in range(n_v)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(traj.n_steps):
            row = [str(t)]
            row += [format(v, ".17g") for v in traj.states[t]]
            row += [format(v, ".17g") for v in traj.observations[t]]
            writer.writerow(row)


def load_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_u = sum(1 for h in header if h.startswith("u_"))
        rows = [list(map(float, row)) for row in reader]
    data = np.asarray(rows)
    return Trajectory(states=data[:, 1 : 1 + n_u], observations=data[:, 1 + n_u :])
