"""Sequential Bayesian state estimation with a defensive mixture proposal.

The package provides a marginal particle filter whose proposal mixes an
ensemble-Kalman Gaussian with the bootstrap predictive, weighted by the
full mixture density and with the mixture weight re-optimized online,
alongside bootstrap-PF and EnKF baselines and a benchmark harness.
"""

from .baseline import (
    FilterRunResult,
    FilterStepRecord,
    enkf_step,
    enkf_update,
    kalman_gain,
    observation_loglik,
    pf_init,
    pf_step,
    run_enkf,
    run_pf,
    run_reference,
)
from .bench import (
    ExperimentSpec,
    RmseReport,
    load_config,
    per_step_distance,
    pinned_trajectory,
    reference_posterior,
    run_experiment,
    run_filter,
)
from .defensive import (
    DmpfSettings,
    PfComponent,
    WeightBreakdown,
    balance_weights,
    build_enkf_proposal,
    dmpf_init,
    dmpf_step,
    mix_weight_objectives,
    optimize_mix_weight,
    predictive_logpdf,
    run_dmpf,
    sample_mixture,
)
from .errors import (
    AllWeightsZero,
    ConfigError,
    DmpfError,
    EmptyEnsemble,
    FilterDiverged,
    NotPositiveDefinite,
    NumericalDomain,
    ShapeMismatch,
    SingleParticle,
)
from .linalg import (
    GaussianDist,
    derive_seed,
    gaussian_mixture_logpdf,
    rng_from_seed,
    robust_cholesky,
    unweighted_moments,
    weighted_moments,
)
from .models import (
    BernoulliModel,
    CarRobotModel,
    LinearGaussianModel,
    Lorenz63Model,
    StateSpaceModel,
    Trajectory,
    bernoulli_mean,
    build_model,
    load_trajectory_csv,
    lorenz_mean,
    robot_mean,
    save_trajectory_csv,
    simulate,
)
from .particles import ParticleSet, ess, normalize, systematic_resample
from .presets import PRESETS, load_preset

__version__ = "0.1.0"
