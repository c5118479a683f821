"""Benchmark harness: one pinned ground-truth trajectory per experiment, a
large-ensemble bootstrap reference for the posterior, and repeated filter
trials whose randomness comes from filter seeds only.

Reported errors follow the two-column table layout used throughout: the
"mean" column is, per step, the trial-averaged Euclidean distance between
estimated and reference posterior means, and the "variance" column is the
same distance between estimated and reference posterior variances
(diagonal). All trial seeds are derived from the experiment seed by stable
hashing, so outputs are byte-identical across reruns and independent of
worker scheduling.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baseline import run_enkf, run_pf, run_reference
from .defensive import DmpfSettings, run_dmpf
from .errors import ConfigError, DmpfError, ShapeMismatch
from .linalg import derive_seed, rng_from_seed
from .models import Trajectory, build_model, save_trajectory_csv, simulate

FILTER_NAMES = ("pf", "enkf", "dmpf")


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to reproduce one benchmark table."""

    model: str
    filters: tuple = FILTER_NAMES
    n_particles: int = 2000
    n_ref: int = 20000
    trials: int = 20
    seed: int = 0
    model_overrides: dict = field(default_factory=dict)
    dmpf: DmpfSettings = field(default_factory=DmpfSettings)

    def __post_init__(self):
        object.__setattr__(self, "filters", tuple(self.filters))
        for name in self.filters:
            if name not in FILTER_NAMES:
                raise ConfigError(f"unknown filter '{name}' (choose from {FILTER_NAMES})")
        if self.n_particles < 2:
            raise ConfigError("ensemble size must be >= 2")
        if self.n_ref < 10 * self.n_particles:
            raise ConfigError("reference ensemble must be at least 10x the filter size")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")


def run_filter(name: str, model, observations, m: int, rng, seed: int = -1,
               dmpf_settings: DmpfSettings | None = None):
    """Uniform entry point over the three filters."""
    if name == "pf":
        return run_pf(model, observations, m, rng, seed=seed)
    if name == "enkf":
        return run_enkf(model, observations, m, rng, seed=seed)
    if name == "dmpf":
        return run_dmpf(model, observations, m, rng, settings=dmpf_settings, seed=seed)
    raise ConfigError(f"unknown filter '{name}'")


def pinned_trajectory(spec: ExperimentSpec) -> Trajectory:
    """The single ground-truth realization shared by every trial."""
    model = build_model(spec.model, spec.model_overrides)
    rng = rng_from_seed(derive_seed(spec.seed, "traj", 0))
    return simulate(model, rng, model.default_n_steps())


def reference_posterior(model, observations, m_ref: int, rng, seed: int = -1):
    """Per-step posterior mean and diagonal variance from a large bootstrap
    run with unconditional resampling."""
    res = run_reference(model, observations, m_ref, rng, seed=seed)
    return res.means, res.variances


def per_step_distance(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Euclidean distance between estimate and reference rows, per step."""
    est, ref = np.asarray(est), np.asarray(ref)
    if est.shape != ref.shape:
        raise ShapeMismatch(f"estimate {est.shape} vs reference {ref.shape}")
    return np.sqrt(((est - ref) ** 2).sum(axis=1))


def _filter_trial(spec: ExperimentSpec, observations: np.ndarray, name: str,
                  j: int) -> dict:
    """One (filter, trial) cell: returns posterior summaries or the failure
    message; exceptions never propagate past the cell."""
    model = build_model(spec.model, spec.model_overrides)
    run_seed = derive_seed(spec.seed, name, j)
    out = {"filter": name, "trial": j, "seed": run_seed}
    try:
        res = run_filter(name, model, observations, spec.n_particles,
                         rng_from_seed(run_seed), seed=run_seed,
                         dmpf_settings=spec.dmpf)
    except (DmpfError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
        return out
    out["means"] = res.means
    out["variances"] = res.variances
    if name == "dmpf":
        out["mix_weights"] = res.mix_weights
    return out


@dataclass
class RmseReport:
    spec: ExperimentSpec
    n_steps: int
    rmse_mean: dict  # filter -> (T,) trial-averaged distance of posterior means
    rmse_var: dict  # filter -> (T,) same for posterior variances
    failures: dict  # filter -> count
    failure_notes: list  # (trial, filter, message)
    mix_weights: np.ndarray | None  # (J_ok, T) mixture-weight paths
    trial_rows: list  # rows for trials.csv

    def avg_rmse_mean(self, name: str) -> float:
        return float(np.mean(self.rmse_mean[name]))

    def avg_rmse_var(self, name: str) -> float:
        return float(np.mean(self.rmse_var[name]))

    def time_avg_rmse(self, name: str, lo: int = 0, hi: int | None = None) -> float:
        return float(np.mean(self.rmse_mean[name][lo:hi]))

    def median_mix_weight(self, lo: int = 1, hi: int | None = None) -> float:
        """Median mixture weight across trials and steps; t = 0 is excluded
        by default because the weight there is pinned at the pilot value."""
        if self.mix_weights is None or self.mix_weights.size == 0:
            return float("nan")
        return float(np.median(self.mix_weights[:, lo:hi]))


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1) -> RmseReport:
    model = build_model(spec.model, spec.model_overrides)
    traj = pinned_trajectory(spec)
    ref_means, ref_vars = reference_posterior(
        model, traj.observations, spec.n_ref,
        rng_from_seed(derive_seed(spec.seed, "ref", 0)))

    cells = [(name, j) for name in spec.filters for j in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {cell: pool.submit(_filter_trial, spec, traj.observations, *cell)
                       for cell in cells}
            results = [futures[cell].result() for cell in cells]
    else:
        results = [_filter_trial(spec, traj.observations, *cell) for cell in cells]

    n_steps = traj.n_steps
    mean_err = {name: [] for name in spec.filters}
    var_err = {name: [] for name in spec.filters}
    failures = {name: 0 for name in spec.filters}
    failure_notes = []
    mix_rows = []
    trial_rows = []
    for res in results:
        name, j = res["filter"], res["trial"]
        if "error" in res:
            failures[name] += 1
            failure_notes.append((j, name, res["error"]))
            trial_rows.append({
                "trial": j, "filter": name, "seed": res["seed"],
                "status": "failed", "time_avg_rmse": "", "error": res["error"],
            })
            continue
        err = per_step_distance(res["means"], ref_means)
        mean_err[name].append(err)
        var_err[name].append(per_step_distance(res["variances"], ref_vars))
        trial_rows.append({
            "trial": j, "filter": name, "seed": res["seed"], "status": "ok",
            "time_avg_rmse": format(float(np.mean(err)), ".17g"), "error": "",
        })
        if name == "dmpf":
            mix_rows.append(res["mix_weights"])

    rmse_mean, rmse_var = {}, {}
    for name in spec.filters:
        if mean_err[name]:
            rmse_mean[name] = np.asarray(mean_err[name]).mean(axis=0)
            rmse_var[name] = np.asarray(var_err[name]).mean(axis=0)
        else:
            rmse_mean[name] = np.full(n_steps, np.nan)
            rmse_var[name] = np.full(n_steps, np.nan)

    report = RmseReport(
        spec=spec,
        n_steps=n_steps,
        rmse_mean=rmse_mean,
        rmse_var=rmse_var,
        failures=failures,
        failure_notes=failure_notes,
        mix_weights=np.asarray(mix_rows) if mix_rows else None,
        trial_rows=trial_rows,
    )
    if out_dir is not None:
        write_report(report, out_dir, traj)
    return report


# --------------------------------------------------------------------------
# serialization


def _write_step_table(path, names, columns, n_steps):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["t"] + list(names)) + "\n")
        for t in range(n_steps):
            row = [str(t)] + [format(float(columns[n][t]), ".17g") for n in names]
            fh.write(",".join(row) + "\n")


def write_report(report: RmseReport, out_dir, traj: Trajectory | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    names = report.spec.filters
    _write_step_table(os.path.join(out_dir, "rmse_mean.csv"),
                      names, report.rmse_mean, report.n_steps)
    _write_step_table(os.path.join(out_dir, "rmse_var.csv"),
                      names, report.rmse_var, report.n_steps)

    with open(os.path.join(out_dir, "table.csv"), "w", newline="") as fh:
        fh.write("filter,mean,variance\n")
        for name in names:
            fh.write("%s,%s,%s\n" % (
                name,
                format(report.avg_rmse_mean(name), ".17g"),
                format(report.avg_rmse_var(name), ".17g"),
            ))

    with open(os.path.join(out_dir, "trials.csv"), "w", newline="") as fh:
        fh.write("trial,filter,seed,status,time_avg_rmse,error\n")
        for row in report.trial_rows:
            fh.write("%s,%s,%s,%s,%s,%s\n" % (
                row["trial"], row["filter"], row["seed"], row["status"],
                row["time_avg_rmse"], row["error"].replace(",", ";"),
            ))

    if report.mix_weights is not None:
        payload = {
            "per_step_median": [float(v) for v in np.median(report.mix_weights, axis=0)],
            "trials": [[float(v) for v in row] for row in report.mix_weights],
        }
        with open(os.path.join(out_dir, "a_trajectory.json"), "w") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.write("\n")

    if traj is not None:
        save_trajectory_csv(traj, os.path.join(out_dir, "trajectory.csv"))

    meta = dataclasses.asdict(report.spec)
    meta["filters"] = list(meta["filters"])
    meta["failures"] = report.failures
    meta["n_steps"] = report.n_steps
    with open(os.path.join(out_dir, "run_meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# config files and overrides

EXPERIMENT_KEYS = ("model", "filters", "n_particles", "n_ref", "trials", "seed")
DMPF_KEYS = ("a0", "grid_size", "optimize", "ancestor_mode")


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment. Keys are either
    experiment-level, mixture-filter settings, or model parameters
    (optionally written as ``model.<param>``)."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        raw[key] = value
    return raw


def _parse_bool(value: str) -> bool:
    low = str(value).strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got '{value}'")


def spec_from_settings(raw: dict) -> ExperimentSpec:
    """Turn a flat string dict into a typed spec. Unknown keys that are not
    parameters of the chosen model are rejected."""
    raw = dict(raw)
    if "model" not in raw:
        raise ConfigError("config must name a model")
    kwargs = {"model": raw.pop("model")}
    if "filters" in raw:
        kwargs["filters"] = tuple(
            part.strip() for part in raw.pop("filters").split(",") if part.strip())
    for key in ("n_particles", "n_ref", "trials", "seed"):
        if key in raw:
            kwargs[key] = int(float(raw.pop(key)))
    dmpf_kwargs = {}
    if "a0" in raw:
        dmpf_kwargs["a0"] = float(raw.pop("a0"))
    if "grid_size" in raw:
        dmpf_kwargs["grid_size"] = int(float(raw.pop("grid_size")))
    if "optimize" in raw:
        dmpf_kwargs["optimize"] = _parse_bool(raw.pop("optimize"))
    if "ancestor_mode" in raw:
        dmpf_kwargs["ancestor_mode"] = raw.pop("ancestor_mode")
    overrides = {}
    for key, value in raw.items():
        overrides[key.removeprefix("model.")] = value
    # validate override names/values and store them with their real types so
    # metadata echoes numbers rather than strings
    model = build_model(kwargs["model"], overrides)
    kwargs["model_overrides"] = {key: getattr(model, key) for key in overrides}
    try:
        kwargs["dmpf"] = DmpfSettings(**dmpf_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentSpec(**kwargs)


def load_config(path) -> ExperimentSpec:
    with open(path) as fh:
        return spec_from_settings(parse_config_text(fh.read()))
