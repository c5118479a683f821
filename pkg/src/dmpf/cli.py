"""Command-line front end.

Three subcommands share one seeding scheme: ``simulate`` writes the same
trajectory that ``bench`` would use for trial 0 of the same seed, and
``filter`` runs a single filter on it. All output files are byte-identical
across reruns with the same arguments.

Exit codes: 0 success, 2 bad configuration, 3 numerical failure,
4 benchmark with more than half the trials failing for some filter.
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib.resources
import json
import os
import sys

import numpy as np

from .bench import (
    DMPF_KEYS,
    _parse_bool,
    parse_config_text,
    run_experiment,
    run_filter,
    spec_from_settings,
)
from .defensive import DmpfSettings
from .errors import ConfigError, DmpfError, FilterDiverged
from .linalg import derive_seed, rng_from_seed
from .models import build_model, load_trajectory_csv, save_trajectory_csv, simulate


def _split_set_pairs(pairs) -> dict:
    raw = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        key, value = (part.strip() for part in pair.split("=", 1))
        if not key or not value:
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        raw[key] = value
    return raw


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")


def _model_meta(model) -> dict:
    meta = dataclasses.asdict(model)
    meta["name"] = model.name
    return meta


def _cmd_simulate(args) -> int:
    overrides = _split_set_pairs(args.set)
    model = build_model(args.model, overrides)
    rng = rng_from_seed(derive_seed(args.seed, "traj", 0))
    traj = simulate(model, rng, model.default_n_steps())
    os.makedirs(args.out, exist_ok=True)
    save_trajectory_csv(traj, os.path.join(args.out, "trajectory.csv"))
    _write_json(os.path.join(args.out, "run_meta.json"), {
        "command": "simulate",
        "model": _model_meta(model),
        "seed": args.seed,
        "n_steps": traj.n_steps,
    })
    print(f"wrote {traj.n_steps} steps to {args.out}/trajectory.csv")
    return 0


def _cmd_filter(args) -> int:
    raw = _split_set_pairs(args.set)
    dmpf_kwargs = {}
    for key in DMPF_KEYS:
        if key in raw:
            value = raw.pop(key)
            if key == "grid_size":
                dmpf_kwargs[key] = int(float(value))
            elif key == "a0":
                dmpf_kwargs[key] = float(value)
            elif key == "optimize":
                dmpf_kwargs[key] = _parse_bool(value)
            else:
                dmpf_kwargs[key] = value
    try:
        settings = DmpfSettings(**dmpf_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    model = build_model(args.model, raw)
    if args.traj:
        traj = load_trajectory_csv(args.traj)
        if traj.observations.shape[1] != model.n_v:
            raise ConfigError("trajectory observation dimension does not match model")
    else:
        traj = simulate(model, rng_from_seed(derive_seed(args.seed, "traj", 0)),
                        model.default_n_steps())
    run_seed = derive_seed(args.seed, args.name, 0)
    error = None
    try:
        result = run_filter(args.name, model, traj.observations, args.n_particles,
                            rng_from_seed(run_seed), seed=run_seed,
                            dmpf_settings=settings)
    except FilterDiverged as exc:
        # flush whatever steps completed before reporting the failure
        result = exc.partial
        error = str(exc)
    os.makedirs(args.out, exist_ok=True)
    if result is not None and result.records:
        result.save_csv(os.path.join(args.out, "filter_run.csv"))
    if not args.traj:
        save_trajectory_csv(traj, os.path.join(args.out, "trajectory.csv"))
    meta = {
        "command": "filter",
        "filter": args.name,
        "model": _model_meta(model),
        "M": args.n_particles,
        "seed": args.seed,
        "n_steps": traj.n_steps,
    }
    if error is not None:
        meta["error"] = error
        meta["completed_steps"] = 0 if result is None else len(result.records)
    if args.name == "dmpf" and result is not None:
        meta["dmpf"] = dataclasses.asdict(settings)
        _write_json(os.path.join(args.out, "diagnostics.json"),
                    {"steps": result.diagnostics})
    _write_json(os.path.join(args.out, "run_meta.json"), meta)
    if error is not None:
        print(f"numerical failure: {error}", file=sys.stderr)
        print(f"partial output flushed to {args.out}", file=sys.stderr)
        return 3
    print(f"wrote {args.out}/filter_run.csv")
    return 0


def _resolve_config(token: str):
    if os.path.exists(token):
        with open(token) as fh:
            return parse_config_text(fh.read())
    if "/" not in token and not token.endswith(".cfg"):
        resource = importlib.resources.files("dmpf").joinpath(f"configs/{token}.cfg")
        if resource.is_file():
            return parse_config_text(resource.read_text())
    raise ConfigError(f"config '{token}' not found")


def _bench_settings(args) -> dict:
    """Flat key/value experiment settings with flag precedence:
    config file < --paper-scale < explicit flags < --set."""
    raw = _resolve_config(args.config) if args.config else {}
    if args.model:
        raw["model"] = args.model
    if "model" not in raw:
        raise ConfigError("bench needs --model or a config naming one")
    if args.paper_scale:
        raw.update(n_particles="10000", n_ref="500000", trials="1000")
    if args.n_particles is not None:
        raw["n_particles"] = str(args.n_particles)
    if args.trials is not None:
        raw["trials"] = str(args.trials)
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    raw.update(_split_set_pairs(args.set))
    return raw


def _cmd_bench(args) -> int:
    spec = spec_from_settings(_bench_settings(args))
    report = run_experiment(spec, out_dir=args.out, jobs=args.jobs)
    for name in spec.filters:
        print("%s: time-avg rmse %.6g, failures %d/%d" % (
            name, report.time_avg_rmse(name), report.failures[name], spec.trials))
    print(f"wrote report to {args.out}")
    if any(report.failures[n] > spec.trials / 2 for n in spec.filters):
        print("more than half the trials failed for some filter", file=sys.stderr)
        return 4
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmpf",
        description="Marginal particle filtering with a defensive Gaussian/bootstrap "
                    "mixture proposal, plus baseline filters and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_default):
        p.add_argument("--model", choices=("bernoulli", "lorenz63", "robot"),
                       help="benchmark system")
        p.add_argument("--seed", type=int, default=seed_default, help="base seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a parameter (model fields like dt, steps, L; "
                            "mixture settings like a0); repeatable")
        p.add_argument("--out", required=True, help="output directory")

    p_sim = sub.add_parser("simulate", help="sample a ground-truth trajectory")
    common(p_sim, seed_default=0)
    p_sim.set_defaults(func=_cmd_simulate)

    p_fil = sub.add_parser("filter", help="run one filter on one trajectory")
    common(p_fil, seed_default=0)
    p_fil.add_argument("--name", required=True, choices=("pf", "enkf", "dmpf"),
                       help="filter to run")
    p_fil.add_argument("-M", dest="n_particles", type=int, default=2000,
                       help="ensemble size (default 2000)")
    p_fil.add_argument("--traj", help="trajectory CSV to filter (default: simulate one)")
    p_fil.set_defaults(func=_cmd_filter)

    # bench flag defaults are None so that values from --config win unless
    # the flag is given explicitly
    p_ben = sub.add_parser("bench", help="run repeated trials and write a report")
    common(p_ben, seed_default=None)
    p_ben.add_argument("--config", help="config file path or packaged preset name "
                                        "(e.g. bernoulli_desk)")
    p_ben.add_argument("-M", dest="n_particles", type=int, default=None,
                       help="ensemble size for every filter")
    p_ben.add_argument("--trials", type=int, default=None, help="number of trials")
    p_ben.add_argument("--paper-scale", action="store_true",
                       help="full-size run: M=10000, reference 500000, 1000 trials")
    p_ben.add_argument("--jobs", type=int, default=1, help="parallel trial workers")
    p_ben.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("simulate", "filter") and not args.model:
        parser.error(f"{args.command} requires --model")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DmpfError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
