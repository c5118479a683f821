"""Command-line interface: argument handling, file outputs, exit codes."""

from __future__ import annotations

import json
import subprocess

import numpy as np
import pytest

from dmpf import bench
from dmpf.cli import _bench_settings, build_parser, main
from dmpf.errors import AllWeightsZero
from dmpf.models import Trajectory, save_trajectory_csv


def run_cli(*argv):
    return main(list(argv))


# --------------------------------------------------------------------------
# simulate


def test_simulate_row_count_and_meta(tmp_path):
    out = tmp_path / "sim"
    assert run_cli("simulate", "--model", "bernoulli", "--seed", "7",
                   "--out", str(out)) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 42  # header + one row per step including t = 0
    assert lines[0] == "t,u_1,y_1"
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["command"] == "simulate" and meta["seed"] == 7
    assert meta["model"]["name"] == "bernoulli"
    assert meta["n_steps"] == 41


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_cli("simulate", "--model", "robot", "--seed", "3", "--out", str(a))
    run_cli("simulate", "--model", "robot", "--seed", "3", "--out", str(b))
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_simulate_set_overrides(tmp_path):
    out = tmp_path / "sim"
    assert run_cli("simulate", "--model", "robot", "--seed", "1",
                   "--set", "steps=10", "--set", "L=0.2", "--out", str(out)) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 12
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["model"]["L"] == 0.2 and meta["model"]["steps"] == 10


def test_simulate_matches_bench_trajectory(tmp_path):
    out = tmp_path / "sim"
    run_cli("simulate", "--model", "bernoulli", "--seed", "5",
            "--set", "steps=6", "--out", str(out))
    spec = bench.ExperimentSpec(model="bernoulli", n_particles=60, n_ref=600,
                                seed=5, model_overrides={"steps": 6})
    pinned = bench.pinned_trajectory(spec)
    got = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(got[:, 1], pinned.states[:, 0])
    np.testing.assert_array_equal(got[:, 2], pinned.observations[:, 0])


def test_simulate_rejects_unknown_parameter(tmp_path, capsys):
    code = run_cli("simulate", "--model", "bernoulli",
                   "--set", "warp=9", "--out", str(tmp_path / "x"))
    assert code == 2
    assert "config error" in capsys.readouterr().err


# --------------------------------------------------------------------------
# filter


def test_filter_dmpf_outputs(tmp_path):
    out = tmp_path / "run"
    code = run_cli("filter", "--model", "bernoulli", "--name", "dmpf",
                   "--seed", "2", "-M", "200", "--set", "steps=8",
                   "--out", str(out))
    assert code == 0
    lines = (out / "filter_run.csv").read_text().splitlines()
    assert lines[0] == "t,mean_1,var_1,ess,a"
    assert len(lines) == 10
    a_col = np.array([float(r.split(",")[-1]) for r in lines[1:]])
    assert np.all((a_col >= 0.0) & (a_col <= 1.0))
    diag = json.loads((out / "diagnostics.json").read_text())
    assert len(diag["steps"]) == 9
    assert all("a" in step and "ess" in step for step in diag["steps"])
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["dmpf"]["a0"] == 0.5 and meta["M"] == 200


def test_filter_pf_has_no_mix_column(tmp_path):
    out = tmp_path / "run"
    assert run_cli("filter", "--model", "bernoulli", "--name", "pf",
                   "--seed", "2", "-M", "100", "--set", "steps=5",
                   "--out", str(out)) == 0
    header = (out / "filter_run.csv").read_text().splitlines()[0]
    assert header == "t,mean_1,var_1,ess"
    assert not (out / "diagnostics.json").exists()


def test_filter_enkf_variances_positive(tmp_path):
    out = tmp_path / "run"
    assert run_cli("filter", "--model", "lorenz63", "--name", "enkf",
                   "--seed", "4", "-M", "150", "--set", "steps=6",
                   "--out", str(out)) == 0
    data = np.loadtxt(out / "filter_run.csv", delimiter=",", skiprows=1)
    assert data.shape == (7, 8)  # t, 3 means, 3 vars, ess
    assert np.all(data[:, 4:7] > 0)


def test_filter_deterministic(tmp_path):
    argv = ["filter", "--model", "robot", "--name", "dmpf", "--seed", "6",
            "-M", "120", "--set", "steps=5"]
    run_cli(*argv, "--out", str(tmp_path / "a"))
    run_cli(*argv, "--out", str(tmp_path / "b"))
    assert ((tmp_path / "a" / "filter_run.csv").read_bytes()
            == (tmp_path / "b" / "filter_run.csv").read_bytes())


def test_filter_external_trajectory(tmp_path):
    sim = tmp_path / "sim"
    run_cli("simulate", "--model", "robot", "--seed", "9",
            "--set", "steps=6", "--out", str(sim))
    out = tmp_path / "run"
    code = run_cli("filter", "--model", "robot", "--name", "pf", "-M", "80",
                   "--set", "steps=6", "--traj", str(sim / "trajectory.csv"),
                   "--out", str(out))
    assert code == 0
    # the trajectory came from outside, so it is not re-written
    assert not (out / "trajectory.csv").exists()


def test_filter_trajectory_dimension_mismatch(tmp_path, capsys):
    sim = tmp_path / "sim"
    run_cli("simulate", "--model", "bernoulli", "--seed", "1",
            "--set", "steps=4", "--out", str(sim))
    code = run_cli("filter", "--model", "lorenz63", "--name", "pf",
                   "--traj", str(sim / "trajectory.csv"),
                   "--out", str(tmp_path / "run"))
    assert code == 2
    assert "config error" in capsys.readouterr().err


def test_filter_missing_trajectory_file(tmp_path, capsys):
    code = run_cli("filter", "--model", "robot", "--name", "pf",
                   "--traj", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "run"))
    assert code == 2


def test_filter_divergence_flushes_partial_output(tmp_path, capsys):
    # hand-built trajectory for an explosive variant: the filter dies
    # mid-run and must still write the completed steps
    n = 13
    traj = Trajectory(states=np.zeros((n, 3)), observations=np.zeros((n, 3)))
    path = tmp_path / "weird.csv"
    save_trajectory_csv(traj, path)
    out = tmp_path / "run"
    code = run_cli("filter", "--model", "lorenz63", "--name", "pf",
                   "-M", "60", "--set", "dt=5.0", "--set", "steps=12",
                   "--traj", str(path), "--out", str(out))
    assert code == 3
    err = capsys.readouterr().err
    assert "numerical failure" in err and "partial output" in err
    rows = (out / "filter_run.csv").read_text().splitlines()
    assert 2 <= len(rows) < n + 1
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["completed_steps"] == len(rows) - 1
    assert "failed at step" in meta["error"]


def test_filter_bad_mixture_setting(tmp_path, capsys):
    code = run_cli("filter", "--model", "bernoulli", "--name", "dmpf",
                   "--set", "a0=1.5", "--out", str(tmp_path / "run"))
    assert code == 2


# --------------------------------------------------------------------------
# bench


def test_bench_end_to_end(tmp_path, capsys):
    out = tmp_path / "report"
    code = run_cli("bench", "--model", "bernoulli", "-M", "50", "--trials", "2",
                   "--seed", "3", "--set", "steps=5", "--set", "n_ref=500",
                   "--out", str(out))
    assert code == 0
    stdout = capsys.readouterr().out
    assert "time-avg rmse" in stdout and "dmpf" in stdout
    for fname in ("table.csv", "rmse_mean.csv", "trials.csv", "run_meta.json"):
        assert (out / fname).exists()
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["n_particles"] == 50 and meta["trials"] == 2


def test_bench_packaged_preset(tmp_path):
    # preset values load; explicit flags cut the run down to test size
    out = tmp_path / "report"
    code = run_cli("bench", "--config", "bernoulli_desk", "-M", "40",
                   "--trials", "1", "--set", "n_ref=400", "--set", "steps=4",
                   "--set", "filters=pf", "--out", str(out))
    assert code == 0
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["seed"] == 2024  # from the preset
    assert meta["n_particles"] == 40  # flag beats preset


def test_bench_settings_precedence():
    parser = build_parser()

    def settings(*argv):
        return _bench_settings(parser.parse_args(["bench", "--out", "x", *argv]))

    base = settings("--config", "bernoulli_desk")
    assert base["n_particles"] == "2000" and base["trials"] == "20"

    paper = settings("--config", "bernoulli_desk", "--paper-scale")
    assert paper["n_particles"] == "10000"
    assert paper["n_ref"] == "500000"
    assert paper["trials"] == "1000"

    flag = settings("--config", "bernoulli_desk", "--paper-scale", "-M", "3000")
    assert flag["n_particles"] == "3000"

    explicit = settings("--config", "bernoulli_desk", "--paper-scale",
                        "-M", "3000", "--set", "n_particles=123")
    assert explicit["n_particles"] == "123"


def test_bench_requires_model(tmp_path, capsys):
    assert run_cli("bench", "--out", str(tmp_path / "x")) == 2
    assert run_cli("bench", "--config", "no_such_preset",
                   "--out", str(tmp_path / "y")) == 2


def test_bench_mostly_failing_filter_exits_4(tmp_path, monkeypatch, capsys):
    real = bench.run_filter

    def flaky(name, *args, **kwargs):
        if name == "pf":
            raise AllWeightsZero("forced")
        return real(name, *args, **kwargs)

    monkeypatch.setattr(bench, "run_filter", flaky)
    code = run_cli("bench", "--model", "bernoulli", "-M", "40", "--trials", "2",
                   "--set", "steps=4", "--set", "n_ref=400",
                   "--out", str(tmp_path / "report"))
    assert code == 4
    assert "more than half" in capsys.readouterr().err


# --------------------------------------------------------------------------
# process-level checks


def test_console_script_runs(tmp_path):
    result = subprocess.run(
        ["dmpf", "simulate", "--model", "bernoulli", "--seed", "7",
         "--out", str(tmp_path / "s")],
        capture_output=True, text=True)
    assert result.returncode == 0
    assert "wrote 41 steps" in result.stdout


def test_unknown_model_rejected_by_parser():
    with pytest.raises(SystemExit):
        run_cli("simulate", "--model", "heat_equation", "--out", "x")
