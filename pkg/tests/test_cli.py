"""End-to-end command pipeline: files in, artifacts plus manifest out."""

import csv
import hashlib
import json

import numpy as np
import pytest

from dynident import (
    FourierTrajectory,
    model_from_dict,
    read_log,
    read_parameters,
    save_model,
    save_trajectory,
)
from dynident.cli import main

from test_identification import two_link_dict


@pytest.fixture(scope="module")
def arm():
    return model_from_dict(two_link_dict())


@pytest.fixture(scope="module")
def arm_path(arm, tmp_path_factory):
    path = tmp_path_factory.mktemp("model") / "arm.model"
    save_model(arm, path)
    return path


@pytest.fixture(scope="module")
def traj_path(tmp_path_factory):
    amps = 0.15 * np.ones((2, 2))
    traj = FourierTrajectory(0.25, 2, np.array([0.1, -0.1]), amps,
                             0.5 * amps, duration=20.0, ramp_duration=2.0)
    path = tmp_path_factory.mktemp("traj") / "drive.traj"
    save_trajectory(traj, path)
    return path


@pytest.fixture(scope="module")
def test_traj_path(tmp_path_factory):
    amps = np.array([[0.2, 0.1], [0.05, 0.12]])
    traj = FourierTrajectory(0.2, 2, np.array([-0.05, 0.15]), amps,
                             0.3 * amps, duration=15.0, ramp_duration=2.0)
    path = tmp_path_factory.mktemp("traj2") / "probe.traj"
    save_trajectory(traj, path)
    return path


@pytest.fixture(scope="module")
def opt_out(arm_path, tmp_path_factory):
    """One real optimizer run; training data comes from its trajectory."""
    out = tmp_path_factory.mktemp("opt") / "run"
    code = main(["traj", "optimize", "--model", str(arm_path),
                 "--ff", "0.25", "--nh", "3", "--restarts", "2",
                 "--max-iter", "40", "--polish", "2", "--samples", "40",
                 "--seed", "1", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def sim_out(arm_path, opt_out, tmp_path_factory):
    out = tmp_path_factory.mktemp("loop") / "sim"
    assert main(["sim", "generate", "--model", str(arm_path),
                 "--traj", str(opt_out / "trajectory.traj"), "--rate", "100",
                 "--noise", "0", "--seed", "5", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def fit_out(arm_path, sim_out, tmp_path_factory):
    out = tmp_path_factory.mktemp("loop") / "fit"
    assert main(["identify", "--model", str(arm_path),
                 "--log", str(sim_out / "log.csv"), "--ramp", "2",
                 "--out", str(out)]) == 0
    return out


def read_metric_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return {row[0]: row[1] for row in list(csv.reader(fh))[1:]}


class TestModelCheck:
    def test_reports_counts(self, arm_path, capsys):
        assert main(["model", "check", "--model", str(arm_path)]) == 0
        text = capsys.readouterr().out
        assert "2 motors" in text and "26 parameters" in text

    def test_shipped_name_resolves(self, capsys):
        assert main(["model", "check", "--model", "mtm"]) == 0
        assert "7 motors" in capsys.readouterr().out

    def test_unknown_name_is_usage_error(self, capsys):
        assert main(["model", "check", "--model", "nosuch"]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_file_is_usage_error(self, capsys):
        assert main(["model", "check", "--model", "/nope/missing.model"]) == 2


class TestTrajExport:
    def test_samples_and_manifest(self, traj_path, tmp_path):
        out = tmp_path / "export"
        assert main(["traj", "export", "--traj", str(traj_path),
                     "--rate", "50", "--out", str(out)]) == 0
        with open(out / "trajectory_samples.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0][:4] == ["t", "q1", "q2", "dq1"]
        assert len(rows) - 1 == 1000  # 20 s at 50 Hz
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"] == ["trajectory_samples.csv"]
        digest = hashlib.sha256(traj_path.read_bytes()).hexdigest()
        assert manifest["inputs"]["trajectory"]["sha256"] == digest

    def test_reruns_are_byte_identical(self, traj_path, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["traj", "export", "--traj", str(traj_path),
                         "--rate", "50", "--out", str(out)]) == 0
            outs.append((out / "trajectory_samples.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_bad_rate_rejected(self, traj_path, tmp_path):
        assert main(["traj", "export", "--traj", str(traj_path),
                     "--rate", "0", "--out", str(tmp_path / "x")]) == 2


class TestSimGenerate:
    def test_writes_log_and_truth(self, arm, arm_path, traj_path, tmp_path):
        out = tmp_path / "sim"
        assert main(["sim", "generate", "--model", str(arm_path),
                     "--traj", str(traj_path), "--rate", "50",
                     "--noise", "0", "--seed", "3", "--out", str(out)]) == 0
        log = read_log(out / "log.csv")
        assert log.t.size == 1000 and log.motor_count == 2
        truth = read_parameters(arm, out / "truth.params")
        assert truth.values.shape == (26,)
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["inputs"]) == {"model", "trajectory"}

    def test_motor_count_mismatch_rejected(self, arm_path, tmp_path):
        bad = tmp_path / "bad.traj"
        amps = 0.1 * np.ones((1, 3))
        save_trajectory(FourierTrajectory(0.2, 1, np.zeros(3), amps, amps,
                                          duration=10.0), bad)
        assert main(["sim", "generate", "--model", str(arm_path),
                     "--traj", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_negative_noise_rejected(self, arm_path, traj_path, tmp_path):
        assert main(["sim", "generate", "--model", str(arm_path),
                     "--traj", str(traj_path), "--noise", "-0.1",
                     "--out", str(tmp_path / "o")]) == 2

    def test_noise_seed_changes_noise_not_truth(self, arm_path, traj_path,
                                                tmp_path):
        logs, truths = [], []
        for name, extra in (("n1", ["--noise-seed", "21"]),
                            ("n2", ["--noise-seed", "22"])):
            out = tmp_path / name
            assert main(["sim", "generate", "--model", str(arm_path),
                         "--traj", str(traj_path), "--rate", "50",
                         "--noise", "0.05", "--seed", "5",
                         "--out", str(out)] + extra) == 0
            logs.append(read_log(out / "log.csv"))
            truths.append((out / "truth.params").read_bytes())
        assert truths[0] == truths[1]
        assert np.any(logs[0].tau_m != logs[1].tau_m)
        np.testing.assert_array_equal(logs[0].q_m, logs[1].q_m)


class TestIdentifyValidate:
    def test_identify_outputs(self, fit_out):
        metrics = read_metric_csv(fit_out / "metrics.csv")
        assert float(metrics["overall"]) < 0.01  # percent, noiseless
        assert float(metrics["min_feasibility_margin"]) >= -1e-9
        assert (fit_out / "parameters.params").exists()

    def test_validate_on_independent_trajectory(self, arm_path, sim_out,
                                                fit_out, test_traj_path,
                                                tmp_path):
        probe = tmp_path / "probe"
        # same --seed keeps the ground truth; only the trajectory changes
        assert main(["sim", "generate", "--model", str(arm_path),
                     "--traj", str(test_traj_path), "--rate", "100",
                     "--noise", "0", "--seed", "5", "--out", str(probe)]) == 0
        out = tmp_path / "val"
        assert main(["validate", "--model", str(arm_path),
                     "--params", str(fit_out / "parameters.params"),
                     "--log", str(probe / "log.csv"), "--ramp", "2",
                     "--truth", str(sim_out / "truth.params"),
                     "--out", str(out)]) == 0
        errors = read_metric_csv(out / "errors.csv")
        assert float(errors["overall"]) < 0.05  # percent
        recovery = json.loads((out / "recovery.json").read_text())
        assert recovery["base_parameter_count"] == 14
        assert recovery["max_scaled_base_error"] < 1e-3
        with open(out / "prediction.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header == ["t", "measured1", "measured2",
                          "predicted1", "predicted2"]

    def test_ols_base_method(self, arm_path, sim_out, tmp_path):
        out = tmp_path / "ols"
        assert main(["identify", "--model", str(arm_path),
                     "--log", str(sim_out / "log.csv"), "--ramp", "2",
                     "--method", "ols-base", "--out", str(out)]) == 0
        metrics = read_metric_csv(out / "metrics.csv")
        # numeric differentiation of the logged velocity bounds the fit
        assert float(metrics["weighted_residual"]) < 1e-4
        assert metrics["base_parameter_count"] == "14"
        assert (out / "base_parameters.csv").exists()

    def test_ramp_swallowing_log_is_usage_error(self, arm_path, sim_out,
                                                tmp_path):
        assert main(["identify", "--model", str(arm_path),
                     "--log", str(sim_out / "log.csv"), "--ramp", "99",
                     "--out", str(tmp_path / "x")]) == 2

    def test_missing_params_is_usage_error(self, arm_path, sim_out, tmp_path):
        assert main(["validate", "--model", str(arm_path),
                     "--params", str(tmp_path / "none.params"),
                     "--log", str(sim_out / "log.csv"),
                     "--out", str(tmp_path / "x")]) == 2


class TestTrajOptimize:
    def test_small_run_writes_artifacts(self, arm_path, tmp_path, capsys):
        out = tmp_path / "opt"
        assert main(["traj", "optimize", "--model", str(arm_path),
                     "--ff", "0.25", "--nh", "2", "--restarts", "1",
                     "--max-iter", "3", "--polish", "0", "--samples", "30",
                     "--out", str(out)]) == 0
        assert "condition number" in capsys.readouterr().out
        assert (out / "trajectory.traj").exists()
        with open(out / "optimization_log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["restart", "iteration", "objective"]
        assert len(rows) > 1

    def test_flag_validation(self, arm_path, tmp_path):
        base = ["traj", "optimize", "--model", str(arm_path),
                "--out", str(tmp_path / "x")]
        assert main(base + ["--ff", "0.1", "--nh", "0"]) == 2
        assert main(base + ["--ff", "-0.1", "--nh", "2"]) == 2
        assert main(base + ["--ff", "0.1", "--nh", "2",
                            "--warm-start", str(tmp_path / "none.traj")]) == 2
