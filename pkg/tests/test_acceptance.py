"""Top-level acceptance checks for the identification toolkit.

Each test prints exactly one PASS/FAIL line (visible with ``-rA``), pins its
tolerances as constants next to the check, and fails loudly rather than
loosening a bound.  Together they cover: the energy-route torque oracle, base
parameter reduction, noiseless and noisy closed loops over the command-line
pipeline, excitation optimization gain, the measurement pipeline, coupling
and cable fixtures, and projection of unphysical ground truth.
"""

import json
import time

import numpy as np
import pytest

from dynident import (
    OptimizationConfig,
    ParameterVector,
    barycentric_block,
    base_reduction,
    butterworth_zero_phase,
    condition_objective,
    differentiate,
    eval_trajectory,
    feasibility_margins,
    fit_cable_polynomial,
    lagrangian_oracle,
    load_shipped_model,
    load_trajectory,
    model_from_dict,
    optimize_trajectory,
    parameter_layout,
    process_log,
    random_feasible_trajectory,
    recover_standard,
    sample_feasible_parameters,
    sample_states,
    save_trajectory,
    shipped_model_path,
    simulate_log,
    solve_feasible,
    solve_ols_base,
    stack_problem,
)
from dynident.cli import main
from dynident.regressor import regressor_batch, stack_regressor
from dynident.signals import JointLog

from test_identification import two_link_dict


def report(label: str, ok: bool, detail: str) -> None:
    print(f"[acceptance] {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{label}: {detail}"


def shipped_trajectory_path(name: str) -> str:
    return str(shipped_model_path(name)).replace(".model", ".traj")


@pytest.fixture(scope="module")
def models():
    return {name: load_shipped_model(name) for name in ("mtm", "psm")}


def test_oracle_torque_equivalence(models):
    """Column-built torques match the independent energy-route oracle."""
    TOL = 1e-6
    STATES, TRUTHS, BUDGET_S = 100, 10, 120.0
    t0 = time.time()
    worst = 0.0
    for name, model in models.items():
        q, dq, ddq = sample_states(model, STATES, np.random.default_rng(2718))
        H = regressor_batch(model, q, dq, ddq)
        for seed in range(TRUTHS):
            delta = sample_feasible_parameters(model, seed).delta_star
            direct = H @ delta.values
            oracle = lagrangian_oracle(model, delta, q, dq, ddq)
            scale = max(1.0, float(np.max(np.abs(direct))))
            worst = max(worst, float(np.max(np.abs(direct - oracle))) / scale)
    elapsed = time.time() - t0
    report("oracle equivalence", worst <= TOL and elapsed <= BUDGET_S,
           f"worst rel err {worst:.2e} <= {TOL:g}, {elapsed:.0f}s "
           f"<= {BUDGET_S:g}s; {STATES} states x {TRUTHS} truths x 2 models")


def test_base_reduction_equivalence_and_rank(models):
    """Base projection predicts held-out torques; size equals the SVD rank."""
    TOL_REL = 1e-8
    SVD_RTOL = 1e-10
    all_models = dict(models)
    all_models["planar-2r"] = model_from_dict(two_link_dict())
    details = []
    ok = True
    for name, model in all_models.items():
        P = parameter_layout(model).size
        red = base_reduction(model, 2 * P + 60, 0)
        q, dq, ddq = sample_states(model, 100, np.random.default_rng(1234))
        W = stack_regressor(model, q, dq, ddq)
        Wb = red.base_regressor(W)
        rng = np.random.default_rng(5)
        rel = 0.0
        for _ in range(5):
            delta = rng.standard_normal(P)
            full = W @ delta
            via_base = Wb @ red.base_parameters(delta)
            rel = max(rel, float(np.linalg.norm(full - via_base)
                                 / np.linalg.norm(full)))
        q10, dq10, ddq10 = sample_states(model, 10 * P,
                                         np.random.default_rng(77))
        s = np.linalg.svd(stack_regressor(model, q10, dq10, ddq10),
                          compute_uv=False)
        rank = int(np.sum(s > SVD_RTOL * s[0]))
        ok = ok and rel <= TOL_REL and rank == red.base_size
        details.append(f"{name} rel {rel:.1e} base {red.base_size}=rank {rank}")
    report("base reduction", ok, "; ".join(details) + f"; tol {TOL_REL:g}")


def test_noiseless_closed_loop(models, tmp_path):
    """Simulate, identify, and validate each arm without noise via the CLI."""
    TOL_PCT = 0.1
    MARGIN_FLOOR = -1e-9
    BUDGET_S = 600.0
    t0 = time.time()
    details = []
    ok = True
    for name, ff in (("mtm", 0.1), ("psm", 0.18)):
        probe = random_feasible_trajectory(models[name],
                                           OptimizationConfig(ff, 6),
                                           np.random.default_rng(77))
        save_trajectory(probe, tmp_path / f"{name}_probe.traj")
        sim, fit = tmp_path / f"{name}_sim", tmp_path / f"{name}_fit"
        psim, val = tmp_path / f"{name}_psim", tmp_path / f"{name}_val"
        assert main(["sim", "generate", "--model", name,
                     "--traj", shipped_trajectory_path(name),
                     "--rate", "200", "--noise", "0", "--seed", "1",
                     "--out", str(sim)]) == 0
        assert main(["identify", "--model", name,
                     "--log", str(sim / "log.csv"), "--ramp", "5",
                     "--out", str(fit)]) == 0
        assert main(["sim", "generate", "--model", name,
                     "--traj", str(tmp_path / f"{name}_probe.traj"),
                     "--rate", "200", "--noise", "0", "--seed", "1",
                     "--out", str(psim)]) == 0
        assert main(["validate", "--model", name,
                     "--params", str(fit / "parameters.params"),
                     "--log", str(psim / "log.csv"), "--ramp", "5",
                     "--truth", str(sim / "truth.params"),
                     "--out", str(val)]) == 0
        errors = dict(line.split(",") for line in
                      (val / "errors.csv").read_text().strip().split("\n")[1:])
        metrics = dict(line.split(",") for line in
                       (fit / "metrics.csv").read_text().strip().split("\n")[1:])
        overall = float(errors["overall"])
        margin = float(metrics["min_feasibility_margin"])
        ok = ok and overall <= TOL_PCT and margin >= MARGIN_FLOOR
        details.append(f"{name} {overall:.4f}% margin {margin:.1e}")
    elapsed = time.time() - t0
    ok = ok and elapsed <= BUDGET_S
    report("noiseless closed loop", ok,
           "; ".join(details) + f"; tol {TOL_PCT}% floor {MARGIN_FLOOR:g}, "
           f"{elapsed:.0f}s <= {BUDGET_S:g}s")


def test_noisy_closed_loop(tmp_path):
    """2%-of-range torque noise still identifies the master arm usably."""
    NOISE = 0.02
    CUTOFF_HZ = 10.0
    TOL_FIRST3_PCT = 5.0
    TOL_OVERALL_PCT = 10.0
    mtm = load_shipped_model("mtm")
    probe = random_feasible_trajectory(mtm, OptimizationConfig(0.1, 6),
                                       np.random.default_rng(99))
    save_trajectory(probe, tmp_path / "probe.traj")
    sim, psim = tmp_path / "sim", tmp_path / "psim"
    fit, val = tmp_path / "fit", tmp_path / "val"
    assert main(["sim", "generate", "--model", "mtm",
                 "--traj", shipped_trajectory_path("mtm"), "--rate", "200",
                 "--noise", str(NOISE), "--seed", "1", "--noise-seed", "11",
                 "--out", str(sim)]) == 0
    assert main(["sim", "generate", "--model", "mtm",
                 "--traj", str(tmp_path / "probe.traj"), "--rate", "200",
                 "--noise", str(NOISE), "--seed", "1", "--noise-seed", "12",
                 "--out", str(psim)]) == 0
    assert main(["identify", "--model", "mtm", "--log", str(sim / "log.csv"),
                 "--ramp", "5", "--cutoff", str(CUTOFF_HZ),
                 "--out", str(fit)]) == 0
    assert main(["validate", "--model", "mtm",
                 "--params", str(fit / "parameters.params"),
                 "--log", str(psim / "log.csv"), "--ramp", "5",
                 "--cutoff", str(CUTOFF_HZ), "--out", str(val)]) == 0
    errors = dict(line.split(",") for line in
                  (val / "errors.csv").read_text().strip().split("\n")[1:])
    first3 = [float(errors[f"motor_{m}"]) for m in (1, 2, 3)]
    overall = float(errors["overall"])
    ok = max(first3) <= TOL_FIRST3_PCT and overall <= TOL_OVERALL_PCT
    report("noisy closed loop", ok,
           f"motors 1-3 {[f'{v:.2f}' for v in first3]}% <= {TOL_FIRST3_PCT}%, "
           f"overall {overall:.2f}% <= {TOL_OVERALL_PCT}%; "
           f"noise {NOISE:g} of range, cutoff {CUTOFF_HZ:g} Hz")


def test_excitation_optimization_gain():
    """The optimizer lands far below random feasible conditioning."""
    COND_CAP = 1000.0
    GAIN_FLOOR = 5.0
    RANDOM_DRAWS = 100
    mtm = load_shipped_model("mtm")
    red = base_reduction(mtm, 2 * parameter_layout(mtm).size + 60, 0)
    warm = load_trajectory(shipped_trajectory_path("mtm"))
    config = OptimizationConfig(0.1, 6, sample_count=60, restarts=1,
                                max_iter=5, polish_iter=0, seed=0)
    result = optimize_trajectory(mtm, red, config, warm_start=warm)
    rng = np.random.default_rng(2024)
    baseline = np.median([
        condition_objective(
            mtm, red,
            random_feasible_trajectory(mtm, OptimizationConfig(0.1, 6), rng),
            60)
        for _ in range(RANDOM_DRAWS)])
    gain = baseline / result.objective
    ok = (result.objective <= COND_CAP and result.report.ok
          and gain >= GAIN_FLOOR)
    report("excitation optimization", ok,
           f"cond {result.objective:.1f} <= {COND_CAP:g} feasible, "
           f"median of {RANDOM_DRAWS} random {baseline:.0f}, "
           f"gain {gain:.1f}x >= {GAIN_FLOOR:g}x")


def test_signal_pipeline_fidelity():
    """Filtering keeps passband tones; differentiation meets its orders."""
    AMP_TOL = 0.005
    PHASE_TOL_RAD = 1e-3
    QUAD_TOL = 1e-10
    ACCEL_RMS_TOL = 0.01
    fs, tone_hz = 200.0, 1.0
    t = np.arange(4000) / fs
    tone = np.sin(2 * np.pi * tone_hz * t)
    out = butterworth_zero_phase(tone, fs, cutoff=10.0)
    mid = slice(800, 3200)
    basis = np.stack([np.sin(2 * np.pi * tone_hz * t[mid]),
                      np.cos(2 * np.pi * tone_hz * t[mid])], axis=1)
    a, b = np.linalg.lstsq(basis, out[mid], rcond=None)[0]
    amp_err = abs(np.hypot(a, b) - 1.0)
    phase_err = abs(np.arctan2(b, a))

    tq = np.arange(500) / fs
    quad = 3.0 * tq ** 2 - 2.0 * tq + 1.0
    quad_err = float(np.max(np.abs(differentiate(quad, fs) - (6.0 * tq - 2.0))))

    hz = 0.5
    tt = np.arange(int(20 * fs)) / fs
    q = np.sin(2 * np.pi * hz * tt)[:, None]
    dq = 2 * np.pi * hz * np.cos(2 * np.pi * hz * tt)[:, None]
    log = JointLog(t=tt, q_m=q, dq_m=dq, tau_m=np.zeros_like(q))
    proc = process_log(log, cutoff=10.0, ramp_duration=4.0)
    want = -((2 * np.pi * hz) ** 2) * np.sin(2 * np.pi * hz * proc.t)
    band = slice(200, -200)
    accel_rms = float(np.sqrt(np.mean((proc.ddq_m[band, 0] - want[band]) ** 2))
                      / np.sqrt(np.mean(want[band] ** 2)))

    ok = (amp_err <= AMP_TOL and phase_err <= PHASE_TOL_RAD
          and quad_err <= QUAD_TOL and accel_rms <= ACCEL_RMS_TOL)
    report("signal pipeline", ok,
           f"amp err {amp_err:.1e} <= {AMP_TOL}, phase {phase_err:.1e} rad "
           f"<= {PHASE_TOL_RAD}, quadratic {quad_err:.1e} <= {QUAD_TOL}, "
           f"accel rms {accel_rms:.2%} <= {ACCEL_RMS_TOL:.0%}")


def test_coupling_and_cable_fixtures(models):
    """Coupling maps round trip and cable fits cancel symmetric friction."""
    ROUND_TRIP_TOL = 1e-12
    CABLE_TOL = 1e-9
    ok = True
    details = []
    for name, model in models.items():
        idx = list(model.coupling.basis_indices)
        R = model.E[idx]
        off = model.e0[idx]
        print(f"{name} coupling rows (motor -> joint):")
        print(np.array2string(model.E, precision=5, suppress_small=True))
        rng = np.random.default_rng(8)
        x = rng.standard_normal(model.motor_count)
        pos_err = float(np.max(np.abs(np.linalg.solve(R, R @ x + off - off) - x)))
        v = rng.standard_normal(model.motor_count)
        tau_err = float(np.max(np.abs(np.linalg.solve(R.T, R.T @ v) - v)))
        ok = ok and pos_err <= ROUND_TRIP_TOL and tau_err <= ROUND_TRIP_TOL
        details.append(f"{name} pos {pos_err:.1e} tau {tau_err:.1e}")

    rng = np.random.default_rng(9)
    mass = 2.2
    com = np.array([0.04, -0.03, 0.11])
    A = rng.standard_normal((3, 3))
    inertia = A @ A.T * 1e-2 + 1e-3 * np.eye(3)
    arm = model_from_dict(two_link_dict())
    delta = ParameterVector.zeros(parameter_layout(arm))
    delta.set_link_block("1", barycentric_block(mass, com, inertia))
    link = recover_standard(delta)["1"]
    axis_err = max(abs(link.mass - mass),
                   float(np.max(np.abs(link.com - com))),
                   float(np.max(np.abs(link.inertia_com - inertia))))
    ok = ok and axis_err <= ROUND_TRIP_TOL

    coeffs = rng.normal(0.0, 0.5, 8)
    qgrid = np.linspace(-1.2, 1.2, 60)
    cable = np.polynomial.polynomial.polyval(qgrid, coeffs)
    friction = 0.4 + 0.15 * np.cos(qgrid)
    fit = fit_cable_polynomial(qgrid, cable + friction, cable - friction,
                               joint="2", degree=7)
    cable_err = float(np.max(np.abs(np.array(fit.coefficients) - coeffs)))
    ok = ok and cable_err <= CABLE_TOL
    report("coupling and cable fixtures", ok,
           "; ".join(details) + f"; parallel-axis {axis_err:.1e} <= "
           f"{ROUND_TRIP_TOL:g}, cable {cable_err:.1e} <= {CABLE_TOL:g}")


def test_unphysical_truth_is_projected(models):
    """Data from impossible parameters still yields a feasible estimate."""
    MARGIN_FLOOR = -1e-9
    RESIDUAL_SLACK = 1e-9
    mtm = models["mtm"]
    red = base_reduction(mtm, 2 * parameter_layout(mtm).size + 60, 0)
    truth = sample_feasible_parameters(mtm, seed=3).delta_star
    bad = ParameterVector(truth.layout, truth.values.copy())
    block = bad.link_block("2").copy()
    block[0] = -0.05  # a negative second moment no rigid body can have
    bad.set_link_block("2", block)
    bad.set("3", "Fv", -0.2)
    assert min(feasibility_margins(mtm, bad).values()) < 0
    traj = load_trajectory(shipped_trajectory_path("mtm"))
    log = simulate_log(mtm, sample_feasible_parameters(mtm, 3), traj, fs=200.0)
    ddq = eval_trajectory(traj, log.t)[2]
    log = JointLog(t=log.t, q_m=log.q_m, dq_m=log.dq_m,
                   tau_m=regressor_batch(mtm, log.q_m, log.dq_m, ddq)
                   @ bad.values)
    proc = process_log(log, cutoff=None, ramp_duration=5.0)
    problem = stack_problem(mtm, proc)
    sol = solve_feasible(problem, mtm)
    _, ols_resid = solve_ols_base(problem, red)
    ok = (sol.min_margin >= MARGIN_FLOOR
          and sol.residual + RESIDUAL_SLACK >= ols_resid
          and sol.residual > ols_resid)
    report("unphysical truth projection", ok,
           f"min margin {sol.min_margin:.1e} >= {MARGIN_FLOOR:g}, residual "
           f"{sol.residual:.3e} >= unconstrained {ols_resid:.3e}")
