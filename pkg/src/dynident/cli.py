"""Command-line pipeline: optimize, simulate, process, identify, validate.

Thin orchestration over the library modules.  Every command takes ``--out``
and drops a ``manifest.json`` beside its artifacts recording the resolved
options, tool version, and content hashes of all inputs, so any run can be
reproduced byte for byte.  Exit codes: 0 success, 1 numeric or solver
failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, shipped_model_path
from .excitation import (
    OptimizationConfig,
    TrajectoryError,
    condition_objective,
    eval_trajectory,
    load_trajectory,
    optimize_trajectory,
    save_trajectory,
)
from .identification import (
    IdentifiedParameters,
    SolverFailure,
    feasibility_margins,
    read_parameters,
    relative_prediction_error,
    solve_feasible,
    solve_ols_base,
    stack_problem,
    write_parameters,
)
from .model import ModelError, RobotModel, load_model
from .regressor import base_reduction, parameter_layout
from .signals import process_log, read_log, write_log
from .synthbench import GroundTruth, sample_feasible_parameters, simulate_log

__all__ = ["main"]


class UsageError(ValueError):
    """Bad flag values or malformed inputs; maps to exit code 2."""


def _resolve_model(spec: str) -> tuple[RobotModel, Path]:
    path = Path(spec)
    if not path.exists() and os.sep not in spec and "." not in spec:
        try:
            path = shipped_model_path(spec)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if not path.exists():
        raise UsageError(f"model file not found: {spec}")
    return load_model(path), path


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out: Path, command: str, args: argparse.Namespace,
                    inputs: dict[str, Path], outputs: list[str]) -> None:
    options = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func",) and not callable(v)
    }
    manifest = {
        "command": command,
        "tool_version": __version__,
        "options": {k: (str(v) if isinstance(v, Path) else v) for k, v in options.items()},
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)}
                   for name, p in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _threads(args: argparse.Namespace) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("DYNIDENT_THREADS")
    return int(env) if env else 1


def _canonical_reduction(model: RobotModel, drop_excluded: bool = False):
    # fixed seed: the identifiable column set must not drift between runs
    P = parameter_layout(model).size
    return base_reduction(model, 2 * P + 60, seed=0, drop_excluded=drop_excluded)


# -- subcommands ---------------------------------------------------------------


def cmd_model_check(args: argparse.Namespace) -> int:
    model, path = _resolve_model(args.model)
    layout = parameter_layout(model)
    red = _canonical_reduction(model)
    print(f"model {model.name}: {model.motor_count} motors, "
          f"{len(model.joints)} joints, {layout.size} parameters, "
          f"{red.base_size} identifiable")
    for joint in model.joints:
        flags = [w for w, on in (
            ("inertia", joint.link_inertia), ("friction", joint.friction),
            ("motor", joint.motor_inertia), ("spring", joint.spring)) if on]
        print(f"  {joint.name}: {', '.join(flags) if flags else 'passive'}")
    if args.out:
        out = _out_dir(args)
        _write_manifest(out, "model check", args, {"model": path}, [])
    return 0


def cmd_traj_optimize(args: argparse.Namespace) -> int:
    if args.nh < 1:
        raise UsageError("--nh must be a positive harmonic count")
    if args.ff <= 0:
        raise UsageError("--ff must be a positive frequency in Hz")
    model, mpath = _resolve_model(args.model)
    red = _canonical_reduction(model, drop_excluded=args.drop_excluded)
    config = OptimizationConfig(
        fundamental_hz=args.ff,
        harmonics=args.nh,
        duration=args.duration,
        ramp_duration=args.ramp,
        sample_count=args.samples,
        restarts=args.restarts,
        max_iter=args.max_iter,
        polish_iter=args.polish,
        seed=args.seed,
        threads=_threads(args),
    )
    warm = None
    if args.warm_start:
        wpath = Path(args.warm_start)
        if not wpath.exists():
            raise UsageError(f"warm-start file not found: {args.warm_start}")
        warm = load_trajectory(wpath)
        if warm.harmonics != args.nh or warm.motor_count != model.motor_count:
            raise UsageError(
                "warm-start trajectory does not match --nh or the model")
    result = optimize_trajectory(model, red, config, warm_start=warm)
    out = _out_dir(args)
    save_trajectory(result.trajectory, out / "trajectory.traj")
    _write_csv(out / "optimization_log.csv",
               ["restart", "iteration", "objective"],
               [(r, i, repr(obj)) for r, i, obj, _ in result.log])
    _write_manifest(out, "traj optimize", args, {"model": mpath},
                    ["trajectory.traj", "optimization_log.csv"])
    print(f"condition number {result.objective:.1f} "
          f"(feasible, min margin {result.report.min_margin:.2e})")
    return 0


def cmd_traj_export(args: argparse.Namespace) -> int:
    if args.rate <= 0:
        raise UsageError("--rate must be positive")
    tpath = Path(args.traj)
    if not tpath.exists():
        raise UsageError(f"trajectory file not found: {args.traj}")
    traj = load_trajectory(tpath)
    span = args.duration if args.duration else traj.duration
    count = int(round(span * args.rate))
    t = np.arange(count) / args.rate
    q, dq, ddq = eval_trajectory(traj, t)
    n = q.shape[1]
    header = (["t"] + [f"q{i + 1}" for i in range(n)]
              + [f"dq{i + 1}" for i in range(n)]
              + [f"ddq{i + 1}" for i in range(n)])
    rows = ([repr(float(ti))] + [repr(float(x)) for x in row]
            for ti, row in zip(t, np.hstack([q, dq, ddq])))
    out = _out_dir(args)
    _write_csv(out / "trajectory_samples.csv", header, rows)
    _write_manifest(out, "traj export", args, {"trajectory": tpath},
                    ["trajectory_samples.csv"])
    print(f"exported {count} samples at {args.rate} Hz")
    return 0


def cmd_sim_generate(args: argparse.Namespace) -> int:
    if args.noise < 0:
        raise UsageError("--noise must be nonnegative")
    if args.rate <= 0:
        raise UsageError("--rate must be positive")
    model, mpath = _resolve_model(args.model)
    tpath = Path(args.traj)
    if not tpath.exists():
        raise UsageError(f"trajectory file not found: {args.traj}")
    traj = load_trajectory(tpath)
    if traj.motor_count != model.motor_count:
        raise UsageError(
            f"trajectory drives {traj.motor_count} motors, "
            f"model {model.name} has {model.motor_count}")
    truth = sample_feasible_parameters(model, args.seed, args.noise)
    if args.noise_seed is not None:
        # same --seed, fresh noise: lets one ground truth drive both the
        # training log and an independently corrupted test log
        truth = GroundTruth(truth.delta_star, args.noise_seed, args.noise)
    log = simulate_log(model, truth, traj, fs=args.rate, duration=args.duration)
    out = _out_dir(args)
    write_log(log, out / "log.csv")
    margins = feasibility_margins(model, truth.delta_star)
    write_parameters(
        IdentifiedParameters(delta=truth.delta_star, standard={},
                             residual=0.0, margins=margins,
                             solver="synthetic-truth"),
        out / "truth.params")
    _write_manifest(out, "sim generate", args,
                    {"model": mpath, "trajectory": tpath},
                    ["log.csv", "truth.params"])
    print(f"wrote {log.t.size} samples at {args.rate} Hz "
          f"(noise {args.noise:g} of range, seed {args.seed})")
    return 0


def cmd_identify(args: argparse.Namespace) -> int:
    model, mpath = _resolve_model(args.model)
    lpath = Path(args.log)
    if not lpath.exists():
        raise UsageError(f"log file not found: {args.log}")
    raw = read_log(lpath)
    try:
        processed = process_log(raw, cutoff=args.cutoff, order=args.order,
                                ramp_duration=args.ramp)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    problem = stack_problem(model, processed)
    out = _out_dir(args)
    outputs = ["parameters.params", "metrics.csv"]
    if args.method == "ols-base":
        red = _canonical_reduction(model)
        est, residual = solve_ols_base(problem, red)
        rows = [(label, repr(float(v)))
                for label, v in zip(red.describe(parameter_layout(model)), est)]
        _write_csv(out / "base_parameters.csv", ["parameter", "value"], rows)
        _write_csv(out / "metrics.csv", ["metric", "value"],
                   [("weighted_residual", repr(float(residual))),
                    ("base_parameter_count", red.base_size)])
        _write_manifest(out, "identify", args,
                        {"model": mpath, "log": lpath},
                        ["base_parameters.csv", "metrics.csv"])
        print(f"base solve: {red.base_size} parameters, residual {residual:.6g}")
        return 0
    result = solve_feasible(problem, model)
    write_parameters(result, out / "parameters.params")
    per_joint, overall = relative_prediction_error(model, result.delta, processed)
    rows = [(f"motor_{m}", repr(float(v))) for m, v in sorted(per_joint.items())]
    rows.append(("overall", repr(float(overall))))
    rows.append(("weighted_residual", repr(float(result.residual))))
    rows.append(("min_feasibility_margin", repr(float(result.min_margin))))
    _write_csv(out / "metrics.csv", ["metric", "value"], rows)
    _write_manifest(out, "identify", args, {"model": mpath, "log": lpath},
                    outputs)
    print(f"feasible solve via {result.solver}: training error {overall:.3f}%, "
          f"min margin {result.min_margin:.2e}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    model, mpath = _resolve_model(args.model)
    ppath = Path(args.params)
    lpath = Path(args.log)
    if not ppath.exists():
        raise UsageError(f"parameter file not found: {args.params}")
    if not lpath.exists():
        raise UsageError(f"test log not found: {args.log}")
    fitted = read_parameters(model, ppath)
    raw = read_log(lpath)
    try:
        processed = process_log(raw, cutoff=args.cutoff, order=args.order,
                                ramp_duration=args.ramp)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    per_joint, overall = relative_prediction_error(model, fitted, processed)
    from .regressor import cable_torque, regressor_batch

    H = regressor_batch(model, processed.q_m, processed.dq_m, processed.ddq_m)
    predicted = H @ fitted.values + cable_torque(model, processed.q_m)
    out = _out_dir(args)
    rows = [(f"motor_{m}", repr(float(v))) for m, v in sorted(per_joint.items())]
    rows.append(("overall", repr(float(overall))))
    _write_csv(out / "errors.csv", ["channel", "relative_error_percent"], rows)
    n = model.motor_count
    header = (["t"] + [f"measured{i + 1}" for i in range(n)]
              + [f"predicted{i + 1}" for i in range(n)])
    series = ([repr(float(ti))] + [repr(float(x)) for x in row]
              for ti, row in zip(processed.t,
                                 np.hstack([processed.tau_m, predicted])))
    _write_csv(out / "prediction.csv", header, series)
    inputs = {"model": mpath, "parameters": ppath, "log": lpath}
    outputs = ["errors.csv", "prediction.csv"]
    if args.truth:
        tpath = Path(args.truth)
        if not tpath.exists():
            raise UsageError(f"truth file not found: {args.truth}")
        truth = read_parameters(model, tpath)
        red = _canonical_reduction(model)
        base_hat = red.base_parameters(fitted.values)
        base_star = red.base_parameters(truth.values)
        scale = max(1.0, float(np.max(np.abs(base_star))))
        recovery = {
            "base_parameter_count": red.base_size,
            "max_abs_base_error": float(np.max(np.abs(base_hat - base_star))),
            "max_scaled_base_error": float(
                np.max(np.abs(base_hat - base_star)) / scale),
        }
        with open(out / "recovery.json", "w", encoding="utf-8") as fh:
            json.dump(recovery, fh, indent=2, sort_keys=True)
            fh.write("\n")
        inputs["truth"] = tpath
        outputs.append("recovery.json")
    _write_manifest(out, "validate", args, inputs, outputs)
    print(f"validation error {overall:.3f}% overall")
    return 0


# -- parser wiring -------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser, out_required: bool = True) -> None:
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for all randomized steps (default 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: DYNIDENT_THREADS or 1)")
    parser.add_argument("--out", required=out_required, default=None,
                        help="output directory for artifacts and manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynident",
        description="Dynamic-model identification pipeline for cable-coupled arms")
    sub = parser.add_subparsers(dest="group", required=True)

    p_model = sub.add_parser("model", help="model-file utilities")
    model_sub = p_model.add_subparsers(dest="action", required=True)
    p_check = model_sub.add_parser("check", help="validate a model file")
    p_check.add_argument("--model", required=True)
    _add_common(p_check, out_required=False)
    p_check.set_defaults(func=cmd_model_check)

    p_traj = sub.add_parser("traj", help="excitation trajectories")
    traj_sub = p_traj.add_subparsers(dest="action", required=True)
    p_opt = traj_sub.add_parser("optimize", help="minimize regressor conditioning")
    p_opt.add_argument("--model", required=True)
    p_opt.add_argument("--ff", type=float, required=True,
                       help="fundamental frequency in Hz")
    p_opt.add_argument("--nh", type=int, required=True, help="harmonic count")
    p_opt.add_argument("--duration", type=float, default=None)
    p_opt.add_argument("--ramp", type=float, default=5.0)
    p_opt.add_argument("--samples", type=int, default=60)
    p_opt.add_argument("--restarts", type=int, default=6)
    p_opt.add_argument("--max-iter", type=int, default=200)
    p_opt.add_argument("--polish", type=int, default=6)
    p_opt.add_argument("--warm-start", default=None,
                       help="trajectory file used as one restart's start point")
    p_opt.add_argument("--drop-excluded", action="store_true",
                       help="drop parameters of links flagged out of the objective")
    _add_common(p_opt)
    p_opt.set_defaults(func=cmd_traj_optimize)
    p_exp = traj_sub.add_parser("export", help="sample a trajectory to CSV")
    p_exp.add_argument("--traj", required=True)
    p_exp.add_argument("--rate", type=float, required=True, help="sample rate in Hz")
    p_exp.add_argument("--duration", type=float, default=None)
    _add_common(p_exp)
    p_exp.set_defaults(func=cmd_traj_export)

    p_sim = sub.add_parser("sim", help="synthetic data generation")
    sim_sub = p_sim.add_subparsers(dest="action", required=True)
    p_gen = sim_sub.add_parser("generate", help="simulate a torque log")
    p_gen.add_argument("--model", required=True)
    p_gen.add_argument("--traj", required=True)
    p_gen.add_argument("--rate", type=float, default=200.0)
    p_gen.add_argument("--noise", type=float, default=0.02,
                       help="torque noise sigma as a fraction of range")
    p_gen.add_argument("--noise-seed", type=int, default=None,
                       help="separate noise seed (default: reuse --seed)")
    p_gen.add_argument("--duration", type=float, default=None)
    _add_common(p_gen)
    p_gen.set_defaults(func=cmd_sim_generate)

    p_id = sub.add_parser("identify", help="fit parameters from a log")
    p_id.add_argument("--model", required=True)
    p_id.add_argument("--log", required=True)
    p_id.add_argument("--method", choices=("feasible", "ols-base"),
                      default="feasible")
    p_id.add_argument("--cutoff", type=float, default=None,
                      help="low-pass cutoff in Hz (default: no filtering)")
    p_id.add_argument("--order", type=int, default=6)
    p_id.add_argument("--ramp", type=float, default=5.0,
                      help="seconds discarded from the log head")
    _add_common(p_id)
    p_id.set_defaults(func=cmd_identify)

    p_val = sub.add_parser("validate", help="score parameters on a test log")
    p_val.add_argument("--model", required=True)
    p_val.add_argument("--params", required=True)
    p_val.add_argument("--log", required=True)
    p_val.add_argument("--truth", default=None,
                       help="ground-truth parameter file for recovery scoring")
    p_val.add_argument("--cutoff", type=float, default=None)
    p_val.add_argument("--order", type=int, default=6)
    p_val.add_argument("--ramp", type=float, default=5.0)
    _add_common(p_val)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverFailure, TrajectoryError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
