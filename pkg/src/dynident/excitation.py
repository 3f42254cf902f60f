"""Periodic excitation trajectories and condition-number minimization.

A trajectory here is a finite Fourier series per motor coordinate, ramped in
from rest by a quintic envelope so hardware can track it from a standstill.
Optimization searches the series coefficients for the smallest 2-norm
condition number of the stacked base regressor, subject to joint, velocity,
and workspace limits enforced on a time grid.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .kinematics import expand_coordinates, tree_motion
from .model import RobotModel
from .regressor import BaseReduction, regressor_batch

__all__ = [
    "FourierTrajectory",
    "ConstraintReport",
    "OptimizationConfig",
    "OptimizationResult",
    "TrajectoryError",
    "eval_trajectory",
    "check_constraints",
    "condition_objective",
    "optimize_trajectory",
    "random_feasible_trajectory",
    "load_trajectory",
    "save_trajectory",
]


class TrajectoryError(RuntimeError):
    """Raised when no feasible excitation trajectory can be produced."""


@dataclass(frozen=True)
class FourierTrajectory:
    """Ramped periodic excitation, one Fourier series per motor coordinate.

    Position of motor coordinate k (after the ramp):

        q_k(t) = offset_k + sum_l  sin_coeff[l-1,k]/(w l) * sin(w l t)
                          - cos_coeff[l-1,k]/(w l) * cos(w l t)

    with w = 2*pi*fundamental_hz, so the coefficients carry velocity units
    and bound the speed contribution of each harmonic directly.  During the
    first ramp_duration seconds the oscillation is scaled by a quintic
    smoothstep, so motion starts at rest exactly at the offsets.
    """

    fundamental_hz: float
    harmonics: int
    offsets: np.ndarray
    sin_coeff: np.ndarray
    cos_coeff: np.ndarray
    duration: float
    ramp_duration: float = 5.0

    def __post_init__(self):
        if self.fundamental_hz <= 0.0:
            raise ValueError("fundamental frequency must be positive")
        if self.harmonics < 1:
            raise ValueError("need at least one harmonic")
        off = np.asarray(self.offsets, dtype=float)
        a = np.asarray(self.sin_coeff, dtype=float)
        b = np.asarray(self.cos_coeff, dtype=float)
        if off.ndim != 1:
            raise ValueError("offsets must be a 1-D array")
        want = (self.harmonics, off.shape[0])
        if a.shape != want or b.shape != want:
            raise ValueError(f"coefficient arrays must have shape {want}")
        if self.duration <= self.ramp_duration:
            raise ValueError("duration must exceed the ramp")
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "sin_coeff", a)
        object.__setattr__(self, "cos_coeff", b)

    @property
    def motor_count(self) -> int:
        return self.offsets.shape[0]

    @property
    def period(self) -> float:
        return 1.0 / self.fundamental_hz


def _ramp_envelope(t: np.ndarray, ramp: float):
    """Quintic smoothstep value and its first two time derivatives."""
    if ramp <= 0.0:
        one = np.ones_like(t)
        zero = np.zeros_like(t)
        return one, zero, zero
    u = np.clip(t / ramp, 0.0, 1.0)
    s = u**3 * (10.0 + u * (-15.0 + 6.0 * u))
    ds = 30.0 * u**2 * (1.0 + u * (-2.0 + u)) / ramp
    dds = 60.0 * u * (1.0 + u * (-3.0 + 2.0 * u)) / ramp**2
    return s, ds, dds


def eval_trajectory(traj: FourierTrajectory, t):
    """Analytic position, velocity, and acceleration at time(s) ``t``.

    Accepts a scalar or 1-D array of times; returns matching (q, dq, ddq)
    motor-coordinate arrays.  Times must be non-negative.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0.0):
        raise ValueError("trajectory time must be non-negative")
    w = 2.0 * math.pi * traj.fundamental_hz
    order = np.arange(1, traj.harmonics + 1, dtype=float)
    phase = np.multiply.outer(t_arr, w * order)
    sin_p, cos_p = np.sin(phase), np.cos(phase)

    a, b = traj.sin_coeff, traj.cos_coeff
    pos_a, pos_b = a / (w * order[:, None]), b / (w * order[:, None])
    q_osc = sin_p @ pos_a - cos_p @ pos_b
    dq_osc = cos_p @ a + sin_p @ b
    dd_a, dd_b = a * (w * order[:, None]), b * (w * order[:, None])
    ddq_osc = -sin_p @ dd_a + cos_p @ dd_b

    s, ds, dds = _ramp_envelope(t_arr, traj.ramp_duration)
    s, ds, dds = s[:, None], ds[:, None], dds[:, None]
    q = traj.offsets[None, :] + s * q_osc
    dq = ds * q_osc + s * dq_osc
    ddq = dds * q_osc + 2.0 * ds * dq_osc + s * ddq_osc
    if np.ndim(t) == 0:
        return q[0], dq[0], ddq[0]
    return q, dq, ddq


@dataclass(frozen=True)
class ConstraintReport:
    """Worst-case margins over a trajectory grid; negative means violated."""

    position: dict[str, float]
    velocity: dict[str, float]
    workspace: dict[str, float]
    grid_points: int

    @property
    def min_margin(self) -> float:
        pools = (*self.position.values(), *self.velocity.values(),
                 *self.workspace.values())
        return min(pools) if pools else math.inf

    @property
    def ok(self) -> bool:
        return self.min_margin >= 0.0


def _constraint_margins(model: RobotModel, q_m, dq_m):
    """Margins for limit rows and workspace boxes at given motor states."""
    position: dict[str, float] = {}
    velocity: dict[str, float] = {}
    for lr in model.limit_rows():
        qs = q_m @ lr.row + lr.offset
        position[lr.name] = float(min(qs.min() - lr.limit.q_min,
                                      lr.limit.q_max - qs.max()))
        dqs = dq_m @ lr.row
        velocity[lr.name] = float(min(dqs.min() - lr.limit.dq_min,
                                      lr.limit.dq_max - dqs.max()))
    workspace: dict[str, float] = {}
    state = expand_coordinates(model, q_m)
    frames = tree_motion(model, state.q_c)
    for i, joint in enumerate(model.joints):
        box = model.workspace_box(joint.name)
        if box is None:
            continue
        p = frames["p"][:, i, :]
        lo = (p - box.lower[None, :]).min()
        hi = (box.upper[None, :] - p).min()
        workspace[joint.name] = float(min(lo, hi))
    return position, velocity, workspace


def check_constraints(model: RobotModel, traj: FourierTrajectory,
                      grid_points: int) -> ConstraintReport:
    """Evaluate limit and workspace margins on a uniform time grid.

    The grid spans start-up ramp plus one full period, which covers every
    state the periodic trajectory ever visits.  ``grid_points`` must sample
    the highest harmonic at least 20 times per period.
    """
    if grid_points < 20 * traj.harmonics:
        raise ValueError(
            f"grid_points={grid_points} undersamples harmonic "
            f"{traj.harmonics}; need at least {20 * traj.harmonics}")
    span = min(traj.duration, traj.ramp_duration + traj.period)
    t = np.linspace(0.0, span, grid_points)
    q, dq, _ = eval_trajectory(traj, t)
    position, velocity, workspace = _constraint_margins(model, q, dq)
    return ConstraintReport(position, velocity, workspace, grid_points)


def condition_objective(model: RobotModel, reduction: BaseReduction,
                        traj: FourierTrajectory, sample_count: int = 100) -> float:
    """2-norm condition number of the base regressor stacked over one period.

    Samples ``sample_count`` states uniformly over a single post-ramp period
    and returns ``inf`` when the stacked matrix is numerically rank
    deficient (for example a zero-amplitude trajectory).
    """
    t0 = traj.ramp_duration
    t = t0 + np.arange(sample_count) * (traj.period / sample_count)
    q, dq, ddq = eval_trajectory(traj, t)
    if not (np.isfinite(q).all() and np.isfinite(dq).all()
            and np.isfinite(ddq).all()):
        raise FloatingPointError("trajectory produced non-finite states")
    H = regressor_batch(model, q, dq, ddq)
    W_b = reduction.base_regressor(H.reshape(-1, H.shape[-1]))
    sv = np.linalg.svd(W_b, compute_uv=False)
    if not np.isfinite(sv[0]) or sv[-1] <= sv[0] * 1e-300 or sv[-1] == 0.0:
        return math.inf
    return float(sv[0] / sv[-1])


@dataclass(frozen=True)
class OptimizationConfig:
    """Settings for :func:`optimize_trajectory`.

    ``safety_fraction`` is the interior margin (as a fraction of each limit
    span) the penalty aims for, so grid-point feasibility survives the final
    check on a 10x finer grid.
    """

    fundamental_hz: float
    harmonics: int
    duration: float | None = None
    ramp_duration: float = 5.0
    sample_count: int = 100
    grid_points: int | None = None
    restarts: int = 8
    max_iter: int = 60
    penalty_weights: tuple[float, ...] = (30.0, 300.0)
    offset_fraction: float = 0.25
    amplitude_fraction: float = 0.5
    safety_fraction: float = 0.01
    fd_step: float = 1e-3
    polish_iter: int = 0
    seed: int = 0
    threads: int = 1

    def resolved_duration(self) -> float:
        if self.duration is not None:
            return self.duration
        return self.ramp_duration + 2.0 / self.fundamental_hz

    def resolved_grid(self) -> int:
        if self.grid_points is not None:
            return self.grid_points
        return max(300, 25 * self.harmonics)


@dataclass(frozen=True)
class OptimizationResult:
    trajectory: FourierTrajectory
    objective: float
    report: ConstraintReport
    # rows of (restart, iteration, objective, best_so_far)
    log: tuple[tuple[int, int, float, float], ...] = field(repr=False)


def _position_polytope(model: RobotModel):
    """Stack every joint limit as lo <= A q_m + b <= hi over motor coords.

    Also returns the symmetric velocity bound per row.  Derived coordinates
    (parallelogram members, drive couplings) land here alongside the basis
    joints, so the polytope is tighter than the basis boxes alone.
    """
    rows = model.limit_rows()
    A = np.array([lr.row for lr in rows])
    lo = np.array([lr.limit.q_min - lr.offset for lr in rows])
    hi = np.array([lr.limit.q_max - lr.offset for lr in rows])
    dq = np.array([min(abs(lr.limit.dq_min), lr.limit.dq_max) for lr in rows])
    return A, lo, hi, dq


def _interior_geometry(model: RobotModel):
    """Rest pose plus per-motor travel that every limit row tolerates.

    The rest pose maximizes the worst span-relative margin over all rows
    (a Chebyshev-style linear program), so it stays strictly inside even
    when some derived coordinate makes the basis-box midpoint infeasible.
    Travel and velocity scales are the single-motor excursions no row can
    veto; combined excursions remain the constraint check's job.
    """
    A, lo, hi, dq = _position_polytope(model)
    n_m = model.motor_count
    span = 0.5 * (hi - lo)
    # vars (q_m, r): maximize r with A q_m +- r*span inside [lo, hi]
    cost = np.zeros(n_m + 1)
    cost[-1] = -1.0
    a_ub = np.block([[A, span[:, None]], [-A, span[:, None]]])
    b_ub = np.concatenate([hi, -lo])
    bounds = [(None, None)] * n_m + [(0.0, 1.0)]
    res = scipy.optimize.linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds)
    if not res.success or res.x[-1] <= 1e-9:
        raise TrajectoryError(
            "joint limit rows leave no interior rest pose to search around")
    center = res.x[:n_m]
    reach = A @ center
    active = np.abs(A) > 1e-12
    with np.errstate(divide="ignore"):
        per_row_room = np.minimum(hi - reach, reach - lo)[:, None] / np.abs(A)
        per_row_cap = dq[:, None] / np.abs(A)
    room = np.min(np.where(active, per_row_room, np.inf), axis=0)
    cap = np.min(np.where(active, per_row_cap, np.inf), axis=0)
    if not (np.all(np.isfinite(room)) and np.all(np.isfinite(cap))):
        raise TrajectoryError("a motor appears in no joint limit row")
    return center, room, cap


class _SearchSpace:
    """Dimensionless decision variables for the coefficient search.

    Maps z in a unit-ish box to (offsets, sin_coeff, cos_coeff): offsets move
    within the limit polytope's interior, amplitudes are scaled per
    (harmonic, motor) so a full-scale z keeps both position and velocity
    reach near their spans.  The normalization keeps finite-difference
    gradients meaningful across all 91-odd variables.
    """

    def __init__(self, model: RobotModel, config: OptimizationConfig):
        self.n_m = model.motor_count
        self.n_h = config.harmonics
        self.config = config
        w = 2.0 * math.pi * config.fundamental_hz
        center, room, dq_cap = _interior_geometry(model)
        self.center = center
        self.halfspan = room
        order = np.arange(1, self.n_h + 1, dtype=float)[:, None]
        self.amp_scale = np.minimum(self.halfspan[None, :] * w * order,
                                    dq_cap[None, :]) / self.n_h

    @property
    def size(self) -> int:
        return self.n_m * (1 + 2 * self.n_h)

    def bounds(self):
        return ([(-1.05, 1.05)] * self.n_m
                + [(-2.0, 2.0)] * (2 * self.n_h * self.n_m))

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        z_off = rng.uniform(-1.0, 1.0, self.n_m) * self.config.offset_fraction
        z_amp = rng.uniform(-1.0, 1.0, 2 * self.n_h * self.n_m)
        z_amp *= 2.0 * self.config.amplitude_fraction
        return np.concatenate([z_off, z_amp])

    def trajectory(self, z: np.ndarray) -> FourierTrajectory:
        n_m, n_h = self.n_m, self.n_h
        offsets = self.center + 0.9 * self.halfspan * z[:n_m]
        a = self.amp_scale * z[n_m:n_m + n_h * n_m].reshape(n_h, n_m)
        b = self.amp_scale * z[n_m + n_h * n_m:].reshape(n_h, n_m)
        return FourierTrajectory(
            self.config.fundamental_hz, n_h, offsets, a, b,
            self.config.resolved_duration(), self.config.ramp_duration)

    def encode(self, traj: FourierTrajectory) -> np.ndarray:
        if traj.harmonics != self.n_h or traj.motor_count != self.n_m:
            raise ValueError(
                "warm-start trajectory shape does not match the search space")
        z_off = (traj.offsets - self.center) / np.where(
            self.halfspan > 1e-12, 0.9 * self.halfspan, 1.0)
        scale = np.where(self.amp_scale > 1e-12, self.amp_scale, 1.0)
        z = np.concatenate([
            np.clip(z_off, -1.05, 1.05),
            np.clip(traj.sin_coeff / scale, -2.0, 2.0).ravel(),
            np.clip(traj.cos_coeff / scale, -2.0, 2.0).ravel(),
        ])
        return z


class _PenaltyProblem:
    """log condition number plus scaled constraint-violation penalty."""

    def __init__(self, model, reduction, config: OptimizationConfig):
        self.model = model
        self.reduction = reduction
        self.config = config
        self.space = _SearchSpace(model, config)
        self.grid = config.resolved_grid()
        # violation scales so penalties are dimensionless across units
        self.pos_scale = {lr.name: max(lr.limit.q_max - lr.limit.q_min, 1e-9)
                          for lr in model.limit_rows()}
        self.vel_scale = {lr.name: max(lr.limit.dq_max - lr.limit.dq_min, 1e-9)
                          for lr in model.limit_rows()}
        self.evaluations = 0

    def violation(self, traj, grid_points, safety=0.0) -> float:
        report = check_constraints(self.model, traj, grid_points)
        total = 0.0
        for name, margin in report.position.items():
            total += max(0.0, safety - margin / self.pos_scale[name]) ** 2
        for name, margin in report.velocity.items():
            total += max(0.0, safety - margin / self.vel_scale[name]) ** 2
        for margin in report.workspace.values():
            total += max(0.0, safety - margin) ** 2
        return total

    def penalized(self, z, weight) -> float:
        self.evaluations += 1
        traj = self.space.trajectory(z)
        cond = condition_objective(self.model, self.reduction, traj,
                                   self.config.sample_count)
        if not math.isfinite(cond):
            cond = 1e12
        violation = self.violation(traj, self.grid,
                                   safety=self.config.safety_fraction)
        return math.log(cond) + weight * violation


def _run_restart(model, reduction, config: OptimizationConfig, index: int,
                 start: np.ndarray | None = None):
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, index)))
    problem = _PenaltyProblem(model, reduction, config)
    z = problem.space.random_start(rng) if start is None else np.asarray(start)
    bounds = problem.space.bounds()
    trace: list[tuple[int, float]] = []
    for weight in config.penalty_weights:
        res = scipy.optimize.minimize(
            problem.penalized, z, args=(weight,), method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": config.max_iter, "maxcor": 12,
                     "eps": config.fd_step})
        z = res.x
        trace.append((problem.evaluations, float(res.fun)))
    if config.polish_iter > 0:
        # derivative-free pass copes with the nonsmooth near-degenerate
        # smallest singular value that stalls quasi-Newton steps
        res = scipy.optimize.minimize(
            problem.penalized, z, args=(config.penalty_weights[-1],),
            method="Powell", bounds=bounds,
            options={"maxiter": config.polish_iter, "xtol": 1e-4})
        if res.fun <= trace[-1][1]:
            z = res.x
        trace.append((problem.evaluations, float(min(res.fun, trace[-1][1]))))

    traj = problem.space.trajectory(z)
    fine = check_constraints(model, traj, 10 * problem.grid)
    cond = condition_objective(model, reduction, traj, config.sample_count)
    feasible = fine.ok and math.isfinite(cond)
    return feasible, cond, traj, fine, trace


def optimize_trajectory(model: RobotModel, reduction: BaseReduction,
                        config: OptimizationConfig,
                        warm_start: FourierTrajectory | None = None
                        ) -> OptimizationResult:
    """Search Fourier coefficients minimizing the base-regressor condition.

    Runs ``config.restarts`` independent multistarts (optionally in
    threads), each a short sequence of increasingly weighted penalty
    minimizations, then verifies the winner on a 10x finer constraint grid.
    A ``warm_start`` trajectory seeds the first restart in place of a random
    draw.  Deterministic for a fixed config.  Raises
    :class:`TrajectoryError` when every restart ends infeasible.
    """
    starts: list[np.ndarray | None] = [None] * config.restarts
    if warm_start is not None:
        starts[0] = _SearchSpace(model, config).encode(warm_start)
    indices = range(config.restarts)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            outcomes = list(pool.map(
                lambda i: _run_restart(model, reduction, config, i, starts[i]),
                indices))
    else:
        outcomes = [_run_restart(model, reduction, config, i, starts[i])
                    for i in indices]

    log: list[tuple[int, int, float, float]] = []
    best = None
    best_obj = math.inf
    for i, (feasible, cond, traj, report, trace) in enumerate(outcomes):
        for iteration, fun in trace:
            log.append((i, iteration, fun, best_obj))
        if feasible and cond < best_obj:
            best_obj = cond
            best = (traj, report)
        log.append((i, trace[-1][0] if trace else 0,
                    cond if math.isfinite(cond) else 1e12, best_obj))
    if best is None:
        raise TrajectoryError(
            f"no feasible trajectory after {config.restarts} restarts")
    traj, report = best
    return OptimizationResult(traj, best_obj, report, tuple(log))


def random_feasible_trajectory(model: RobotModel, config: OptimizationConfig,
                               rng: np.random.Generator,
                               max_attempts: int = 200) -> FourierTrajectory:
    """Draw random coefficients until the constraint check passes.

    Used as the no-optimization baseline when judging optimizer gains.
    """
    space = _SearchSpace(model, config)
    grid = config.resolved_grid()
    for _ in range(max_attempts):
        traj = space.trajectory(space.random_start(rng))
        if check_constraints(model, traj, grid).ok:
            return traj
    raise TrajectoryError(f"no feasible random draw in {max_attempts} attempts")


# -- trajectory files --------------------------------------------------------


def save_trajectory(traj: FourierTrajectory, path) -> None:
    payload = {
        "schema": 1,
        "fundamental_hz": traj.fundamental_hz,
        "harmonics": traj.harmonics,
        "offsets": [float(v) for v in traj.offsets],
        "sin_coeff": [[float(v) for v in row] for row in traj.sin_coeff],
        "cos_coeff": [[float(v) for v in row] for row in traj.cos_coeff],
        "duration": traj.duration,
        "ramp_duration": traj.ramp_duration,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trajectory(path) -> FourierTrajectory:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != 1:
        raise ValueError(f"unsupported trajectory schema {payload.get('schema')!r}")
    return FourierTrajectory(
        fundamental_hz=float(payload["fundamental_hz"]),
        harmonics=int(payload["harmonics"]),
        offsets=np.asarray(payload["offsets"], dtype=float),
        sin_coeff=np.asarray(payload["sin_coeff"], dtype=float),
        cos_coeff=np.asarray(payload["cos_coeff"], dtype=float),
        duration=float(payload["duration"]),
        ramp_duration=float(payload["ramp_duration"]),
    )
