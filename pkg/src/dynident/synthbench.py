"""Synthetic test bench: ground-truth sampling, torque simulation, oracle.

Substitutes for hardware.  Ground-truth parameter vectors are drawn inside
the physical-feasibility set, torque logs are simulated from the regressor
with optional range-scaled noise, and an energy-based oracle recomputes
motor torques by numerically differentiating link energies, sharing no
algorithmic path with the column-construction code it double-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .excitation import FourierTrajectory, eval_trajectory
from .model import RobotModel
from .regressor import (
    ParameterVector,
    cable_torque,
    parameter_layout,
    regressor_batch,
)
from .signals import JointLog

__all__ = [
    "GroundTruth",
    "sample_feasible_parameters",
    "simulate_log",
    "lagrangian_oracle",
    "oracle_regressor",
]


@dataclass(frozen=True)
class GroundTruth:
    """A feasible parameter vector plus the noise recipe used to log it."""

    delta_star: ParameterVector
    seed: int
    noise_sigma_fraction: float = 0.0


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    A = rng.standard_normal((3, 3))
    Q, R = np.linalg.qr(A)
    Q *= np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 2] = -Q[:, 2]
    return Q


def sample_feasible_parameters(model: RobotModel, seed: int,
                               noise_sigma_fraction: float = 0.0,
                               max_attempts: int = 1000) -> GroundTruth:
    """Draw a strictly feasible ground-truth parameter vector.

    Masses are uniform in [0.1, 5] kg, COMs land inside a 20%-shrunk copy of
    each link's hull, and COM-frame inertias come from random rotations of
    eigenvalues drawn in [1e-4, 1e-1] kg*m^2 that satisfy the triangle
    inequalities with margin.  Friction, motor inertia, and stiffness are
    positive.  Deterministic per seed.
    """
    from .identification import feasibility_margins
    from .regressor import barycentric_block

    rng = np.random.default_rng(seed)
    layout = parameter_layout(model)
    delta = ParameterVector.zeros(layout)
    for joint in layout.inertial_joints:
        hull = model.com_hull(joint)
        center = 0.5 * (hull.lower + hull.upper)
        half = 0.5 * (hull.upper - hull.lower)
        for _ in range(max_attempts):
            m = rng.uniform(0.1, 5.0)
            r = center + 0.8 * half * rng.uniform(-1.0, 1.0, 3)
            eigs = rng.uniform(1e-4, 1e-1, 3)
            s = eigs.sum()
            if np.any(eigs > 0.45 * s):  # triangle inequalities with margin
                continue
            Q = _random_rotation(rng)
            inertia = Q @ np.diag(eigs) @ Q.T
            block = barycentric_block(m, r, inertia)
            delta.set_link_block(joint, block)
            break
        else:
            raise RuntimeError(f"could not draw a feasible link for {joint!r}")
    for joint, symbol in layout.entries:
        if symbol == "Fv":
            delta.set(joint, symbol, rng.uniform(0.05, 0.5))
        elif symbol == "Fc":
            delta.set(joint, symbol, rng.uniform(0.05, 0.4))
        elif symbol == "Fo":
            delta.set(joint, symbol, rng.uniform(-0.1, 0.1))
        elif symbol == "Im":
            delta.set(joint, symbol, rng.uniform(1e-4, 5e-3))
        elif symbol == "Ks":
            delta.set(joint, symbol, rng.uniform(1.0, 8.0))
    margins = feasibility_margins(model, delta)
    worst = min(margins.values())
    if worst < 1e-6:
        raise RuntimeError(f"sampled parameters infeasible (margin {worst:.2e})")
    return GroundTruth(delta, seed, noise_sigma_fraction)


def simulate_log(model: RobotModel, truth: GroundTruth, traj: FourierTrajectory,
                 fs: float, duration: float | None = None) -> JointLog:
    """Forward-evaluate motor torques along a trajectory, with range noise.

    Noise sigma per motor is ``noise_sigma_fraction`` of that motor's clean
    torque range over the log; the same (seed, fraction) always yields a
    bitwise-identical log.
    """
    span = traj.duration if duration is None else duration
    count = int(round(span * fs))
    t = np.arange(count) / fs
    q, dq, ddq = eval_trajectory(traj, t)
    H = regressor_batch(model, q, dq, ddq)
    tau = H @ truth.delta_star.values + cable_torque(model, q)
    if truth.noise_sigma_fraction > 0.0:
        sigma = truth.noise_sigma_fraction * (tau.max(axis=0) - tau.min(axis=0))
        rng = np.random.default_rng(truth.seed)
        tau = tau + sigma[None, :] * rng.standard_normal(tau.shape)
    return JointLog(t=t, q_m=q, dq_m=dq, tau_m=tau)


# -- independent torque oracle -------------------------------------------------
#
# The oracle rebuilds motor torques from energies: each link contributes
# kinetic and potential energy LINEAR in its ten barycentric parameters, so
# the whole Lagrangian is L(q, dq) = phi(q, dq) . delta for a coefficient
# vector phi assembled from poses and velocities.  Applying the
# Euler-Lagrange operator to phi columnwise yields a torque map that can be
# compared against the Newton-Euler column construction.  Poses come from a
# self-contained kinematics walk below; velocities use complex-step
# derivatives of that walk (exact to machine precision); the outer
# energy derivatives use central differences with Richardson extrapolation.


def _oracle_poses(model: RobotModel, q_c: np.ndarray):
    """Standalone pose walk: world rotation and origin of every frame.

    Accepts complex q_c so callers can push a complex step through the
    whole chain.  Kept deliberately separate from the kinematics module.
    """
    S, n = q_c.shape
    dtype = q_c.dtype
    R = np.empty((S, n, 3, 3), dtype=dtype)
    p = np.empty((S, n, 3), dtype=dtype)
    for k in range(n):
        kind = model.kin_kind[k]
        theta = model.kin_theta[k] + (q_c[:, k] if kind == 0 else 0.0)
        d = model.kin_d[k] + (q_c[:, k] if kind == 1 else 0.0)
        ca, sa = math.cos(model.kin_alpha[k]), math.sin(model.kin_alpha[k])
        ct, st = np.cos(theta), np.sin(theta)
        loc = np.empty((S, 3, 3), dtype=dtype)
        loc[:, 0, 0], loc[:, 0, 1], loc[:, 0, 2] = ct, -st, 0.0
        loc[:, 1, 0], loc[:, 1, 1], loc[:, 1, 2] = ca * st, ca * ct, -sa
        loc[:, 2, 0], loc[:, 2, 1], loc[:, 2, 2] = sa * st, sa * ct, ca
        shift = np.empty((S, 3), dtype=dtype)
        shift[:, 0] = model.kin_a[k]
        shift[:, 1] = -d * sa
        shift[:, 2] = d * ca
        parent = model.kin_parent[k]
        if parent < 0:
            R[:, k] = loc
            p[:, k] = shift
        else:
            Rp = R[:, parent]
            R[:, k] = Rp @ loc
            p[:, k] = p[:, parent] + np.einsum("sij,sj->si", Rp, shift)
    return R, p


def _oracle_velocities(model: RobotModel, q_m: np.ndarray, dq_m: np.ndarray):
    """Poses plus world angular/linear frame velocities via complex step."""
    E, e0 = model.E, model.e0
    q_c = q_m @ E.T + e0
    R, p = _oracle_poses(model, q_c)
    S, n = q_c.shape
    w = np.zeros((S, n, 3))
    v = np.zeros((S, n, 3))
    h = 1e-30
    for j in range(model.motor_count):
        step = (1j * h) * E[:, j][None, :]
        Rj, pj = _oracle_poses(model, q_c + step)
        dR = Rj.imag / h          # dR/dq_mj, exactly
        dp = pj.imag / h
        # vee(dR R^T) without forming the product: dR R^T is skew
        wx = np.einsum("snj,snj->sn", dR[:, :, 2, :], R[:, :, 1, :])
        wy = np.einsum("snj,snj->sn", dR[:, :, 0, :], R[:, :, 2, :])
        wz = np.einsum("snj,snj->sn", dR[:, :, 1, :], R[:, :, 0, :])
        scale = dq_m[:, j][:, None]
        w[:, :, 0] += wx * scale
        w[:, :, 1] += wy * scale
        w[:, :, 2] += wz * scale
        v += dp * scale[:, :, None]
    return R, p, w, v


def _spring_stretch(model: RobotModel, q_c: np.ndarray) -> dict[str, np.ndarray]:
    """Deflection measure per spring joint, from the configured geometry."""
    out = {}
    for spring in model.springs:
        q = q_c[:, model.joint_index[spring.joint]]
        if spring.kind == "torsional":
            out[spring.joint] = q
        else:
            u = math.pi + spring.q_o - q
            l_s = np.sqrt(spring.h_s**2 + spring.r_s**2
                          - 2.0 * spring.h_s * spring.r_s * np.cos(u))
            out[spring.joint] = l_s - spring.l_r
    return out


def _energy_coefficients(model: RobotModel, layout, q_m: np.ndarray,
                         dq_m: np.ndarray) -> np.ndarray:
    """phi with L(q, dq) = phi . delta, shape (S, P).

    Spring terms carry a positive sign so the resulting torque columns match
    the measured-torque convention of the shipped models (stiffness torque
    appears in the motor channel as stretch times moment arm).
    """
    S = q_m.shape[0]
    phi = np.zeros((S, layout.size))
    R, p, w, v = _oracle_velocities(model, q_m, dq_m)
    g = model.gravity
    for joint in layout.inertial_joints:
        k = model.joint_index[joint]
        c0 = layout.index[(joint, "Lxx")]
        Rk, pk, wk, vk = R[:, k], p[:, k], w[:, k], v[:, k]
        wl = np.einsum("sji,sj->si", Rk, wk)
        phi[:, c0 + 0] = 0.5 * wl[:, 0] ** 2
        phi[:, c0 + 1] = wl[:, 0] * wl[:, 1]
        phi[:, c0 + 2] = wl[:, 0] * wl[:, 2]
        phi[:, c0 + 3] = 0.5 * wl[:, 1] ** 2
        phi[:, c0 + 4] = wl[:, 1] * wl[:, 2]
        phi[:, c0 + 5] = 0.5 * wl[:, 2] ** 2
        cross = np.empty_like(vk)
        cross[:, 0] = vk[:, 1] * wk[:, 2] - vk[:, 2] * wk[:, 1]
        cross[:, 1] = vk[:, 2] * wk[:, 0] - vk[:, 0] * wk[:, 2]
        cross[:, 2] = vk[:, 0] * wk[:, 1] - vk[:, 1] * wk[:, 0]
        phi[:, c0 + 6: c0 + 9] = np.einsum("sji,sj->si", Rk, cross + g[None, :])
        phi[:, c0 + 9] = 0.5 * np.einsum("si,si->s", vk, vk) + pk @ g
    for joint in model.joints:
        if joint.motor_inertia:
            phi[:, layout.index[(joint.name, "Im")]] = \
                0.5 * dq_m[:, joint.motor - 1] ** 2
    if model.springs:
        q_c = q_m @ model.E.T + model.e0
        for joint, stretch in _spring_stretch(model, q_c).items():
            phi[:, layout.index[(joint, "Ks")]] = 0.5 * stretch**2
    return phi


def _richardson(f, h: float):
    """Central difference with one Richardson level: (4 D(h/2) - D(h)) / 3."""
    coarse = (f(h) - f(-h)) / (2.0 * h)
    fine = (f(0.5 * h) - f(-0.5 * h)) / h
    return (4.0 * fine - coarse) / 3.0


def oracle_regressor(model: RobotModel, q_m, dq_m, ddq_m) -> np.ndarray:
    """Torque-coefficient map (S, n_m, P) from energy differentiation.

    Row j holds d/dt(dphi/ddq_j) - dphi/dq_j along the sampled state, so
    oracle torque is this map times delta (friction is not part of the
    energy budget and is added by :func:`lagrangian_oracle`).
    """
    q_m = np.atleast_2d(np.asarray(q_m, dtype=float))
    dq_m = np.atleast_2d(np.asarray(dq_m, dtype=float))
    ddq_m = np.atleast_2d(np.asarray(ddq_m, dtype=float))
    layout = parameter_layout(model)
    S, n_m = q_m.shape
    out = np.empty((S, n_m, layout.size))

    def dphi_ddq(q, dq):
        # exact for velocity-quadratic energies, one central step per motor
        cols = np.empty((S, n_m, layout.size))
        h = 1e-4
        for j in range(n_m):
            e = np.zeros(n_m)
            e[j] = h
            cols[:, j] = (_energy_coefficients(model, layout, q, dq + e)
                          - _energy_coefficients(model, layout, q, dq - e)) / (2 * h)
        return cols

    for j in range(n_m):
        e = np.zeros(n_m)
        e[j] = 1.0
        out[:, j] = -_richardson(
            lambda h: _energy_coefficients(model, layout, q_m + h * e, dq_m),
            1e-5)
    # total time derivative along the state's second-order path
    out += _richardson(
        lambda s: dphi_ddq(q_m + s * dq_m + 0.5 * s * s * ddq_m,
                           dq_m + s * ddq_m),
        1e-3)
    return out


def lagrangian_oracle(model: RobotModel, delta: ParameterVector,
                      q_m, dq_m, ddq_m) -> np.ndarray:
    """Motor torques recomputed independently of the column construction.

    Energy terms go through numerical Euler-Lagrange; friction (not an
    energy) is accumulated directly over the coupling rows.
    """
    q_m = np.atleast_2d(np.asarray(q_m, dtype=float))
    dq_m = np.atleast_2d(np.asarray(dq_m, dtype=float))
    ddq_m = np.atleast_2d(np.asarray(ddq_m, dtype=float))
    tau = np.einsum("smp,p->sm", oracle_regressor(model, q_m, dq_m, ddq_m),
                    delta.values)
    dq_c = dq_m @ model.E.T
    for k, joint in enumerate(model.joints):
        if not joint.friction:
            continue
        dq = dq_c[:, k]
        tj = (delta.get(joint.name, "Fv") * dq
              + delta.get(joint.name, "Fc") * np.sign(dq)
              + delta.get(joint.name, "Fo"))
        tau += tj[:, None] * model.E[k][None, :]
    return tau
