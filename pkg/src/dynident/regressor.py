"""Linear torque regressor and base-parameter reduction.

Motor torque is linear in the parameter vector: tau_m = H(q, dq, ddq) @ delta.
Per joint the layout interleaves a 10-entry rigid-body block
(Lxx, Lxy, Lxz, Lyy, Lyz, Lzz, lx, ly, lz, m) with per-effect entries
(Fv, Fc, Fo for friction, Im for motor inertia, Ks for a spring); blocks a
joint does not model are simply absent.

The rigid-body columns are built by inverse dynamics on the spanning tree
with exactly one parameter set to one: each body's dynamic wrench, expressed
about its own frame origin, is a known linear map of (L, l, m), and that
wrench projects onto every tree joint on the path back to the base.  Joint
torques become motor torques through the constant coupling map, tau_m =
E.T @ tau_c, which is exact because E is constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kinematics import expand_coordinates, tree_motion
from .model import RobotModel, SpringSpec

__all__ = [
    "LINK_SYMBOLS",
    "ParameterLayout",
    "ParameterVector",
    "SpringGeometryError",
    "parameter_layout",
    "barycentric_block",
    "spring_deflection",
    "inertial_regressor",
    "friction_regressor",
    "motor_inertia_regressor",
    "spring_regressor",
    "cable_torque",
    "full_regressor",
    "regressor_batch",
    "stack_regressor",
    "sample_states",
    "BaseReduction",
    "base_reduction",
]

LINK_SYMBOLS = ("Lxx", "Lxy", "Lxz", "Lyy", "Lyz", "Lzz", "lx", "ly", "lz", "m")
FRICTION_SYMBOLS = ("Fv", "Fc", "Fo")


class SpringGeometryError(ValueError):
    """Raised when a spring's anchor geometry degenerates (zero length)."""


@dataclass(frozen=True)
class ParameterLayout:
    """Flat ordering of every modeled parameter for one robot."""

    entries: tuple[tuple[str, str], ...]
    index: dict[tuple[str, str], int]
    inertial_joints: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.entries)

    def columns_for_joint(self, joint: str) -> list[int]:
        return [i for i, (j, _) in enumerate(self.entries) if j == joint]


def parameter_layout(model: RobotModel) -> ParameterLayout:
    entries: list[tuple[str, str]] = []
    inertial = []
    for j in model.joints:
        if j.link_inertia:
            inertial.append(j.name)
            entries.extend((j.name, s) for s in LINK_SYMBOLS)
        if j.friction:
            entries.extend((j.name, s) for s in FRICTION_SYMBOLS)
        if j.motor_inertia:
            entries.append((j.name, "Im"))
        if j.spring:
            entries.append((j.name, "Ks"))
    index = {entry: i for i, entry in enumerate(entries)}
    return ParameterLayout(tuple(entries), index, tuple(inertial))


@dataclass
class ParameterVector:
    """Values in flat layout order, with symbolic access helpers."""

    layout: ParameterLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.size,):
            raise ValueError(
                f"expected {self.layout.size} parameter values, got {self.values.shape}"
            )

    @staticmethod
    def zeros(layout: ParameterLayout) -> "ParameterVector":
        return ParameterVector(layout, np.zeros(layout.size))

    def get(self, joint: str, symbol: str) -> float:
        return float(self.values[self.layout.index[(joint, symbol)]])

    def set(self, joint: str, symbol: str, value: float) -> None:
        self.values[self.layout.index[(joint, symbol)]] = value

    def link_block(self, joint: str) -> np.ndarray:
        i0 = self.layout.index[(joint, "Lxx")]
        return self.values[i0 : i0 + 10]

    def set_link_block(self, joint: str, block: np.ndarray) -> None:
        i0 = self.layout.index[(joint, "Lxx")]
        self.values[i0 : i0 + 10] = block


def barycentric_block(mass: float, com: np.ndarray, inertia_com: np.ndarray) -> np.ndarray:
    """Rigid-body block from mass, COM position and inertia about the COM.

    Applies l = m r and the parallel-axis shift of the inertia tensor to the
    frame origin.
    """
    com = np.asarray(com, dtype=float)
    inertia_com = np.asarray(inertia_com, dtype=float)
    l = mass * com
    shift = mass * (np.dot(com, com) * np.eye(3) - np.outer(com, com))
    L = inertia_com + shift
    return np.array(
        [L[0, 0], L[0, 1], L[0, 2], L[1, 1], L[1, 2], L[2, 2], l[0], l[1], l[2], mass]
    )


def spring_deflection(spring: SpringSpec, q):
    """Deflection term multiplying the stiffness parameter.

    Extension springs: (l_s - l_r) * d_s with the anchor-triangle length and
    moment arm; torsional springs deflect as -q.
    """
    q = np.asarray(q, dtype=float)
    if spring.kind == "torsional":
        return -q
    angle = np.pi + spring.q_o - q
    ls_sq = spring.h_s**2 + spring.r_s**2 - 2.0 * spring.h_s * spring.r_s * np.cos(angle)
    ls = np.sqrt(np.maximum(ls_sq, 0.0))
    if np.any(ls < 1e-12):
        raise SpringGeometryError(
            f"extension spring on joint {spring.joint!r}: anchor distance vanishes"
        )
    d_s = spring.h_s * spring.r_s * np.sin(angle) / ls
    return (ls - spring.l_r) * d_s


# -- batched column construction --------------------------------------------


def _skew_batch(x: np.ndarray) -> np.ndarray:
    S = x.shape[0]
    M = np.zeros((S, 3, 3))
    M[:, 0, 1] = -x[:, 2]
    M[:, 0, 2] = x[:, 1]
    M[:, 1, 0] = x[:, 2]
    M[:, 1, 2] = -x[:, 0]
    M[:, 2, 0] = -x[:, 1]
    M[:, 2, 1] = x[:, 0]
    return M


def _inertia_op(x: np.ndarray) -> np.ndarray:
    """Map the six (Lxx..Lzz) entries to L @ x, batched: returns (S, 3, 6)."""
    S = x.shape[0]
    K = np.zeros((S, 3, 6))
    K[:, 0, 0] = x[:, 0]
    K[:, 0, 1] = x[:, 1]
    K[:, 0, 2] = x[:, 2]
    K[:, 1, 1] = x[:, 0]
    K[:, 1, 3] = x[:, 1]
    K[:, 1, 4] = x[:, 2]
    K[:, 2, 2] = x[:, 0]
    K[:, 2, 4] = x[:, 1]
    K[:, 2, 5] = x[:, 2]
    return K


def _body_wrench_columns(R, w, dw, a):
    """Per-sample 3x10 force/moment maps of one body about its frame origin."""
    wb = np.einsum("sji,sj->si", R, w)
    dwb = np.einsum("sji,sj->si", R, dw)
    ab = np.einsum("sji,sj->si", R, a)
    Sw = _skew_batch(wb)
    S = wb.shape[0]
    Ncols = np.zeros((S, 3, 10))
    Ncols[:, :, :6] = _inertia_op(dwb) + Sw @ _inertia_op(wb)
    Ncols[:, :, 6:9] = -_skew_batch(ab)
    Fcols = np.zeros((S, 3, 10))
    Fcols[:, :, 6:9] = _skew_batch(dwb) + Sw @ Sw
    Fcols[:, :, 9] = ab
    return Fcols, Ncols


def regressor_batch(model: RobotModel, q_m, dq_m, ddq_m) -> np.ndarray:
    """Full regressor for a batch of motor states: returns (S, n_m, P)."""
    q_m = np.atleast_2d(np.asarray(q_m, dtype=float))
    dq_m = np.atleast_2d(np.asarray(dq_m, dtype=float))
    ddq_m = np.atleast_2d(np.asarray(ddq_m, dtype=float))
    if q_m.shape != dq_m.shape or q_m.shape != ddq_m.shape:
        raise ValueError("q, dq, ddq must share one shape")
    state = expand_coordinates(model, q_m, dq_m, ddq_m)
    layout = parameter_layout(model)
    S = q_m.shape[0]
    n_m = model.motor_count
    H = np.zeros((S, n_m, layout.size))
    motion = tree_motion(model, state.q_c, state.dq_c, state.ddq_c, gravity=model.gravity)
    _fill_inertial(model, layout, motion, H)
    _fill_friction(model, layout, state.dq_c, H)
    _fill_motor_inertia(model, layout, ddq_m, H)
    _fill_springs(model, layout, state.q_c, H)
    return H


def _fill_inertial(model, layout, motion, H):
    E = model.E
    R, p, z = motion["R"], motion["p"], motion["z"]
    w, dw, a = motion["w"], motion["dw"], motion["a"]
    bodies = [k for k, j in enumerate(model.joints) if j.link_inertia]
    if not bodies:
        return
    S, B = R.shape[0], len(bodies)
    idx = np.asarray(bodies)
    RR = np.ascontiguousarray(R[:, idx]).reshape(S * B, 3, 3)
    Fc, Nc = _body_wrench_columns(
        RR, w[:, idx].reshape(S * B, 3),
        dw[:, idx].reshape(S * B, 3), a[:, idx].reshape(S * B, 3))
    FW = (RR @ Fc).reshape(S, B, 3, 10)
    NW = (RR @ Nc).reshape(S, B, 3, 10)

    # actuated-ancestor pairs, vectorized per joint kind
    rev = [(b, j) for b, k in enumerate(bodies) for j in model.ancestor_chain[k]
           if model.kin_kind[j] == 0 and np.any(E[j])]
    pris = [(b, j) for b, k in enumerate(bodies) for j in model.ancestor_chain[k]
            if model.kin_kind[j] == 1 and np.any(E[j])]
    per_body: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(B)]
    if rev:
        bks = np.array([b for b, _ in rev])
        aks = np.array([j for _, j in rev])
        lever = p[:, idx[bks]] - p[:, aks]
        Fb = FW[:, bks]
        lx, ly, lz = lever[:, :, 0, None], lever[:, :, 1, None], lever[:, :, 2, None]
        moment = NW[:, bks].copy()
        moment[:, :, 0] += ly * Fb[:, :, 2] - lz * Fb[:, :, 1]
        moment[:, :, 1] += lz * Fb[:, :, 0] - lx * Fb[:, :, 2]
        moment[:, :, 2] += lx * Fb[:, :, 1] - ly * Fb[:, :, 0]
        vals = np.einsum("ski,skic->skc", z[:, aks], moment)
        for n, (b, j) in enumerate(rev):
            per_body[b].append((j, vals[:, n]))
    if pris:
        bks = np.array([b for b, _ in pris])
        aks = np.array([j for _, j in pris])
        vals = np.einsum("ski,skic->skc", z[:, aks], FW[:, bks])
        for n, (b, j) in enumerate(pris):
            per_body[b].append((j, vals[:, n]))

    for b, k in enumerate(bodies):
        if not per_body[b]:
            continue
        c0 = layout.index[(model.joints[k].name, "Lxx")]
        rows = E[[j for j, _ in per_body[b]]]
        vset = np.stack([v for _, v in per_body[b]], axis=1)
        H[:, :, c0 : c0 + 10] += np.einsum("am,sac->smc", rows, vset)


def _fill_friction(model, layout, dq_c, H):
    for k, joint in enumerate(model.joints):
        if not joint.friction:
            continue
        e = model.E[k]
        dq = dq_c[:, k]
        H[:, :, layout.index[(joint.name, "Fv")]] = e[None, :] * dq[:, None]
        H[:, :, layout.index[(joint.name, "Fc")]] = e[None, :] * np.sign(dq)[:, None]
        H[:, :, layout.index[(joint.name, "Fo")]] = e[None, :]


def _fill_motor_inertia(model, layout, ddq_m, H):
    for joint in model.joints:
        if not joint.motor_inertia:
            continue
        m0 = joint.motor - 1
        H[:, m0, layout.index[(joint.name, "Im")]] = ddq_m[:, m0]


def _fill_springs(model, layout, q_c, H):
    for spring in model.springs:
        k = model.joint_index[spring.joint]
        defl = spring_deflection(spring, q_c[:, k])
        H[:, :, layout.index[(spring.joint, "Ks")]] = model.E[k][None, :] * defl[:, None]


def full_regressor(model: RobotModel, q_m, dq_m, ddq_m) -> np.ndarray:
    """Regressor H with tau_m = H @ delta; (n_m, P), batched when inputs are 2-D."""
    q_m = np.asarray(q_m, dtype=float)
    single = q_m.ndim == 1
    H = regressor_batch(model, q_m, dq_m, ddq_m)
    return H[0] if single else H


def _require_motion(state):
    if state.dq_c is None or state.ddq_c is None:
        raise ValueError("state must carry velocities and accelerations")


def inertial_regressor(model: RobotModel, state) -> np.ndarray:
    """Rigid-body columns only, in layout order; (n_m, 10 * n_links)."""
    _require_motion(state)
    layout = parameter_layout(model)
    H = regressor_batch(model, state.q_m, state.dq_m, state.ddq_m)[0]
    cols = [i for i, (_, s) in enumerate(layout.entries) if s in LINK_SYMBOLS]
    return H[:, cols]


def friction_regressor(model: RobotModel, state) -> np.ndarray:
    """Columns (dq, sign(dq), 1) per friction site, projected to motor rows."""
    if state.dq_c is None:
        raise ValueError("state must carry velocities")
    layout = parameter_layout(model)
    dq_c = np.atleast_2d(state.dq_c)
    H = np.zeros((dq_c.shape[0], model.motor_count, layout.size))
    _fill_friction(model, layout, dq_c, H)
    cols = [i for i, (_, s) in enumerate(layout.entries) if s in FRICTION_SYMBOLS]
    out = H[:, :, cols]
    return out[0] if np.asarray(state.q_m).ndim == 1 else out


def motor_inertia_regressor(model: RobotModel, state) -> np.ndarray:
    """One column per motor-inertia entry: that motor's acceleration on its row."""
    if state.ddq_m is None:
        raise ValueError("state must carry accelerations")
    layout = parameter_layout(model)
    ddq_m = np.atleast_2d(state.ddq_m)
    H = np.zeros((ddq_m.shape[0], model.motor_count, layout.size))
    _fill_motor_inertia(model, layout, ddq_m, H)
    cols = [i for i, (_, s) in enumerate(layout.entries) if s == "Im"]
    out = H[:, :, cols]
    return out[0] if np.asarray(state.q_m).ndim == 1 else out


def spring_regressor(model: RobotModel, state) -> np.ndarray:
    """One deflection column per spring, projected to motor rows."""
    layout = parameter_layout(model)
    q_c = np.atleast_2d(state.q_c)
    H = np.zeros((q_c.shape[0], model.motor_count, layout.size))
    _fill_springs(model, layout, q_c, H)
    cols = [i for i, (_, s) in enumerate(layout.entries) if s == "Ks"]
    out = H[:, :, cols]
    return out[0] if np.asarray(state.q_m).ndim == 1 else out


def cable_torque(model: RobotModel, q_m) -> np.ndarray:
    """Known feedforward cable torque at each cabled joint's motor row."""
    q_m = np.asarray(q_m, dtype=float)
    single = q_m.ndim == 1
    q = np.atleast_2d(q_m)
    tau = np.zeros((q.shape[0], model.motor_count))
    for cable in model.cables:
        k = model.joint_index[cable.joint]
        qk = q @ model.E[k] + model.e0[k]
        m0 = model.joints[k].motor - 1
        tau[:, m0] += np.polynomial.polynomial.polyval(qk, cable.coefficients)
    return tau[0] if single else tau


def stack_regressor(model: RobotModel, q_m, dq_m, ddq_m) -> np.ndarray:
    """Regressor rows stacked over samples: (S * n_m, P)."""
    H = regressor_batch(model, q_m, dq_m, ddq_m)
    return H.reshape(-1, H.shape[-1])


# -- random states within limits ---------------------------------------------


def sample_states(model: RobotModel, count: int, rng: np.random.Generator,
                  accel_scale: float = 10.0):
    """Random motor states uniform within the configured limits.

    Basis joints are drawn uniformly inside their position/velocity boxes and
    mapped to motor coordinates; limits on derived coordinates are enforced
    by rejection.  Accelerations are uniform in +-accel_scale.
    """
    basis = model.coupling.basis
    boxes = model.basis_limits()
    q_lo = np.array([boxes[b].q_min for b in basis])
    q_hi = np.array([boxes[b].q_max for b in basis])
    dq_lo = np.array([boxes[b].dq_min for b in basis])
    dq_hi = np.array([boxes[b].dq_max for b in basis])
    basis_rows = model.E[model.coupling.basis_indices]
    basis_off = model.e0[model.coupling.basis_indices]
    inv = np.linalg.inv(basis_rows)

    covered = [
        lr for lr in model.limit_rows()
        if not any(np.allclose(lr.row, basis_rows[i], rtol=1e-12, atol=1e-15)
                   for i in range(len(basis)))
    ]

    got_q, got_dq = [], []
    need = count
    attempts = 0
    while need > 0:
        attempts += 1
        if attempts > 1000:
            raise RuntimeError("state sampling keeps violating derived-coordinate limits")
        n_draw = max(2 * need, 16)
        qb = rng.uniform(q_lo, q_hi, size=(n_draw, len(basis)))
        dqb = rng.uniform(dq_lo, dq_hi, size=(n_draw, len(basis)))
        qm = (qb - basis_off) @ inv.T
        dqm = dqb @ inv.T
        ok = np.ones(n_draw, dtype=bool)
        for lr in covered:
            qv = qm @ lr.row + lr.offset
            dqv = dqm @ lr.row
            ok &= (qv >= lr.limit.q_min) & (qv <= lr.limit.q_max)
            ok &= (dqv >= lr.limit.dq_min) & (dqv <= lr.limit.dq_max)
        kept = np.nonzero(ok)[0][:need]
        got_q.append(qm[kept])
        got_dq.append(dqm[kept])
        need -= len(kept)
    q_m = np.vstack(got_q)
    dq_m = np.vstack(got_dq)
    ddq_m = rng.uniform(-accel_scale, accel_scale, size=q_m.shape)
    return q_m, dq_m, ddq_m


# -- base-parameter reduction --------------------------------------------------


@dataclass(frozen=True)
class BaseReduction:
    """Identifiable reparameterization found by rank-revealing QR.

    ``columns`` indexes the full layout (a subset when trajectory-excluded
    links were dropped); ``independent``/``dependent`` index into ``columns``.
    Dependent columns fold into the independent ones through ``K_d``, so
    W @ delta == W_base @ base_parameters(delta) for the retained columns.
    """

    parameter_count: int
    columns: np.ndarray
    independent: np.ndarray
    dependent: np.ndarray
    K_d: np.ndarray
    diagonal: np.ndarray
    tolerance: float

    @property
    def base_size(self) -> int:
        return len(self.independent)

    @property
    def base_columns(self) -> np.ndarray:
        return self.columns[self.independent]

    def base_parameters(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float)[self.columns]
        return v[self.independent] + self.K_d @ v[self.dependent]

    def base_regressor(self, H: np.ndarray) -> np.ndarray:
        return H[..., self.base_columns]

    def describe(self, layout: ParameterLayout) -> list[str]:
        return [
            "{}:{}".format(*layout.entries[c]) for c in self.base_columns
        ]


def base_reduction(model: RobotModel, sample_count: int, seed: int,
                   drop_excluded: bool = False, rank_rtol: float = 1e-10) -> BaseReduction:
    """Find the identifiable column set from randomly sampled states.

    Stacks the regressor over ``sample_count`` random in-limit states, runs
    column-pivoted QR, keeps pivots with |R_ii| above rank_rtol times the
    largest, and folds the remaining columns in so the reduced regressor
    reproduces full-model torques exactly.
    """
    layout = parameter_layout(model)
    P = layout.size
    if sample_count < 2 * P:
        raise ValueError(f"sample_count must be at least {2 * P} (2x parameter count)")
    rng = np.random.default_rng(seed)
    q_m, dq_m, ddq_m = sample_states(model, sample_count, rng)
    W = stack_regressor(model, q_m, dq_m, ddq_m)
    if drop_excluded:
        dropped = {
            j.name for j in model.joints if j.exclude_from_trajectory_objective
        }
        columns = np.array(
            [i for i, (jn, _) in enumerate(layout.entries) if jn not in dropped],
            dtype=int,
        )
        W = W[:, columns]
    else:
        columns = np.arange(P)

    R, perm = scipy.linalg.qr(W, mode="r", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = rank_rtol * diag.max()
    below = np.nonzero(diag <= tol)[0]
    b = int(below[0]) if below.size else len(diag)
    independent = perm[:b]
    dependent = perm[b:]
    K_d = scipy.linalg.solve_triangular(R[:b, :b], R[:b, b:])
    return BaseReduction(
        parameter_count=P,
        columns=columns,
        independent=np.asarray(independent, dtype=int),
        dependent=np.asarray(dependent, dtype=int),
        K_d=K_d,
        diagonal=diag,
        tolerance=float(tol),
    )
