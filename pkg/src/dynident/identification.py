"""Parameter estimation from processed torque logs.

Stacks the regressor over all samples with per-joint range weighting, then
solves either plain weighted least squares on the base parameters or a
convex program over the full standard parameters whose constraints keep
every link physically realizable (positive mass, positive-definite inertia
satisfying the triangle inequalities, center of mass inside a configured
hull, non-negative friction, motor inertia, and stiffness).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.linalg

from .model import CableSpec, RobotModel
from .regressor import (
    BaseReduction,
    LINK_SYMBOLS,
    ParameterLayout,
    ParameterVector,
    cable_torque,
    parameter_layout,
    regressor_batch,
)
from .signals import ProcessedLog

__all__ = [
    "IdentificationProblem",
    "IdentifiedParameters",
    "SolverFailure",
    "StandardLink",
    "stack_problem",
    "solve_ols_base",
    "solve_feasible",
    "recover_standard",
    "fit_cable_polynomial",
    "relative_prediction_error",
    "feasibility_margins",
    "write_parameters",
    "read_parameters",
]

PSD_MARGIN = 1e-9


class SolverFailure(RuntimeError):
    """The convex solver did not return a usable solution."""


@dataclass(frozen=True)
class IdentificationProblem:
    """Stacked weighted regression data.

    Rows of ``W`` and entries of ``omega`` interleave motors sample by
    sample; ``weights`` holds one inverse torque range per motor, applied to
    that motor's rows when solving.
    """

    W: np.ndarray
    omega: np.ndarray
    weights: np.ndarray
    sample_count: int

    @property
    def motor_count(self) -> int:
        return self.weights.shape[0]

    def row_weights(self) -> np.ndarray:
        return np.tile(self.weights, self.sample_count)


@dataclass(frozen=True)
class StandardLink:
    """Classic per-link constants: mass, COM, rotational inertia about COM."""

    mass: float
    com: np.ndarray | None
    inertia_com: np.ndarray | None


@dataclass(frozen=True)
class IdentifiedParameters:
    delta: ParameterVector
    standard: dict[str, StandardLink]
    residual: float
    margins: dict[str, float]
    solver: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def min_margin(self) -> float:
        return min(self.margins.values()) if self.margins else float("inf")


def stack_problem(model: RobotModel, logs) -> IdentificationProblem:
    """Stack regressor rows and cable-corrected torques from processed logs.

    Accepts one log or a sequence.  Raises when any motor's measured torque
    range is (numerically) zero, since its weight would blow up.
    """
    if isinstance(logs, ProcessedLog):
        logs = [logs]
    if not logs:
        raise ValueError("no logs given")
    blocks_W, blocks_tau = [], []
    for log in logs:
        H = regressor_batch(model, log.q_m, log.dq_m, log.ddq_m)
        tau = log.tau_m - cable_torque(model, log.q_m)
        blocks_W.append(H.reshape(-1, H.shape[-1]))
        blocks_tau.append(tau)
    tau_all = np.vstack(blocks_tau)
    spans = tau_all.max(axis=0) - tau_all.min(axis=0)
    for i, span in enumerate(spans):
        if span <= 1e-12:
            raise ValueError(f"motor {i + 1} torque range is zero; cannot weight")
    return IdentificationProblem(
        W=np.vstack(blocks_W),
        omega=tau_all.reshape(-1),
        weights=1.0 / spans,
        sample_count=tau_all.shape[0],
    )


def solve_ols_base(problem: IdentificationProblem,
                   reduction: BaseReduction) -> tuple[np.ndarray, float]:
    """Weighted least squares over base parameters.

    Returns (base estimate, weighted squared residual).  Raises on a rank
    deficient base regressor, which indicates under-excitation.
    """
    r = problem.row_weights()
    A = reduction.base_regressor(problem.W) * r[:, None]
    y = problem.omega * r
    est, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        raise SolverFailure(f"base regressor rank {rank} < {A.shape[1]}")
    resid = float(np.sum((A @ est - y) ** 2))
    return est, resid


def _pseudo_inertia_basis() -> np.ndarray:
    """Constant 4x4 matrices B_k with D(block) = sum_k block[k] * B_k.

    D's upper 3x3 is tr(L)/2*I - L (the second density moment), its border
    is the first moment l, and its corner is the mass; D >= 0 is exactly
    realizability of a mass distribution.
    """
    B = np.zeros((10, 4, 4))
    for k, (i, j) in enumerate(((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))):
        if i == j:
            B[k, 0, 0] = B[k, 1, 1] = B[k, 2, 2] = 0.5
            B[k, i, i] -= 1.0
        else:
            B[k, i, j] = B[k, j, i] = -1.0
    for k, i in enumerate((0, 1, 2), start=6):
        B[k, i, 3] = B[k, 3, i] = 1.0
    B[9, 3, 3] = 1.0
    return B


_PSEUDO_BASIS = _pseudo_inertia_basis()


def _pseudo_inertia(link_block: np.ndarray) -> np.ndarray:
    """Numeric 4x4 density-moment matrix for one barycentric block."""
    return np.einsum("k,kij->ij", np.asarray(link_block, dtype=float),
                     _PSEUDO_BASIS)


def feasibility_margins(model: RobotModel, delta: ParameterVector) -> dict[str, float]:
    """Margins of every physical-consistency constraint at ``delta``.

    Positive is feasible; keys name the link or joint and the constraint
    family so violations are reportable.
    """
    layout = delta.layout
    out: dict[str, float] = {}
    for joint in layout.inertial_joints:
        block = delta.link_block(joint)
        eig = np.linalg.eigvalsh(_pseudo_inertia(block))
        out[f"{joint}:pseudo_inertia"] = float(eig[0])
        lo, hi = model.com_hull(joint).lower, model.com_hull(joint).upper
        m, l = block[9], block[6:9]
        out[f"{joint}:com_lower"] = float(np.min(l - m * lo))
        out[f"{joint}:com_upper"] = float(np.min(m * hi - l))
    for joint, symbol in layout.entries:
        if symbol in ("Fv", "Fc", "Im", "Ks"):
            out[f"{joint}:{symbol}"] = float(delta.get(joint, symbol))
    return out


def solve_feasible(problem: IdentificationProblem, model: RobotModel,
                   psd_margin: float = PSD_MARGIN,
                   bounds: tuple[np.ndarray, np.ndarray] | None = None,
                   ) -> IdentifiedParameters:
    """Physically-feasible weighted least squares over all parameters.

    Compresses the weighted normal system by QR so the conic solver sees a
    square objective regardless of sample count, then constrains every
    link's pseudo-inertia matrix to be positive semidefinite (with a small
    interior shift), the weighted first moment to stay inside the COM hull,
    and scalar friction/inertia/stiffness terms to be non-negative.
    """
    layout = parameter_layout(model)
    P = layout.size
    if problem.W.shape[0] == 0:
        raise ValueError("empty problem: no rows to fit")
    if problem.W.shape[1] != P:
        raise ValueError("problem was stacked for a different model")
    r = problem.row_weights()
    A = problem.W * r[:, None]
    y = problem.omega * r
    # |A d - y|^2 = |R d - Q^T y|^2 + const
    Q, R = np.linalg.qr(A)
    rhs = Q.T @ y
    const = float(y @ y - rhs @ rhs)

    d = cp.Variable(P)
    objective = cp.Minimize(cp.sum_squares(R @ d - rhs))
    constraints = []
    for joint in layout.inertial_joints:
        cols = [layout.index[(joint, s)] for s in LINK_SYMBOLS]
        D = sum(d[c] * _PSEUDO_BASIS[k] for k, c in enumerate(cols))
        constraints.append(D >> psd_margin * np.eye(4))
        hull = model.com_hull(joint)
        m = d[cols[9]]
        l = cp.hstack([d[cols[6]], d[cols[7]], d[cols[8]]])
        constraints.append(m * hull.lower - l <= 0)
        constraints.append(l - m * hull.upper <= 0)
    for (joint, symbol), i in layout.index.items():
        if symbol in ("Fv", "Fc", "Im", "Ks"):
            constraints.append(d[i] >= 0)
    if bounds is not None:
        lo, hi = bounds
        finite = np.isfinite(lo)
        if np.any(finite):
            constraints.append(d[finite] >= lo[finite])
        finite = np.isfinite(hi)
        if np.any(finite):
            constraints.append(d[finite] <= hi[finite])

    prob = cp.Problem(objective, constraints)
    solver_used = ""
    for solver, opts in (("CLARABEL", {}),
                         ("SCS", {"eps": 1e-8, "max_iters": 100000})):
        try:
            prob.solve(solver=solver, **opts)
        except Exception:  # solver-specific failures: fall through to next
            continue
        if d.value is not None and prob.status in ("optimal", "optimal_inaccurate"):
            solver_used = solver
            break
    if d.value is None or not solver_used:
        raise SolverFailure(f"conic solve failed (status {prob.status!r})")

    delta = ParameterVector(layout, np.asarray(d.value, dtype=float))
    margins = feasibility_margins(model, delta)
    residual = float(np.sum((R @ delta.values - rhs) ** 2) + const)
    return IdentifiedParameters(
        delta=delta,
        standard=recover_standard(delta),
        residual=residual,
        margins=margins,
        solver=solver_used,
        extras={"status": prob.status, "objective_constant": const},
    )


def recover_standard(delta: ParameterVector,
                     m_floor: float = 1e-6) -> dict[str, StandardLink]:
    """Invert the barycentric blocks back to (mass, COM, inertia about COM).

    Links lighter than ``m_floor`` get mass only; dividing the first moment
    by a vanishing mass would be meaningless.
    """
    out: dict[str, StandardLink] = {}
    for joint in delta.layout.inertial_joints:
        block = delta.link_block(joint)
        L = np.array([
            [block[0], block[1], block[2]],
            [block[1], block[3], block[4]],
            [block[2], block[4], block[5]],
        ])
        l, m = block[6:9], float(block[9])
        if m < m_floor:
            out[joint] = StandardLink(m, None, None)
            continue
        r = l / m
        S = np.array([[0.0, -r[2], r[1]], [r[2], 0.0, -r[0]], [-r[1], r[0], 0.0]])
        out[joint] = StandardLink(m, r, L - m * (S.T @ S))
    return out


def fit_cable_polynomial(q_samples, tau_plus, tau_minus, joint: str,
                         degree: int = 7) -> CableSpec:
    """Fit the position-dependent cable torque from paired velocity sweeps.

    ``tau_plus``/``tau_minus`` are torques logged at the same positions
    moving at opposite constant speeds; averaging the two per-direction
    polynomial fits cancels the velocity-dependent friction, leaving cable
    torque plus the direction-independent offset.
    """
    q = np.asarray(q_samples, dtype=float)
    tp = np.asarray(tau_plus, dtype=float)
    tm = np.asarray(tau_minus, dtype=float)
    if q.shape != tp.shape or q.shape != tm.shape:
        raise ValueError("sample arrays must have equal shapes")
    if q.size < degree + 1:
        raise ValueError(f"{q.size} samples cannot determine degree {degree}")
    p_plus = np.polynomial.polynomial.polyfit(q, tp, degree)
    p_minus = np.polynomial.polynomial.polyfit(q, tm, degree)
    coeffs = 0.5 * (p_plus + p_minus)
    return CableSpec(joint=joint, degree=degree, coefficients=tuple(coeffs))


def relative_prediction_error(model: RobotModel, delta: ParameterVector,
                              log: ProcessedLog) -> tuple[dict[int, float], float]:
    """Per-motor and overall relative RMS torque error, in percent.

    Compares measured torques against the model prediction (including the
    cable feedforward) on an independent processed log.
    """
    H = regressor_batch(model, log.q_m, log.dq_m, log.ddq_m)
    pred = H @ delta.values + cable_torque(model, log.q_m)
    per_joint: dict[int, float] = {}
    for i in range(log.motor_count):
        norm = float(np.linalg.norm(log.tau_m[:, i]))
        if norm == 0.0:
            raise ValueError(f"motor {i + 1} torque channel is identically zero")
        err = float(np.linalg.norm(log.tau_m[:, i] - pred[:, i]))
        per_joint[i + 1] = 100.0 * err / norm
    overall = 100.0 * float(np.linalg.norm(log.tau_m - pred)
                            / np.linalg.norm(log.tau_m))
    return per_joint, overall


# -- parameter files ----------------------------------------------------------


def write_parameters(result: IdentifiedParameters, path) -> None:
    layout = result.delta.layout
    values = {f"{j}:{s}": float(result.delta.values[i])
              for (j, s), i in layout.index.items()}
    standard = {}
    for joint, link in result.standard.items():
        entry: dict = {"mass": link.mass}
        if link.com is not None:
            entry["com"] = [float(v) for v in link.com]
            entry["inertia_com"] = [[float(v) for v in row]
                                    for row in link.inertia_com]
        standard[joint] = entry
    payload = {
        "schema": 1,
        "values": values,
        "standard": standard,
        "residual": result.residual,
        "margins": result.margins,
        "solver": result.solver,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_parameters(model: RobotModel, path) -> ParameterVector:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != 1:
        raise ValueError(f"unsupported parameter schema {payload.get('schema')!r}")
    layout = parameter_layout(model)
    vec = ParameterVector.zeros(layout)
    values = payload["values"]
    for (joint, symbol), i in layout.index.items():
        key = f"{joint}:{symbol}"
        if key not in values:
            raise ValueError(f"parameter file missing {key}")
        vec.values[i] = float(values[key])
    return vec
