"""Forward kinematics over a spanning tree of modified-DH frames.

All joint frames follow the proximal DH convention: the transform from a
parent frame to a child frame is the composition rotate-x(alpha),
translate-x(a), rotate-z(theta), translate-z(d).  Revolute joints add their
scalar coordinate to theta, prismatic joints add it to d, fixed joints use
the stored constants only.

Coordinates come in two families: the actuated motor coordinates q_m and the
complete per-joint coordinates q_c.  The two are related by a constant affine
map q_c = E @ q_m + e0 stored on the model, so velocities and accelerations
map through E alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FramePose",
    "CoordinateState",
    "skew",
    "dh_transform",
    "expand_coordinates",
    "frame_positions",
    "tree_motion",
]

KIND_REVOLUTE = 0
KIND_PRISMATIC = 1
KIND_FIXED = 2


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == np.cross(v, u)."""
    v = np.asarray(v, dtype=float)
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class FramePose:
    """Rigid transform: rotation matrix plus translation vector."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "FramePose":
        return FramePose(np.eye(3), np.zeros(3))

    def compose(self, other: "FramePose") -> "FramePose":
        """self applied first in the world, i.e. world_T_new = self @ other."""
        return FramePose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "FramePose":
        rt = self.rotation.T
        return FramePose(rt, -rt @ self.translation)

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CoordinateState:
    """Motor coordinates together with their expansion to every joint."""

    q_m: np.ndarray
    q_c: np.ndarray
    dq_m: np.ndarray | None = None
    dq_c: np.ndarray | None = None
    ddq_m: np.ndarray | None = None
    ddq_c: np.ndarray | None = None


def dh_transform(a: float, alpha: float, d: float, theta: float) -> FramePose:
    """Parent-to-child transform for one modified-DH row.

    Composition order is rotate-x(alpha), translate-x(a), rotate-z(theta),
    translate-z(d).
    """
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    rotation = np.array(
        [
            [ct, -st, 0.0],
            [ca * st, ca * ct, -sa],
            [sa * st, sa * ct, ca],
        ]
    )
    translation = np.array([a, -d * sa, d * ca])
    return FramePose(rotation, translation)


def expand_coordinates(model, q_m, dq_m=None, ddq_m=None) -> CoordinateState:
    """Expand motor coordinates to the complete per-joint coordinate vector.

    Positions map affinely (q_c = E q_m + e0); velocities and accelerations
    map through E only.  Arrays may carry a leading batch axis.
    """
    q_m = np.asarray(q_m, dtype=float)
    if q_m.shape[-1] != model.motor_count:
        raise ValueError(
            f"expected {model.motor_count} motor coordinates, got {q_m.shape[-1]}"
        )
    q_c = q_m @ model.E.T + model.e0

    def lin(x):
        if x is None:
            return None, None
        x = np.asarray(x, dtype=float)
        if x.shape != q_m.shape:
            raise ValueError("derivative arrays must match q_m shape")
        return x, x @ model.E.T

    dq_m, dq_c = lin(dq_m)
    ddq_m, ddq_c = lin(ddq_m)
    return CoordinateState(q_m=q_m, q_c=q_c, dq_m=dq_m, dq_c=dq_c, ddq_m=ddq_m, ddq_c=ddq_c)


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the last axis of (B, 3) arrays; faster than np.cross."""
    out = np.empty_like(a)
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def _local_frames(model, q_c: np.ndarray):
    """Batched parent-to-child rotations and translations for every joint.

    q_c has shape (B, n_joints).  Returns (rot (n,B,3,3), trans (n,B,3)).
    """
    B = q_c.shape[0]
    n = len(model.joints)
    rot = np.empty((n, B, 3, 3))
    trans = np.empty((n, B, 3))
    for k in range(n):
        kind = model.kin_kind[k]
        theta = model.kin_theta[k]
        d = model.kin_d[k]
        if kind == KIND_REVOLUTE:
            theta = theta + q_c[:, k]
        else:
            theta = np.full(B, theta)
        if kind == KIND_PRISMATIC:
            d = d + q_c[:, k]
        else:
            d = np.full(B, d)
        ca, sa = np.cos(model.kin_alpha[k]), np.sin(model.kin_alpha[k])
        ct, st = np.cos(theta), np.sin(theta)
        r = rot[k]
        r[:, 0, 0] = ct
        r[:, 0, 1] = -st
        r[:, 0, 2] = 0.0
        r[:, 1, 0] = ca * st
        r[:, 1, 1] = ca * ct
        r[:, 1, 2] = -sa
        r[:, 2, 0] = sa * st
        r[:, 2, 1] = sa * ct
        r[:, 2, 2] = ca
        trans[k, :, 0] = model.kin_a[k]
        trans[k, :, 1] = -d * sa
        trans[k, :, 2] = d * ca
    return rot, trans


def tree_motion(model, q_c, dq_c=None, ddq_c=None, gravity: np.ndarray | None = None):
    """World-frame pose (and optionally motion) recursion over the joint tree.

    Args:
        model: a RobotModel; joints must be listed parents-first.
        q_c: complete coordinates, shape (B, n_joints).
        dq_c, ddq_c: optional matching velocity/acceleration arrays.
        gravity: when given, the base linear acceleration is seeded with
            -gravity so downstream accelerations include the gravity load.

    Returns:
        dict of arrays keyed R (B,n,3,3), p, z (B,n,3) and, when velocities
        are supplied, w, v, dw, a.
    """
    q_c = np.atleast_2d(np.asarray(q_c, dtype=float))
    B, n = q_c.shape
    if n != len(model.joints):
        raise ValueError(f"expected {len(model.joints)} joint coordinates, got {n}")
    with_motion = dq_c is not None
    if with_motion:
        dq_c = np.atleast_2d(np.asarray(dq_c, dtype=float))
        ddq_c = np.atleast_2d(np.asarray(ddq_c, dtype=float))
        if dq_c.shape != q_c.shape or ddq_c.shape != q_c.shape:
            raise ValueError("velocity/acceleration arrays must match q_c shape")

    rot, trans = _local_frames(model, q_c)
    R = np.empty((B, n, 3, 3))
    p = np.empty((B, n, 3))
    z = np.empty((B, n, 3))
    if with_motion:
        w = np.zeros((B, n, 3))
        v = np.zeros((B, n, 3))
        dw = np.zeros((B, n, 3))
        a = np.zeros((B, n, 3))
        a0 = -np.asarray(gravity, dtype=float) if gravity is not None else np.zeros(3)

    for k in range(n):
        parent = model.kin_parent[k]
        if parent < 0:
            Rp = np.broadcast_to(np.eye(3), (B, 3, 3))
            pp = np.zeros((B, 3))
            if with_motion:
                wp = np.zeros((B, 3))
                vp = np.zeros((B, 3))
                dwp = np.zeros((B, 3))
                ap = np.broadcast_to(a0, (B, 3))
        else:
            Rp = R[:, parent]
            pp = p[:, parent]
            if with_motion:
                wp, vp, dwp, ap = w[:, parent], v[:, parent], dw[:, parent], a[:, parent]

        Rk = Rp @ rot[k]
        r = np.einsum("bij,bj->bi", Rp, trans[k])
        R[:, k] = Rk
        p[:, k] = pp + r
        zk = Rk[:, :, 2]
        z[:, k] = zk

        if not with_motion:
            continue
        kind = model.kin_kind[k]
        wv = _cross3(wp, r)
        av = _cross3(dwp, r) + _cross3(wp, wv)
        if kind == KIND_REVOLUTE:
            dq = dq_c[:, k : k + 1]
            ddq = ddq_c[:, k : k + 1]
            w[:, k] = wp + zk * dq
            dw[:, k] = dwp + zk * ddq + _cross3(wp, zk * dq)
            v[:, k] = vp + wv
            a[:, k] = ap + av
        elif kind == KIND_PRISMATIC:
            dq = dq_c[:, k : k + 1]
            ddq = ddq_c[:, k : k + 1]
            w[:, k] = wp
            dw[:, k] = dwp
            v[:, k] = vp + wv + zk * dq
            a[:, k] = ap + av + zk * ddq + 2.0 * _cross3(wp, zk * dq)
        else:
            w[:, k] = wp
            dw[:, k] = dwp
            v[:, k] = vp + wv
            a[:, k] = ap + av

    out = {"R": R, "p": p, "z": z}
    if with_motion:
        out.update(w=w, v=v, dw=dw, a=a)
    return out


def frame_positions(model, q_c) -> tuple[FramePose, ...]:
    """World pose of every joint frame for a single complete-coordinate vector."""
    q_c = np.asarray(q_c, dtype=float)
    if q_c.ndim != 1:
        raise ValueError("frame_positions expects a single coordinate vector")
    frames = tree_motion(model, q_c[None, :])
    return tuple(
        FramePose(frames["R"][0, k].copy(), frames["p"][0, k].copy())
        for k in range(len(model.joints))
    )
