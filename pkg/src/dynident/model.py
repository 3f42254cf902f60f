"""Robot model configuration.

A model file is JSON (``schema: 1``) describing the joint tree, the affine
coupling between motor and joint coordinates, friction/inertia/spring flags,
springs, cable feedforward polynomials, joint limits, workspace boxes and
per-link centre-of-mass hulls.  Angles may be written as ``"<value> deg"``
anywhere a number is expected; they are converted to radians at load time and
everything downstream is SI.

Coordinate references used in ``coordinate`` terms and in limit keys:

* ``qm<i>``  - motor coordinate i (1-based),
* ``qd<i>``  - drive coordinate i, defined by the coupling blocks
  (identity rows for motors not covered by any block),
* any joint name - that joint's own coordinate.

Each joint's coordinate is an affine function of the motor coordinates; the
stacked rows form the constant matrix ``E`` with offset ``e0`` so that
``q_c = E @ q_m + e0``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelError",
    "ModelParseError",
    "ModelValidationError",
    "JointSpec",
    "SpringSpec",
    "CableSpec",
    "JointLimit",
    "Box",
    "CouplingBlock",
    "CouplingMap",
    "CouplingReport",
    "RobotModel",
    "LimitRow",
    "model_from_dict",
    "load_model",
    "save_model",
    "validate_coupling",
    "DEFAULT_RELAXED_LENGTH",
]

# Relaxed length of the balancing extension spring, metres.
DEFAULT_RELAXED_LENGTH = 0.0613

_KINDS = ("revolute", "prismatic", "fixed")
_KIND_CODE = {"revolute": 0, "prismatic": 1, "fixed": 2}


class ModelError(Exception):
    """Base class for configuration problems."""


class ModelParseError(ModelError):
    """Raised when a model file cannot be read or decoded."""


class ModelValidationError(ModelError):
    """Raised when a parsed model violates a structural requirement."""


def _parse_scalar(value, where: str) -> float:
    """Parse a number, accepting strings with an explicit deg/rad suffix."""
    if isinstance(value, bool):
        raise ModelValidationError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = re.fullmatch(r"\s*([-+]?[0-9.eE+-]+)\s*(deg|rad)?\s*", value)
        if m:
            try:
                num = float(m.group(1))
            except ValueError:
                raise ModelValidationError(f"{where}: cannot parse {value!r}") from None
            return math.radians(num) if m.group(2) == "deg" else num
    raise ModelValidationError(f"{where}: cannot parse {value!r}")


def _parse_dh_slot(value, where: str) -> tuple[bool, float]:
    """Parse a DH entry. Returns (depends_on_coordinate, constant_part)."""
    if isinstance(value, str):
        s = value.strip()
        if s == "coord":
            return True, 0.0
        m = re.fullmatch(r"coord\s*([+-])\s*(.+)", s)
        if m:
            offset = _parse_scalar(m.group(2), where)
            return True, offset if m.group(1) == "+" else -offset
    return False, _parse_scalar(value, where)


def _fmt(value: float) -> float | str:
    return float(value)


@dataclass(frozen=True)
class JointSpec:
    """One row of the joint table: geometry, coordinate map and effect flags.

    ``d`` and ``theta`` hold the constant part of the respective DH slot; the
    joint's coordinate is added to ``theta`` for revolute joints and to ``d``
    for prismatic ones.
    """

    name: str
    kind: str
    predecessor: str
    a: float
    alpha: float
    d: float
    theta: float
    coord_terms: tuple[tuple[str, float], ...]
    link_inertia: bool = False
    motor_inertia: bool = False
    friction: bool = False
    spring: bool = False
    motor: int | None = None
    exclude_from_trajectory_objective: bool = False

    @property
    def geometric_only(self) -> bool:
        return not (self.link_inertia or self.motor_inertia or self.friction or self.spring)


@dataclass(frozen=True)
class SpringSpec:
    """A spring acting on a single joint coordinate.

    Extension springs use the anchor geometry (h_s, r_s, q_o, relaxed length
    l_r); torsional springs deflect linearly with the joint coordinate.
    """

    kind: str
    joint: str
    h_s: float = 0.0
    r_s: float = 0.0
    q_o: float = 0.0
    l_r: float = DEFAULT_RELAXED_LENGTH


@dataclass(frozen=True)
class CableSpec:
    """Feedforward cable torque: polynomial in the joint coordinate.

    Coefficients are ascending powers; the torque applies at the joint's
    motor row and is not part of the identified parameter vector.
    """

    joint: str
    degree: int
    coefficients: tuple[float, ...]


@dataclass(frozen=True)
class JointLimit:
    q_min: float
    q_max: float
    dq_min: float
    dq_max: float


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray


@dataclass(frozen=True)
class CouplingBlock:
    name: str
    motors: tuple[int, ...]
    driven: tuple[int, ...]
    matrix: np.ndarray


@dataclass(frozen=True)
class LimitRow:
    """A joint limit resolved to an affine row over motor coordinates."""

    name: str
    row: np.ndarray
    offset: float
    limit: JointLimit


@dataclass(frozen=True)
class CouplingReport:
    block_condition: dict[str, float]
    basis_condition: float
    ok: bool
    messages: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class CouplingMap:
    """Constant affine map from motor to complete joint coordinates."""

    blocks: tuple[CouplingBlock, ...]
    E: np.ndarray
    e0: np.ndarray
    basis: tuple[str, ...]
    basis_indices: np.ndarray
    drive_rows: np.ndarray
    drive_offsets: np.ndarray


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Immutable robot description with precomputed kinematic tables."""

    name: str
    schema: int
    motor_count: int
    joints: tuple[JointSpec, ...]
    coupling: CouplingMap
    springs: tuple[SpringSpec, ...]
    cables: tuple[CableSpec, ...]
    gravity: np.ndarray
    joint_limits: dict[str, JointLimit]
    workspace: dict[str, Box]
    com_hulls: dict[str, Box]
    # Derived tables, filled in __post_init__.
    joint_index: dict[str, int] = field(default_factory=dict)
    kin_kind: np.ndarray = field(default=None)
    kin_parent: np.ndarray = field(default=None)
    kin_a: np.ndarray = field(default=None)
    kin_alpha: np.ndarray = field(default=None)
    kin_d: np.ndarray = field(default=None)
    kin_theta: np.ndarray = field(default=None)
    ancestor_chain: tuple[tuple[int, ...], ...] = field(default=None)

    def __post_init__(self):
        index = {j.name: k for k, j in enumerate(self.joints)}
        n = len(self.joints)
        kind = np.array([_KIND_CODE[j.kind] for j in self.joints], dtype=np.int8)
        parent = np.array(
            [index[j.predecessor] if j.predecessor != "base" else -1 for j in self.joints],
            dtype=int,
        )
        chains = []
        for k in range(n):
            chain = []
            i = k
            while i >= 0:
                chain.append(i)
                i = parent[i]
            chains.append(tuple(reversed(chain)))
        object.__setattr__(self, "joint_index", index)
        object.__setattr__(self, "kin_kind", kind)
        object.__setattr__(self, "kin_parent", parent)
        object.__setattr__(self, "kin_a", np.array([j.a for j in self.joints]))
        object.__setattr__(self, "kin_alpha", np.array([j.alpha for j in self.joints]))
        object.__setattr__(self, "kin_d", np.array([j.d for j in self.joints]))
        object.__setattr__(self, "kin_theta", np.array([j.theta for j in self.joints]))
        object.__setattr__(self, "ancestor_chain", tuple(chains))

    # -- coordinate rows ---------------------------------------------------

    @property
    def E(self) -> np.ndarray:
        return self.coupling.E

    @property
    def e0(self) -> np.ndarray:
        return self.coupling.e0

    def coordinate_row(self, ref: str) -> tuple[np.ndarray, float]:
        """Affine row (over motor coordinates) for a coordinate reference."""
        return _resolve_ref(
            ref,
            self.motor_count,
            self.coupling.drive_rows,
            self.coupling.drive_offsets,
            {name: (self.E[i], self.e0[i]) for name, i in self.joint_index.items()},
        )

    def limit_rows(self) -> tuple[LimitRow, ...]:
        out = []
        for name in sorted(self.joint_limits):
            row, offset = self.coordinate_row(name)
            out.append(LimitRow(name, row, offset, self.joint_limits[name]))
        return tuple(out)

    def basis_limits(self) -> dict[str, JointLimit]:
        """Position/velocity box per basis joint, matched by coordinate row.

        A table may bound a drive coordinate instead of the joint itself
        (same row, different name); row matching accepts either spelling.
        """
        rows = self.limit_rows()
        out: dict[str, JointLimit] = {}
        for name in self.coupling.basis:
            target = self.E[self.joint_index[name]]
            hit = None
            for lr in rows:
                if np.allclose(lr.row, target, rtol=1e-12, atol=1e-15):
                    hit = lr.limit
                    break
            if hit is None:
                raise ModelValidationError(f"no joint limit covers basis joint {name!r}")
            out[name] = hit
        return out

    def workspace_box(self, joint_name: str) -> Box | None:
        return self.workspace.get(joint_name, self.workspace.get("default"))

    def com_hull(self, joint_name: str) -> Box:
        box = self.com_hulls.get(joint_name, self.com_hulls.get("default"))
        if box is None:
            raise ModelValidationError(f"no COM hull for link {joint_name!r}")
        return box

    # -- canonical form ----------------------------------------------------

    def canonical(self) -> dict:
        """Plain-dict form with all units normalised; stable across round trips."""
        joints = []
        for j in self.joints:
            dh: dict[str, float | str] = {"a": _fmt(j.a), "alpha": _fmt(j.alpha)}
            if j.kind == "prismatic":
                dh["d"] = _coord_slot(j.d)
                dh["theta"] = _fmt(j.theta)
            elif j.kind == "revolute":
                dh["d"] = _fmt(j.d)
                dh["theta"] = _coord_slot(j.theta)
            else:
                dh["d"] = _fmt(j.d)
                dh["theta"] = _fmt(j.theta)
            entry = {
                "name": j.name,
                "kind": j.kind,
                "predecessor": j.predecessor,
                "dh": dh,
                "coordinate": {ref: _fmt(c) for ref, c in j.coord_terms},
                "flags": {
                    "link_inertia": j.link_inertia,
                    "motor_inertia": j.motor_inertia,
                    "friction": j.friction,
                    "spring": j.spring,
                },
            }
            if j.motor is not None:
                entry["motor"] = j.motor
            if j.exclude_from_trajectory_objective:
                entry["exclude_from_trajectory_objective"] = True
            joints.append(entry)
        out = {
            "schema": self.schema,
            "name": self.name,
            "motor_count": self.motor_count,
            "gravity": [float(g) for g in self.gravity],
            "basis": list(self.coupling.basis),
            "coupling": {
                "blocks": [
                    {
                        "name": b.name,
                        "motors": list(b.motors),
                        "driven": list(b.driven),
                        "matrix": [[float(x) for x in row] for row in b.matrix],
                    }
                    for b in self.coupling.blocks
                ],
                "offsets": {
                    f"qd{i + 1}": float(v)
                    for i, v in enumerate(self.coupling.drive_offsets)
                    if v != 0.0
                },
            },
            "joints": joints,
            "springs": [
                {
                    "kind": s.kind,
                    "joint": s.joint,
                    **(
                        {"h_s": float(s.h_s), "r_s": float(s.r_s), "q_o": float(s.q_o), "l_r": float(s.l_r)}
                        if s.kind == "extension"
                        else {}
                    ),
                }
                for s in self.springs
            ],
            "cables": [
                {"joint": c.joint, "degree": c.degree, "coefficients": [float(x) for x in c.coefficients]}
                for c in self.cables
            ],
            "joint_limits": {
                name: {
                    "q_min": float(l.q_min),
                    "q_max": float(l.q_max),
                    "dq_min": float(l.dq_min),
                    "dq_max": float(l.dq_max),
                }
                for name, l in sorted(self.joint_limits.items())
            },
            "workspace": {
                name: {"lower": [float(x) for x in b.lower], "upper": [float(x) for x in b.upper]}
                for name, b in sorted(self.workspace.items())
            },
            "com_hulls": {
                name: {"lower": [float(x) for x in b.lower], "upper": [float(x) for x in b.upper]}
                for name, b in sorted(self.com_hulls.items())
            },
        }
        return out

    def __eq__(self, other):
        if not isinstance(other, RobotModel):
            return NotImplemented
        return self.canonical() == other.canonical()


def _coord_slot(offset: float) -> str:
    if offset == 0.0:
        return "coord"
    sign = "+" if offset > 0 else "-"
    return f"coord {sign} {abs(offset)!r}"


_REF_RE = re.compile(r"(qm|qd)([0-9]+)")


def _resolve_ref(ref, n_m, drive_rows, drive_offsets, joint_rows):
    m = _REF_RE.fullmatch(ref)
    if m:
        i = int(m.group(2)) - 1
        if not 0 <= i < n_m:
            raise ModelValidationError(f"coordinate reference {ref!r} out of range")
        if m.group(1) == "qm":
            row = np.zeros(n_m)
            row[i] = 1.0
            return row, 0.0
        return drive_rows[i].copy(), float(drive_offsets[i])
    if ref in joint_rows:
        row, off = joint_rows[ref]
        return row.copy(), float(off)
    raise ModelValidationError(f"unknown coordinate reference {ref!r}")


def _parse_box(raw, where: str) -> Box:
    try:
        lower = np.array([_parse_scalar(v, where) for v in raw["lower"]], dtype=float)
        upper = np.array([_parse_scalar(v, where) for v in raw["upper"]], dtype=float)
    except (KeyError, TypeError):
        raise ModelValidationError(f"{where}: expected lower/upper arrays") from None
    if lower.shape != (3,) or upper.shape != (3,):
        raise ModelValidationError(f"{where}: boxes are 3-vectors")
    if np.any(lower >= upper):
        raise ModelValidationError(f"{where}: lower must be strictly below upper")
    return Box(lower, upper)


def model_from_dict(raw: dict) -> RobotModel:
    """Build and validate a RobotModel from a parsed configuration dict."""
    if not isinstance(raw, dict):
        raise ModelValidationError("model configuration must be a JSON object")
    schema = raw.get("schema")
    if schema != 1:
        raise ModelValidationError(f"unsupported schema {schema!r} (expected 1)")
    name = raw.get("name", "unnamed")
    try:
        motor_count = int(raw["motor_count"])
    except (KeyError, TypeError, ValueError):
        raise ModelValidationError("motor_count missing or not an integer") from None
    if motor_count < 1:
        raise ModelValidationError("motor_count must be positive")

    gravity = np.array([_parse_scalar(v, "gravity") for v in raw.get("gravity", [0, 0, -9.81])])
    if gravity.shape != (3,):
        raise ModelValidationError("gravity must be a 3-vector")

    # Drive-coordinate rows from coupling blocks.
    coupling_raw = raw.get("coupling", {})
    drive_rows = np.eye(motor_count)
    blocks = []
    for braw in coupling_raw.get("blocks", []):
        bname = braw.get("name", f"block{len(blocks)}")
        motors = tuple(int(i) for i in braw["motors"])
        driven = tuple(int(i) for i in braw["driven"])
        matrix = np.array(braw["matrix"], dtype=float)
        if matrix.shape != (len(driven), len(motors)):
            raise ModelValidationError(
                f"coupling block {bname!r}: matrix shape {matrix.shape} does not match indices"
            )
        for idx in motors + driven:
            if not 1 <= idx <= motor_count:
                raise ModelValidationError(f"coupling block {bname!r}: index {idx} out of range")
        for local, d in enumerate(driven):
            drive_rows[d - 1] = 0.0
            for j, mcol in enumerate(motors):
                drive_rows[d - 1, mcol - 1] = matrix[local, j]
        blocks.append(CouplingBlock(bname, motors, driven, matrix))
    drive_offsets = np.zeros(motor_count)
    for key, val in coupling_raw.get("offsets", {}).items():
        m = _REF_RE.fullmatch(key)
        if not m or m.group(1) != "qd":
            raise ModelValidationError(f"coupling offset key {key!r} must be qd<i>")
        drive_offsets[int(m.group(2)) - 1] = _parse_scalar(val, f"coupling offset {key}")

    # Joints, parents-first, coordinate rows resolved as we go.
    joints_raw = raw.get("joints", [])
    if not joints_raw:
        raise ModelValidationError("model has no joints")
    joints: list[JointSpec] = []
    joint_rows: dict[str, tuple[np.ndarray, float]] = {}
    rows = []
    offs = []
    seen = set()
    for jraw in joints_raw:
        jname = jraw.get("name")
        if not jname or not isinstance(jname, str):
            raise ModelValidationError("every joint needs a non-empty name")
        if jname in seen:
            raise ModelValidationError(f"duplicate joint name {jname!r}")
        kind = jraw.get("kind")
        if kind not in _KINDS:
            raise ModelValidationError(f"joint {jname!r}: kind must be one of {_KINDS}")
        pred = jraw.get("predecessor", "base")
        if pred != "base" and pred not in seen:
            raise ModelValidationError(
                f"joint {jname!r}: predecessor {pred!r} must be listed earlier (parents-first)"
            )
        dh = jraw.get("dh", {})
        where = f"joint {jname!r} dh"
        a = _parse_scalar(dh.get("a", 0.0), where)
        alpha = _parse_scalar(dh.get("alpha", 0.0), where)
        d_dep, d_const = _parse_dh_slot(dh.get("d", 0.0), where)
        th_dep, th_const = _parse_dh_slot(dh.get("theta", 0.0), where)
        if kind == "revolute" and (d_dep or not th_dep):
            raise ModelValidationError(f"joint {jname!r}: revolute joints vary theta only")
        if kind == "prismatic" and (th_dep or not d_dep):
            raise ModelValidationError(f"joint {jname!r}: prismatic joints vary d only")
        if kind == "fixed" and (d_dep or th_dep):
            raise ModelValidationError(f"joint {jname!r}: fixed joints take constant dh entries")

        terms_raw = jraw.get("coordinate", {})
        if kind == "fixed" and terms_raw:
            raise ModelValidationError(f"joint {jname!r}: fixed joints carry no coordinate terms")
        row = np.zeros(motor_count)
        off = 0.0
        terms = []
        for ref, coeff in terms_raw.items():
            coeff = _parse_scalar(coeff, f"joint {jname!r} coordinate")
            rref, roff = _resolve_ref(ref, motor_count, drive_rows, drive_offsets, joint_rows)
            row += coeff * rref
            off += coeff * roff
            terms.append((ref, coeff))

        flags = jraw.get("flags", {})
        unknown = set(flags) - {"link_inertia", "motor_inertia", "friction", "spring"}
        if unknown:
            raise ModelValidationError(f"joint {jname!r}: unknown flags {sorted(unknown)}")
        motor = jraw.get("motor")
        if motor is not None:
            motor = int(motor)
            if not 1 <= motor <= motor_count:
                raise ModelValidationError(f"joint {jname!r}: motor {motor} out of range")
        spec = JointSpec(
            name=jname,
            kind=kind,
            predecessor=pred,
            a=a,
            alpha=alpha,
            d=d_const,
            theta=th_const,
            coord_terms=tuple(terms),
            link_inertia=bool(flags.get("link_inertia", False)),
            motor_inertia=bool(flags.get("motor_inertia", False)),
            friction=bool(flags.get("friction", False)),
            spring=bool(flags.get("spring", False)),
            motor=motor,
            exclude_from_trajectory_objective=bool(
                jraw.get("exclude_from_trajectory_objective", False)
            ),
        )
        if spec.motor_inertia and spec.motor is None:
            raise ModelValidationError(f"joint {jname!r}: motor inertia needs a motor index")
        joints.append(spec)
        joint_rows[jname] = (row, off)
        rows.append(row)
        offs.append(off)
        seen.add(jname)

    E = np.array(rows)
    e0 = np.array(offs)

    basis = tuple(raw.get("basis", []))
    if len(basis) != motor_count:
        raise ModelValidationError("basis must list one joint per motor")
    for b in basis:
        if b not in joint_rows:
            raise ModelValidationError(f"basis joint {b!r} not defined")
    joint_index = {j.name: k for k, j in enumerate(joints)}
    basis_indices = np.array([joint_index[b] for b in basis], dtype=int)

    coupling = CouplingMap(
        blocks=tuple(blocks),
        E=E,
        e0=e0,
        basis=basis,
        basis_indices=basis_indices,
        drive_rows=drive_rows,
        drive_offsets=drive_offsets,
    )

    springs = []
    for sraw in raw.get("springs", []):
        skind = sraw.get("kind")
        if skind not in ("extension", "torsional"):
            raise ModelValidationError(f"spring kind {skind!r} unknown")
        sjoint = sraw.get("joint")
        if sjoint not in joint_index:
            raise ModelValidationError(f"spring references unknown joint {sjoint!r}")
        if skind == "extension":
            h_s = _parse_scalar(sraw.get("h_s", 0.0), "spring h_s")
            r_s = _parse_scalar(sraw.get("r_s", 0.0), "spring r_s")
            q_o = _parse_scalar(sraw.get("q_o", 0.0), "spring q_o")
            l_r = _parse_scalar(sraw.get("l_r", DEFAULT_RELAXED_LENGTH), "spring l_r")
            if h_s <= 0 or r_s <= 0 or l_r <= 0:
                raise ModelValidationError(
                    f"extension spring on joint {sjoint!r}: h_s, r_s, l_r must be positive"
                )
            springs.append(SpringSpec("extension", sjoint, h_s, r_s, q_o, l_r))
        else:
            springs.append(SpringSpec("torsional", sjoint))
    spring_joints = [s.joint for s in springs]
    if len(spring_joints) != len(set(spring_joints)):
        raise ModelValidationError("multiple springs on one joint are not supported")
    for j in joints:
        if j.spring and j.name not in spring_joints:
            raise ModelValidationError(f"joint {j.name!r} is spring-flagged but has no spring entry")
    for sj in spring_joints:
        if not joints[joint_index[sj]].spring:
            raise ModelValidationError(f"spring on joint {sj!r} but the joint is not spring-flagged")

    cables = []
    for craw in raw.get("cables", []):
        cjoint = craw.get("joint")
        if cjoint not in joint_index:
            raise ModelValidationError(f"cable references unknown joint {cjoint!r}")
        degree = int(craw.get("degree", -1))
        coeffs = tuple(float(x) for x in craw.get("coefficients", []))
        if degree < 0:
            raise ModelValidationError(f"cable on joint {cjoint!r}: degree must be >= 0")
        if len(coeffs) != degree + 1:
            raise ModelValidationError(
                f"cable on joint {cjoint!r}: expected {degree + 1} coefficients, got {len(coeffs)}"
            )
        if joints[joint_index[cjoint]].motor is None:
            raise ModelValidationError(f"cable on joint {cjoint!r}: joint needs a motor index")
        cables.append(CableSpec(cjoint, degree, coeffs))

    limits = {}
    for lname, lraw in raw.get("joint_limits", {}).items():
        where = f"joint_limits[{lname!r}]"
        try:
            lim = JointLimit(
                q_min=_parse_scalar(lraw["q_min"], where),
                q_max=_parse_scalar(lraw["q_max"], where),
                dq_min=_parse_scalar(lraw["dq_min"], where),
                dq_max=_parse_scalar(lraw["dq_max"], where),
            )
        except KeyError as exc:
            raise ModelValidationError(f"{where}: missing {exc}") from None
        if lim.q_min >= lim.q_max or lim.dq_min >= lim.dq_max:
            raise ModelValidationError(f"{where}: min bounds must lie below max bounds")
        limits[lname] = lim

    workspace = {
        wname: _parse_box(wraw, f"workspace[{wname!r}]")
        for wname, wraw in raw.get("workspace", {}).items()
    }
    com_hulls = {
        hname: _parse_box(hraw, f"com_hulls[{hname!r}]")
        for hname, hraw in raw.get("com_hulls", {}).items()
    }

    model = RobotModel(
        name=name,
        schema=1,
        motor_count=motor_count,
        joints=tuple(joints),
        coupling=coupling,
        springs=tuple(springs),
        cables=tuple(cables),
        gravity=gravity,
        joint_limits=limits,
        workspace=workspace,
        com_hulls=com_hulls,
    )

    # Resolvability checks that need the finished model.
    for lname in limits:
        model.coordinate_row(lname)
    for wname in workspace:
        if wname != "default" and wname not in joint_index:
            raise ModelValidationError(f"workspace box for unknown joint {wname!r}")
    for hname in com_hulls:
        if hname != "default" and hname not in joint_index:
            raise ModelValidationError(f"COM hull for unknown joint {hname!r}")
    for j in joints:
        if j.link_inertia:
            model.com_hull(j.name)
    validate_coupling(model)
    return model


def load_model(path) -> RobotModel:
    """Read and validate a model configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ModelParseError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_dict(raw)


def save_model(model: RobotModel, path) -> None:
    """Write the canonical form; loading it back reproduces the model exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.canonical(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def validate_coupling(model: RobotModel) -> CouplingReport:
    """Check the motor-to-joint coordinate map.

    Verifies that every coupling block is invertible (raising
    ModelValidationError naming the first singular block), that the basis
    rows of E form an invertible square map, and reports condition numbers.
    """
    conds = {}
    messages = []
    for block in model.coupling.blocks:
        if block.matrix.shape[0] != block.matrix.shape[1]:
            raise ModelValidationError(f"coupling block {block.name!r} is not square")
        cond = float(np.linalg.cond(block.matrix))
        conds[block.name] = cond
        if not np.isfinite(cond) or cond > 1e12:
            raise ModelValidationError(f"coupling block {block.name!r} is singular")
        messages.append(f"block {block.name}: cond {cond:.6g}")
    basis_matrix = model.E[model.coupling.basis_indices]
    basis_cond = float(np.linalg.cond(basis_matrix))
    if not np.isfinite(basis_cond) or basis_cond > 1e12:
        raise ModelValidationError("basis rows of E are singular; basis cannot represent motion")
    messages.append(f"basis rows: cond {basis_cond:.6g}")
    if not np.all(np.isfinite(model.E)):
        raise ModelValidationError("E contains non-finite entries")
    return CouplingReport(
        block_condition=conds,
        basis_condition=basis_cond,
        ok=True,
        messages=tuple(messages),
    )
