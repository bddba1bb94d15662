"""URDF subset parser producing a validated serial-chain robot model.

Supported elements: `robot`, `link/inertial` (mass, com origin with rpy,
inertia tensor), `joint` of type revolute/prismatic/fixed with `origin`,
`axis`, `limit`, `parent`, `child`. Everything else (visual, collision,
mesh, transmission, ...) is ignored. See docs/urdf-subset.md.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BranchingChain,
    LimitViolation,
    MalformedXml,
    MissingInertial,
    NotADescendant,
    UnknownLink,
    UnsupportedJointType,
)
from .geometry import Pose, rpy_to_matrix

REVOLUTE, PRISMATIC, FIXED = "revolute", "prismatic", "fixed"
_JTYPE_CODE = {REVOLUTE: 0, PRISMATIC: 1, FIXED: 2}

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class InertiaSpec:
    """Mass (kg), center of mass (m, link frame), inertia about com (kg m^2)."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float).reshape(3, 3))

    def validate(self, link_name, dynamic):
        if dynamic and self.mass <= 0.0:
            raise MissingInertial(f"link {link_name!r} needs positive mass, got {self.mass}")
        if self.mass < 0.0:
            raise MissingInertial(f"link {link_name!r} has negative mass")
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-12, rtol=0.0):
            raise MissingInertial(f"link {link_name!r} inertia tensor is not symmetric")
        moments = np.sort(np.linalg.eigvalsh(self.inertia))
        if moments[0] < -1e-12:
            raise MissingInertial(f"link {link_name!r} inertia has a negative principal moment")
        if moments[0] + moments[1] < moments[2] - 1e-9:
            raise MissingInertial(
                f"link {link_name!r} principal moments violate the triangle inequality")

    @classmethod
    def zero(cls):
        return cls(0.0, np.zeros(3), np.zeros((3, 3)))


@dataclass(frozen=True)
class JointSpec:
    """One joint of the chain, with its frame placement and limits."""

    name: str
    kind: str
    parent: str
    child: str
    axis: np.ndarray
    origin: Pose
    limit_lower: float | None = None
    limit_upper: float | None = None
    effort_limit: float | None = None
    velocity_limit: float | None = None
    # rpy the origin rotation was built from, kept so re-serialization is exact
    origin_rpy: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float).reshape(3))

    @property
    def is_actuated(self):
        return self.kind != FIXED

    def validate(self):
        if self.kind not in _JTYPE_CODE:
            raise UnsupportedJointType(f"joint {self.name!r} has type {self.kind!r}")
        norm = np.linalg.norm(self.axis)
        if self.kind != FIXED:
            if norm < 1e-12:
                raise MalformedXml(f"joint {self.name!r} has a zero axis")
            if abs(norm - 1.0) > 1e-9:
                raise MalformedXml(f"joint {self.name!r} axis is not normalized")
            if self.limit_lower is None or self.limit_upper is None:
                raise LimitViolation(f"joint {self.name!r} lacks position limits")
            if self.limit_lower >= self.limit_upper:
                raise LimitViolation(
                    f"joint {self.name!r}: lower limit {self.limit_lower} >= upper "
                    f"limit {self.limit_upper}")
            if self.effort_limit is None or self.effort_limit <= 0.0:
                raise LimitViolation(f"joint {self.name!r} needs a positive effort limit")
            if self.velocity_limit is None or self.velocity_limit <= 0.0:
                raise LimitViolation(f"joint {self.name!r} needs a positive velocity limit")


@dataclass(frozen=True, eq=False)
class RobotModel:
    """Validated serial kinematic chain from base_link to tip_link.

    Immutable after construction; the packed per-joint arrays consumed by the
    dynamics kernels are precomputed here so they are never rebuilt inside a
    control loop.
    """

    links: tuple  # ordered (name, InertiaSpec) pairs, base first
    joints: tuple  # ordered JointSpec, base to tip
    base_link: str
    tip_link: str
    gravity: np.ndarray = field(default_factory=lambda: DEFAULT_GRAVITY.copy())

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        self._validate()
        self._pack()

    # -- construction helpers -------------------------------------------------

    def _validate(self):
        link_names = [name for name, _ in self.links]
        if len(set(link_names)) != len(link_names):
            raise MalformedXml("duplicate link names")
        if self.links[0][0] != self.base_link or self.links[-1][0] != self.tip_link:
            raise MalformedXml("links are not ordered base to tip")
        for i, joint in enumerate(self.joints):
            joint.validate()
            if joint.parent != link_names[i] or joint.child != link_names[i + 1]:
                raise MalformedXml(f"joint {joint.name!r} breaks the serial chain ordering")
        inertials = dict(self.links)
        for joint in self.joints:
            dynamic = joint.is_actuated
            inertials[joint.child].validate(joint.child, dynamic)

    def _pack(self):
        n = len(self.joints)
        jtype = np.empty(n, dtype=np.int64)
        axes = np.zeros((n, 3))
        origin_pos = np.zeros((n, 3))
        origin_rot = np.zeros((n, 3, 3))
        masses = np.zeros(n)
        coms = np.zeros((n, 3))
        inertias = np.zeros((n, 3, 3))
        dof_index = np.full(n, -1, dtype=np.int64)
        low, up, eff, vel = [], [], [], []
        inertials = dict(self.links)
        k = 0
        for i, joint in enumerate(self.joints):
            jtype[i] = _JTYPE_CODE[joint.kind]
            axes[i] = joint.axis
            origin_pos[i] = joint.origin.position
            origin_rot[i] = joint.origin.rotation
            spec = inertials[joint.child]
            masses[i] = spec.mass
            coms[i] = spec.com
            inertias[i] = spec.inertia
            if joint.is_actuated:
                dof_index[i] = k
                k += 1
                low.append(joint.limit_lower)
                up.append(joint.limit_upper)
                eff.append(joint.effort_limit)
                vel.append(joint.velocity_limit)
        lower, upper = np.array(low), np.array(up)
        effort, velocity = np.array(eff), np.array(vel)
        for name, value in [
            ("jtype", jtype), ("axes", axes), ("origin_pos", origin_pos),
            ("origin_rot", origin_rot), ("masses", masses), ("coms", coms),
            ("inertias", inertias), ("dof_index", dof_index),
            ("lower_limits", lower), ("upper_limits", upper),
            ("effort_limits", effort), ("velocity_limits", velocity),
        ]:
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "dof", int(k))

    # -- public API ------------------------------------------------------------

    @property
    def link_names(self):
        return [name for name, _ in self.links]

    def joint_names(self, actuated_only=True):
        return [j.name for j in self.joints if j.is_actuated or not actuated_only]

    def total_mass(self):
        return float(sum(spec.mass for _, spec in self.links))

    def with_gravity(self, gravity) -> "RobotModel":
        return RobotModel(self.links, self.joints, self.base_link, self.tip_link, gravity)

    def __eq__(self, other):
        if not isinstance(other, RobotModel):
            return NotImplemented
        if (self.base_link, self.tip_link) != (other.base_link, other.tip_link):
            return False
        if self.link_names != other.link_names:
            return False
        for (_, a), (_, b) in zip(self.links, other.links):
            if a.mass != b.mass or not np.array_equal(a.com, b.com) \
                    or not np.array_equal(a.inertia, b.inertia):
                return False
        for a, b in zip(self.joints, other.joints):
            if (a.name, a.kind, a.parent, a.child) != (b.name, b.kind, b.parent, b.child):
                return False
            if not np.array_equal(a.axis, b.axis):
                return False
            if not np.array_equal(a.origin.position, b.origin.position) \
                    or not np.array_equal(a.origin.rotation, b.origin.rotation):
                return False
            if (a.limit_lower, a.limit_upper, a.effort_limit, a.velocity_limit) != \
                    (b.limit_lower, b.limit_upper, b.effort_limit, b.velocity_limit):
                return False
        return True


def _parse_vector(text, default):
    if text is None:
        return np.array(default, dtype=float)
    parts = text.split()
    if len(parts) != 3:
        raise MalformedXml(f"expected 3 numbers, got {text!r}")
    return np.array([float(p) for p in parts])


def _parse_origin(element):
    if element is None:
        return Pose.identity()
    xyz = _parse_vector(element.get("xyz"), (0.0, 0.0, 0.0))
    rpy = _parse_vector(element.get("rpy"), (0.0, 0.0, 0.0))
    return Pose(xyz, rpy_to_matrix(*rpy))


def _parse_inertial(link_el, link_name):
    inertial = link_el.find("inertial")
    if inertial is None:
        return None
    mass_el = inertial.find("mass")
    inertia_el = inertial.find("inertia")
    if mass_el is None or inertia_el is None:
        raise MissingInertial(f"link {link_name!r} has an incomplete inertial block")
    mass = float(mass_el.get("value"))
    origin = _parse_origin(inertial.find("origin"))
    try:
        ixx, iyy, izz = (float(inertia_el.get(k)) for k in ("ixx", "iyy", "izz"))
        ixy = float(inertia_el.get("ixy", 0.0))
        ixz = float(inertia_el.get("ixz", 0.0))
        iyz = float(inertia_el.get("iyz", 0.0))
    except TypeError as exc:
        raise MissingInertial(f"link {link_name!r} inertia tensor is incomplete") from exc
    tensor = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    # inertial origin rpy rotates the tensor into the link frame
    R = origin.rotation
    return InertiaSpec(mass, origin.position, R @ tensor @ R.T)


def parse_urdf(text: str) -> RobotModel:
    """Parse a URDF document string into a validated RobotModel."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise MalformedXml(f"not well-formed XML: {exc}") from exc
    if root.tag != "robot":
        raise MalformedXml(f"root element is {root.tag!r}, expected 'robot'")

    inertials = {}
    for link_el in root.findall("link"):
        name = link_el.get("name")
        if name is None:
            raise MalformedXml("link without a name")
        if name in inertials:
            raise MalformedXml(f"duplicate link {name!r}")
        inertials[name] = _parse_inertial(link_el, name)

    joints = []
    for joint_el in root.findall("joint"):
        name = joint_el.get("name")
        kind = joint_el.get("type")
        if kind not in _JTYPE_CODE:
            raise UnsupportedJointType(f"joint {name!r} has unsupported type {kind!r}")
        parent_el, child_el = joint_el.find("parent"), joint_el.find("child")
        if parent_el is None or child_el is None:
            raise MalformedXml(f"joint {name!r} lacks parent or child")
        parent, child = parent_el.get("link"), child_el.get("link")
        for link in (parent, child):
            if link not in inertials:
                raise MalformedXml(f"joint {name!r} references unknown link {link!r}")
        axis = _parse_vector(
            joint_el.find("axis").get("xyz") if joint_el.find("axis") is not None else None,
            (1.0, 0.0, 0.0))
        norm = np.linalg.norm(axis)
        if kind != FIXED:
            if norm < 1e-12:
                raise MalformedXml(f"joint {name!r} has a zero axis")
            axis = axis / norm
        limit_el = joint_el.find("limit")
        lower = upper = effort = velocity = None
        if limit_el is not None:
            lower = float(limit_el.get("lower")) if limit_el.get("lower") is not None else None
            upper = float(limit_el.get("upper")) if limit_el.get("upper") is not None else None
            effort = float(limit_el.get("effort")) if limit_el.get("effort") is not None else None
            velocity = (float(limit_el.get("velocity"))
                        if limit_el.get("velocity") is not None else None)
        origin_el = joint_el.find("origin")
        rpy = tuple(_parse_vector(origin_el.get("rpy"), (0.0, 0.0, 0.0))) \
            if origin_el is not None else (0.0, 0.0, 0.0)
        joints.append(JointSpec(
            name=name, kind=kind, parent=parent, child=child, axis=axis,
            origin=_parse_origin(origin_el),
            limit_lower=lower, limit_upper=upper,
            effort_limit=effort, velocity_limit=velocity, origin_rpy=rpy))

    return _assemble(inertials, joints)


def _assemble(inertials, joints):
    children = {}
    child_links = set()
    for joint in joints:
        if joint.parent in children:
            raise BranchingChain(
                f"link {joint.parent!r} has more than one child joint "
                f"({children[joint.parent].name!r} and {joint.name!r})")
        children[joint.parent] = joint
        if joint.child in child_links:
            raise BranchingChain(f"link {joint.child!r} has more than one parent joint")
        child_links.add(joint.child)

    roots = [name for name in inertials if name not in child_links]
    if len(roots) != 1:
        raise MalformedXml(f"expected exactly one root link, found {sorted(roots)}")
    base = roots[0]

    ordered_joints, ordered_links = [], [base]
    cursor = base
    while cursor in children:
        joint = children[cursor]
        ordered_joints.append(joint)
        ordered_links.append(joint.child)
        cursor = joint.child
    if len(ordered_links) != len(inertials):
        orphans = sorted(set(inertials) - set(ordered_links))
        raise MalformedXml(f"links not connected to the chain: {orphans}")
    if not ordered_joints:
        raise MalformedXml("model has no joints")

    link_specs = []
    for name in ordered_links:
        spec = inertials[name]
        if spec is None:
            parent_joint = next((j for j in ordered_joints if j.child == name), None)
            if parent_joint is not None and parent_joint.is_actuated:
                raise MissingInertial(f"dynamic link {name!r} lacks an inertial block")
            spec = InertiaSpec.zero()
        link_specs.append((name, spec))

    return RobotModel(tuple(link_specs), tuple(ordered_joints),
                      base_link=base, tip_link=ordered_links[-1])


def extract_chain(model: RobotModel, base: str, tip: str) -> RobotModel:
    """Sub-chain of `model` spanning base..tip (tip must be below base)."""
    names = model.link_names
    for name in (base, tip):
        if name not in names:
            raise UnknownLink(f"link {name!r} not in model")
    i, j = names.index(base), names.index(tip)
    if j <= i:
        raise NotADescendant(f"{tip!r} is not a descendant of {base!r}")
    links = model.links[i:j + 1]
    joints = model.joints[i:j]
    return RobotModel(links, joints, base_link=base, tip_link=tip, gravity=model.gravity)


def _fmt(x):
    return repr(float(x))


def serialize_urdf(model: RobotModel) -> str:
    """Emit the supported URDF subset; parse(serialize(m)) == m."""
    lines = ['<?xml version="1.0"?>', '<robot name="model">']
    inertials = dict(model.links)
    for name in model.link_names:
        spec = inertials[name]
        if spec.mass == 0.0 and not spec.inertia.any():
            lines.append(f'  <link name="{name}"/>')
            continue
        I = spec.inertia
        lines.append(f'  <link name="{name}">')
        lines.append('    <inertial>')
        lines.append(f'      <origin xyz="{_fmt(spec.com[0])} {_fmt(spec.com[1])} '
                     f'{_fmt(spec.com[2])}" rpy="0 0 0"/>')
        lines.append(f'      <mass value="{_fmt(spec.mass)}"/>')
        lines.append(f'      <inertia ixx="{_fmt(I[0, 0])}" ixy="{_fmt(I[0, 1])}" '
                     f'ixz="{_fmt(I[0, 2])}" iyy="{_fmt(I[1, 1])}" iyz="{_fmt(I[1, 2])}" '
                     f'izz="{_fmt(I[2, 2])}"/>')
        lines.append('    </inertial>')
        lines.append('  </link>')
    for joint in model.joints:
        lines.append(f'  <joint name="{joint.name}" type="{joint.kind}">')
        p = joint.origin.position
        rpy = joint.origin_rpy if joint.origin_rpy is not None \
            else _rotation_to_rpy(joint.origin.rotation)
        lines.append(f'    <origin xyz="{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])}" '
                     f'rpy="{_fmt(rpy[0])} {_fmt(rpy[1])} {_fmt(rpy[2])}"/>')
        lines.append(f'    <parent link="{joint.parent}"/>')
        lines.append(f'    <child link="{joint.child}"/>')
        a = joint.axis
        lines.append(f'    <axis xyz="{_fmt(a[0])} {_fmt(a[1])} {_fmt(a[2])}"/>')
        if joint.is_actuated:
            lines.append(f'    <limit lower="{_fmt(joint.limit_lower)}" '
                         f'upper="{_fmt(joint.limit_upper)}" '
                         f'effort="{_fmt(joint.effort_limit)}" '
                         f'velocity="{_fmt(joint.velocity_limit)}"/>')
        lines.append('  </joint>')
    lines.append('</robot>')
    return "\n".join(lines) + "\n"


def _rotation_to_rpy(R):
    """Inverse of rpy_to_matrix (ZYX extraction); exact enough for round-trip."""
    pitch = np.arctan2(-R[2, 0], np.hypot(R[0, 0], R[1, 0]))
    if abs(abs(pitch) - np.pi / 2) < 1e-12:
        roll = np.arctan2(R[0, 1], R[1, 1]) * (-1.0 if pitch > 0 else 1.0)
        yaw = 0.0
    else:
        roll = np.arctan2(R[2, 1], R[2, 2])
        yaw = np.arctan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw
