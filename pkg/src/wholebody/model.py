"""Robot description: kinematic tree, inertial data, limits, actuator constants.

Models are immutable after construction.  The native document format is the
structured-text format of :mod:`wholebody.textdoc`; see :func:`load_model`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wholebody import textdoc
from wholebody.spatial import rot_rpy, quat_to_rot

GRAVITY_DEFAULT = (0.0, 0.0, -9.81)


class ModelError(ValueError):
    """Invalid robot description (bad topology or invariant violation)."""


@dataclass(frozen=True)
class LinkParams:
    """Inertial parameters of one link, inertia taken about the link-frame origin."""

    name: str
    mass: float
    com: np.ndarray          # (3,) in link frame
    inertia: np.ndarray      # (3, 3) symmetric, about link-frame origin

    @property
    def inertia_com(self):
        """Inertia about the link CoM (parallel-axis shift of the stored tensor)."""
        c = self.com
        return self.inertia - self.mass * (np.dot(c, c) * np.eye(3) - np.outer(c, c))


@dataclass(frozen=True)
class JointParams:
    """One revolute joint: placement in the parent link plus actuator data."""

    name: str
    parent: int              # parent link index
    child: int               # child link index
    axis: np.ndarray         # (3,) unit, in child frame
    origin_pos: np.ndarray   # (3,) joint origin in parent frame
    origin_rot: np.ndarray   # (3, 3) joint frame orientation in parent frame
    position_limits: tuple   # (lo, hi) rad
    velocity_limit: float    # rad/s
    torque_limits: tuple     # (tau_min, tau_max) N*m
    gear_ratio: float
    current_torque_coeff: float   # A per N*m
    friction_coulomb: float = 0.0
    friction_viscous: float = 0.0


@dataclass(frozen=True)
class ContactFrame:
    """A named sole-center frame with rectangular sole half-extents."""

    name: str
    link: int
    offset_pos: np.ndarray
    offset_rot: np.ndarray
    half_extents: tuple      # (lx_minus, lx_plus, ly_minus, ly_plus) m
    mu: float = 0.6


@dataclass(frozen=True)
class RobotModel:
    name: str
    floating_base: bool
    gravity: np.ndarray
    links: tuple             # LinkParams, document order; links[0] is the root
    joints: tuple            # JointParams, document order
    contacts: tuple          # ContactFrame

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def nv(self):
        """Generalized-velocity dimension (6 floating DoFs + actuated joints)."""
        return (6 if self.floating_base else 0) + len(self.joints)

    @property
    def total_mass(self):
        return sum(l.mass for l in self.links)

    def link_index(self, name):
        for i, l in enumerate(self.links):
            if l.name == name:
                return i
        raise ModelError(f"unknown link '{name}'")

    def contact_frame(self, name):
        for c in self.contacts:
            if c.name == name:
                return c
        raise ModelError(f"unknown contact frame '{name}'")

    def joint_for_child(self, link_index):
        """Joint driving a given link, or None for the root."""
        for j in self.joints:
            if j.child == link_index:
                return j
        return None


@dataclass
class RobotState:
    """Generalized position and velocity: floating-base pose/twist plus joints.

    The base twist is expressed in the base frame, angular before linear.
    """

    base_pos: np.ndarray
    base_quat: np.ndarray    # [w, x, y, z]
    base_twist: np.ndarray   # (6,) [omega; v] body frame
    q: np.ndarray            # actuated positions
    dq: np.ndarray           # actuated velocities

    @classmethod
    def zero(cls, model):
        n = model.n_joints
        return cls(
            base_pos=np.zeros(3),
            base_quat=np.array([1.0, 0.0, 0.0, 0.0]),
            base_twist=np.zeros(6),
            q=np.zeros(n),
            dq=np.zeros(n),
        )

    def copy(self):
        return RobotState(
            self.base_pos.copy(), self.base_quat.copy(), self.base_twist.copy(),
            self.q.copy(), self.dq.copy(),
        )

    def validate(self, model):
        n = model.n_joints
        if self.q.shape != (n,) or self.dq.shape != (n,):
            raise ModelError(f"state joint vectors must have length {n}")
        if abs(np.linalg.norm(self.base_quat) - 1.0) > 1e-9:
            raise ModelError("base quaternion must have unit norm")

    @property
    def base_rot(self):
        return quat_to_rot(self.base_quat)

    def velocity(self, model):
        """Full generalized velocity vector."""
        if model.floating_base:
            return np.concatenate([self.base_twist, self.dq])
        return self.dq.copy()


# ---------------------------------------------------------------------------
# Validation


def _check_inertia(link):
    I = link.inertia
    if not np.allclose(I, I.T, atol=1e-12):
        raise ModelError(f"link '{link.name}': inertia must be symmetric")
    eig = np.linalg.eigvalsh(I)
    if eig[0] < -1e-10:
        raise ModelError(f"link '{link.name}': inertia must be positive semi-definite")
    principal = np.sort(np.linalg.eigvalsh(link.inertia_com))
    if principal[0] < -1e-10:
        raise ModelError(f"link '{link.name}': CoM inertia must be positive semi-definite")
    if principal[0] + principal[1] < principal[2] - 1e-9 * max(principal[2], 1.0):
        raise ModelError(f"link '{link.name}': principal moments violate the triangle inequality")


def validate_model(model):
    """Check all model invariants; raises ModelError naming the offender."""
    if not model.links:
        raise ModelError("model has no links")
    for link in model.links:
        if not link.mass > 0.0:
            raise ModelError(f"link '{link.name}': mass must be positive")
        _check_inertia(link)
    children = set()
    for j in model.joints:
        if abs(np.linalg.norm(j.axis) - 1.0) > 1e-12:
            raise ModelError(f"joint '{j.name}': axis must have unit norm")
        if not j.torque_limits[0] < j.torque_limits[1]:
            raise ModelError(f"joint '{j.name}': torque limits must satisfy tau_min < tau_max")
        if not j.gear_ratio >= 1.0:
            raise ModelError(f"joint '{j.name}': gear ratio must be >= 1")
        if j.child in children:
            raise ModelError(f"joint '{j.name}': link index {j.child} already has a parent joint")
        if j.child == 0:
            raise ModelError(f"joint '{j.name}': the root link cannot be a joint child")
        if not (0 <= j.parent < len(model.links) and 0 <= j.child < len(model.links)):
            raise ModelError(f"joint '{j.name}': parent/child link index out of range")
        children.add(j.child)
    if len(model.joints) != len(model.links) - 1:
        raise ModelError("topology must be a rooted tree (n_links = n_joints + 1)")
    # reachability from the root guarantees a connected acyclic tree
    parent_of = {j.child: j.parent for j in model.joints}
    for idx in range(1, len(model.links)):
        seen, cur = set(), idx
        while cur != 0:
            if cur in seen or cur not in parent_of:
                raise ModelError(f"link '{model.links[idx].name}' is not connected to the root")
            seen.add(cur)
            cur = parent_of[cur]
    for c in model.contacts:
        if not (0 <= c.link < len(model.links)):
            raise ModelError(f"contact '{c.name}': link index out of range")
    return model


# ---------------------------------------------------------------------------
# Document I/O


def load_model(text):
    """Parse a model document and validate every invariant.

    Link and joint ordering follows document order exactly.
    """
    doc = textdoc.parse_document(text)
    name = doc.string("name", default="robot")
    floating = doc.boolean("floating_base", default=False)
    gravity = np.array(doc.floats("gravity", 3, default=GRAVITY_DEFAULT))

    links = []
    for b in doc.children("link"):
        ixx, ixy, ixz, iyy, iyz, izz = b.floats("inertia", 6)
        links.append(
            LinkParams(
                name=b.name,
                mass=float(b.scalar("mass")),
                com=np.array(b.floats("com", 3)),
                inertia=np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]]),
            )
        )
    names = [l.name for l in links]
    if len(set(names)) != len(names):
        raise ModelError("duplicate link names")

    def index_of(link_name, ctx, line):
        if link_name not in names:
            raise textdoc.DocError(f"{ctx} references unknown link '{link_name}'", line)
        return names.index(link_name)

    joints = []
    for b in doc.children("joint"):
        origin = b.floats("origin", 6, default=(0, 0, 0, 0, 0, 0))
        lo, hi = b.floats("position_limits", 2, default=(-np.pi, np.pi))
        tmin, tmax = b.floats("torque_limits", 2)
        fric = b.floats("friction", 2, default=(0.0, 0.0))
        joints.append(
            JointParams(
                name=b.name,
                parent=index_of(b.string("parent"), f"joint '{b.name}'", b.line),
                child=index_of(b.string("child"), f"joint '{b.name}'", b.line),
                axis=np.array(b.floats("axis", 3)),
                origin_pos=np.array(origin[:3]),
                origin_rot=rot_rpy(*origin[3:]),
                position_limits=(lo, hi),
                velocity_limit=float(b.scalar("velocity_limit", default=1e3)),
                torque_limits=(tmin, tmax),
                gear_ratio=float(b.scalar("gear_ratio", default=1.0)),
                current_torque_coeff=float(b.scalar("current_torque_coeff", default=1.0)),
                friction_coulomb=fric[0],
                friction_viscous=fric[1],
            )
        )

    contacts = []
    for b in doc.children("contact"):
        offset = b.floats("offset", 6, default=(0, 0, 0, 0, 0, 0))
        he = b.floats("half_extents", 4, default=(0.0, 0.0, 0.0, 0.0))
        contacts.append(
            ContactFrame(
                name=b.name,
                link=index_of(b.string("link"), f"contact '{b.name}'", b.line),
                offset_pos=np.array(offset[:3]),
                offset_rot=rot_rpy(*offset[3:]),
                half_extents=tuple(he),
                mu=float(b.scalar("mu", default=0.6)),
            )
        )

    model = RobotModel(
        name=name,
        floating_base=floating,
        gravity=gravity,
        links=tuple(links),
        joints=tuple(joints),
        contacts=tuple(contacts),
    )
    return validate_model(model)


def _rpy_of(R):
    # inverse of rot_rpy (Rz Ry Rx), pitch in (-pi/2, pi/2) for our documents
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(np.cos(pitch)) < 1e-9:
        return (np.arctan2(-R[0, 1], R[1, 1]), pitch, 0.0)
    return (np.arctan2(R[2, 1], R[2, 2]), pitch, np.arctan2(R[1, 0], R[0, 0]))


def serialize_model(model):
    """Render a model back to document text; reparsing gives identical fields."""
    blocks = []
    for l in model.links:
        I = l.inertia
        blocks.append((
            "link", l.name,
            {
                "mass": float(l.mass),
                "com": [float(x) for x in l.com],
                "inertia": [float(I[0, 0]), float(I[0, 1]), float(I[0, 2]),
                            float(I[1, 1]), float(I[1, 2]), float(I[2, 2])],
            },
            (),
        ))
    for j in model.joints:
        rpy = _rpy_of(j.origin_rot)
        blocks.append((
            "joint", j.name,
            {
                "parent": model.links[j.parent].name,
                "child": model.links[j.child].name,
                "axis": [float(x) for x in j.axis],
                "origin": [float(x) for x in j.origin_pos] + [float(a) for a in rpy],
                "position_limits": [float(j.position_limits[0]), float(j.position_limits[1])],
                "velocity_limit": float(j.velocity_limit),
                "torque_limits": [float(j.torque_limits[0]), float(j.torque_limits[1])],
                "gear_ratio": float(j.gear_ratio),
                "current_torque_coeff": float(j.current_torque_coeff),
                "friction": [float(j.friction_coulomb), float(j.friction_viscous)],
            },
            (),
        ))
    for c in model.contacts:
        rpy = _rpy_of(c.offset_rot)
        blocks.append((
            "contact", c.name,
            {
                "link": model.links[c.link].name,
                "offset": [float(x) for x in c.offset_pos] + [float(a) for a in rpy],
                "half_extents": [float(x) for x in c.half_extents],
                "mu": float(c.mu),
            },
            (),
        ))
    fields = {
        "name": model.name,
        "floating_base": bool(model.floating_base),
        "gravity": [float(g) for g in model.gravity],
    }
    return textdoc.dump_block(fields, blocks) + "\n"


# ---------------------------------------------------------------------------
# Built-in models


def _box_inertia(mass, dx, dy, dz):
    return mass / 12.0 * np.diag([dy * dy + dz * dz, dx * dx + dz * dz, dx * dx + dy * dy])


def _shift_to_origin(mass, com, inertia_com):
    c = np.asarray(com, dtype=float)
    return inertia_com + mass * (np.dot(c, c) * np.eye(3) - np.outer(c, c))


def _make_link(name, mass, com, dims):
    com = np.asarray(com, dtype=float)
    return LinkParams(name=name, mass=mass, com=com,
                      inertia=_shift_to_origin(mass, com, _box_inertia(mass, *dims)))


def build_pendulum(mass=1.0, length=1.0, friction=(0.0, 0.0)):
    """Fixed-base single pendulum hanging along -z; q = pi/2 swings the tip to +x."""
    base = _make_link("base", 1.0, (0, 0, 0), (0.1, 0.1, 0.1))
    com = np.array([0.0, 0.0, -0.5 * length])
    rod = LinkParams(
        name="rod", mass=mass, com=com,
        inertia=_shift_to_origin(mass, com, np.diag([mass * length**2 / 12.0,
                                                     mass * length**2 / 12.0, 1e-6])),
    )
    joint = JointParams(
        name="pivot", parent=0, child=1, axis=np.array([0.0, -1.0, 0.0]),
        origin_pos=np.zeros(3), origin_rot=np.eye(3),
        position_limits=(-2.0 * np.pi, 2.0 * np.pi), velocity_limit=50.0,
        torque_limits=(-100.0, 100.0), gear_ratio=1.0, current_torque_coeff=1.0,
        friction_coulomb=friction[0], friction_viscous=friction[1],
    )
    tip = ContactFrame(name="tip", link=1, offset_pos=np.array([0.0, 0.0, -length]),
                       offset_rot=np.eye(3), half_extents=(0.0, 0.0, 0.0, 0.0))
    return validate_model(RobotModel(
        name="pendulum", floating_base=False, gravity=np.array(GRAVITY_DEFAULT),
        links=(base, rod), joints=(joint,), contacts=(tip,),
    ))


def build_planar_triple(masses=(3.0, 2.0, 1.0), lengths=(0.5, 0.4, 0.3)):
    """Fixed-base 3-link planar chain (all joints about -y) with analytic dynamics."""
    links = [_make_link("base", 2.0, (0, 0, 0), (0.1, 0.1, 0.1))]
    joints = []
    for i, (m, L) in enumerate(zip(masses, lengths)):
        com = np.array([0.0, 0.0, -0.5 * L])
        links.append(LinkParams(
            name=f"link{i + 1}", mass=m, com=com,
            inertia=_shift_to_origin(m, com, np.diag([m * L**2 / 12.0, m * L**2 / 12.0, 1e-6])),
        ))
        joints.append(JointParams(
            name=f"joint{i + 1}", parent=i, child=i + 1, axis=np.array([0.0, -1.0, 0.0]),
            origin_pos=np.array([0.0, 0.0, -lengths[i - 1] if i > 0 else 0.0]),
            origin_rot=np.eye(3),
            position_limits=(-2.0 * np.pi, 2.0 * np.pi), velocity_limit=50.0,
            torque_limits=(-200.0, 200.0), gear_ratio=1.0, current_torque_coeff=1.0,
        ))
    tip = ContactFrame(name="tip", link=3, offset_pos=np.array([0.0, 0.0, -lengths[2]]),
                       offset_rot=np.eye(3), half_extents=(0.0, 0.0, 0.0, 0.0))
    return validate_model(RobotModel(
        name="planar_triple", floating_base=False, gravity=np.array(GRAVITY_DEFAULT),
        links=tuple(links), joints=tuple(joints), contacts=(tip,),
    ))


# biped geometry (m); sole sits 1.10 m below the base origin at q = 0
_HIP_Y = 0.10
_HIP_DROP = 0.10
_YAW_DROP = 0.06
_ROLL_DROP = 0.06
_THIGH = 0.38
_SHANK = 0.38
_ANKLE_DROP = 0.04
_SOLE_DROP = 0.08
BIPED_BASE_HEIGHT = _HIP_DROP + _YAW_DROP + _ROLL_DROP + _THIGH + _SHANK + _ANKLE_DROP + _SOLE_DROP

_LEG_MASS_SPLIT = (0.28, 0.22, 0.18, 0.14, 0.10, 0.08)


def _leg_links_joints(side, sign, parent0, start_idx, total_mass, torque_lims, fric):
    leg_mass = 0.225 * total_mass
    m = [f * leg_mass for f in _LEG_MASS_SPLIT]
    axis_z, axis_x, axis_y = np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    specs = [
        # (joint suffix, axis, origin offset, link dims, link com, pos limits)
        ("hip_yaw", axis_z, (0.0, sign * _HIP_Y, -_HIP_DROP), (0.10, 0.10, 0.08), (0, 0, -0.03), (-1.5, 1.5)),
        ("hip_roll", axis_x, (0.0, 0.0, -_YAW_DROP), (0.10, 0.10, 0.08), (0, 0, -0.03), (-0.8, 0.8)),
        ("hip_pitch", axis_y, (0.0, 0.0, -_ROLL_DROP), (0.10, 0.10, _THIGH), (0, 0, -0.19), (-2.0, 2.0)),
        ("knee_pitch", axis_y, (0.0, 0.0, -_THIGH), (0.09, 0.09, _SHANK), (0, 0, -0.19), (-2.4, -0.05)),
        ("ankle_pitch", axis_y, (0.0, 0.0, -_SHANK), (0.08, 0.08, 0.05), (0, 0, -0.02), (-1.2, 1.2)),
        ("ankle_roll", axis_x, (0.0, 0.0, -_ANKLE_DROP), (0.24, 0.12, 0.04), (0.01, 0, -0.05), (-0.8, 0.8)),
    ]
    links, joints = [], []
    parent = parent0
    for k, (suffix, axis, offset, dims, com, lims) in enumerate(specs):
        child = start_idx + k
        links.append(_make_link(f"{side}_{suffix}_link", m[k], com, dims))
        joints.append(JointParams(
            name=f"{side}_{suffix}", parent=parent, child=child, axis=axis,
            origin_pos=np.array(offset), origin_rot=np.eye(3),
            position_limits=lims, velocity_limit=12.0,
            torque_limits=torque_lims[k], gear_ratio=100.0, current_torque_coeff=0.05,
            friction_coulomb=fric[0], friction_viscous=fric[1],
        ))
        parent = child
    return links, joints


def build_biped(total_mass=43.0, friction=(3.0, 0.5)):
    """Floating-base 12-DoF biped: 6 joints per leg, 43 kg, ~1.6 m standing height.

    Mass split: 55% torso, 22.5% per leg in decreasing proximal-to-distal
    fractions.  Sole rectangles are 0.24 m x 0.12 m, mu = 0.6.
    """
    torso = _make_link("torso", 0.55 * total_mass, (0.0, 0.0, 0.15), (0.25, 0.35, 0.50))
    torque_lims = [(-150.0, 150.0)] * 4 + [(-100.0, 100.0)] * 2
    l_links, l_joints = _leg_links_joints("l", +1, 0, 1, total_mass, torque_lims, friction)
    r_links, r_joints = _leg_links_joints("r", -1, 0, 7, total_mass, torque_lims, friction)
    contacts = (
        ContactFrame(name="l_sole", link=6, offset_pos=np.array([0.0, 0.0, -_SOLE_DROP]),
                     offset_rot=np.eye(3), half_extents=(0.12, 0.12, 0.06, 0.06), mu=0.6),
        ContactFrame(name="r_sole", link=12, offset_pos=np.array([0.0, 0.0, -_SOLE_DROP]),
                     offset_rot=np.eye(3), half_extents=(0.12, 0.12, 0.06, 0.06), mu=0.6),
    )
    return validate_model(RobotModel(
        name="biped12", floating_base=True, gravity=np.array(GRAVITY_DEFAULT),
        links=(torso,) + tuple(l_links) + tuple(r_links),
        joints=tuple(l_joints) + tuple(r_joints),
        contacts=contacts,
    ))


def build_leg(friction=(3.0, 0.5)):
    """Fixed-base 6-joint leg (one biped leg on a stand), for identification tests."""
    stand = _make_link("stand", 5.0, (0, 0, 0), (0.2, 0.2, 0.2))
    torque_lims = [(-150.0, 150.0)] * 4 + [(-100.0, 100.0)] * 2
    links, joints = _leg_links_joints("l", +1, 0, 1, 43.0, torque_lims, friction)
    sole = ContactFrame(name="l_sole", link=6, offset_pos=np.array([0.0, 0.0, -_SOLE_DROP]),
                        offset_rot=np.eye(3), half_extents=(0.12, 0.12, 0.06, 0.06), mu=0.6)
    return validate_model(RobotModel(
        name="leg6", floating_base=False, gravity=np.array(GRAVITY_DEFAULT),
        links=(stand,) + tuple(links), joints=tuple(joints), contacts=(sole,),
    ))


def standing_state(model, height=None, knee_bend=0.0):
    """Nominal standing state of the biped with soles on z = 0.

    ``knee_bend`` bends each leg (hip pitch, -2x knee, ankle pitch) keeping
    the sole flat and under the hip; a nonzero bend avoids the straight-knee
    singularity.
    """
    st = RobotState.zero(model)
    if knee_bend:
        for leg in (0, 6):
            st.q[leg + 2] = knee_bend
            st.q[leg + 3] = -2.0 * knee_bend
            st.q[leg + 4] = knee_bend
    if model.floating_base:
        if height is None:
            height = BIPED_BASE_HEIGHT - (_THIGH + _SHANK) * (1.0 - np.cos(knee_bend))
        st.base_pos = np.array([0.0, 0.0, height])
    return st
