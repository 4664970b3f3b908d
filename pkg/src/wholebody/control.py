"""Balance controller: reference planner, four-level hierarchy, joint currents.

The optimization variable is x = [qdd (nv); F (6 per contact foot)], with
contact wrenches expressed in their sole-center frames (angular before
linear).  Levels, highest priority first:

1. floating-base dynamics rows, with joint torque saturation (and zero-force
   rows for feet out of contact) as constraints;
2. foot pose tracking, with CoP, friction-pyramid and unilateral rows;
3. linear centroidal momentum;
4. torso orientation plus contact-force regulation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from wholebody import dynamics
from wholebody.dynamics import Kinematics
from wholebody.hqp import Level, HierarchySolver
from wholebody.spatial import rot_axis_angle, rot_log


@dataclass
class TaskGains:
    kp: float
    kd: float


@dataclass
class HierarchyConfig:
    foot_gains: TaskGains = field(default_factory=lambda: TaskGains(400.0, 40.0))
    com_gains: TaskGains = field(default_factory=lambda: TaskGains(25.0, 10.0))
    torso_gains: TaskGains = field(default_factory=lambda: TaskGains(50.0, 15.0))
    cop_margin: float = 0.0          # shrink of sole extents used in CoP rows, m
    mu: float | None = None          # None: take from each contact frame
    safe_region_scale: float = 0.8   # fraction of sole half-extents
    zmp_force_min: float = 20.0      # N, below which a measured ZMP is unreliable
    zmp_source: str = "measured"     # "measured" or "optimized"
    force_task_weight: float = 0.01  # force rows vs torso rows inside the last level
    accel_reg: float = 1e-3          # acceleration damping inside the last level
    foot_accel_max: float = 60.0     # saturation of the foot task acceleration
    zmp_authority_scale: float = 0.9  # fraction of support-polygon CoM-accel authority
    limit_horizon: float = 0.1       # s, look-ahead of the joint position-limit rows
    conform_tau: float = 1e-3        # s, reference conforming to the support surface
    conform_force_gain: float = 5e-4  # m/s of foot-height reference per N of force error
    conform_cop_gain: float = 5.0    # rad/s of foot-tilt reference per m of CoP offset
    snap_ticks: int = 1              # safe-region dwell before re-capturing foot refs

    def __post_init__(self):
        if not (0.0 < self.safe_region_scale <= 1.0):
            raise ValueError("safe_region_scale must be in (0, 1]")
        for g in (self.foot_gains, self.com_gains, self.torso_gains):
            if g.kp < 0 or g.kd < 0:
                raise ValueError("task gains must be non-negative")


@dataclass
class FootRef:
    pos: np.ndarray
    rot: np.ndarray
    vel: np.ndarray   # (6,) angular, linear


@dataclass
class References:
    feet: dict                      # contact name -> FootRef
    com_pos: np.ndarray
    com_vel: np.ndarray
    torso_rot: np.ndarray
    torso_angvel: np.ndarray
    forces: dict                    # contact name -> (6,) foot-frame wrench ref
    height_offset: float            # standing-height constant above mean foot height
    contact_lost: bool = False


@dataclass
class JointControlParams:
    """Parameters of the joint current law and friction compensation."""

    k_i: np.ndarray                 # A per N*m, per joint
    F_c: np.ndarray                 # Coulomb friction, N*m
    F_v: np.ndarray                 # viscous coefficient, N*m*s/rad
    k_f: float = 0.8                # friction compensation blend, 0..1
    qdot_star: object = 0.05        # linear band half-width(s), rad/s
    k_qdot: object = 10.0           # velocity feedback gain(s), N*m*s/rad
    leak: float = 0.999             # desired-velocity integrator leak per tick
    track_band: float = 0.2         # max |qdot_des - qdot| tracking error, rad/s

    @classmethod
    def from_model(cls, model, friction_scale=1.0, nominal_dt=1e-3, **kw):
        """Parameters with the model's actuator constants.

        The velocity-feedback gain is capped per joint at a fraction of
        inertia / tick period: velocity feedback acts on a one-tick-old
        measurement, so a gain beyond ~ M_jj / dt flips the sign of the
        joint velocity every tick and light distal joints (ankles) chatter
        at the Nyquist frequency instead of damping.
        """
        params = cls(
            k_i=np.array([j.current_torque_coeff for j in model.joints]),
            F_c=friction_scale * np.array([j.friction_coulomb for j in model.joints]),
            F_v=friction_scale * np.array([j.friction_viscous for j in model.joints]),
            **kw,
        )
        from wholebody import dynamics
        from wholebody.model import RobotState

        inertia = np.diag(dynamics.mass_matrix(model, RobotState.zero(model)))
        inertia = inertia[6:] if model.floating_base else inertia
        params.k_qdot = np.minimum(params.k_qdot, 0.25 * inertia / nominal_dt)
        # Same bound for the friction compensation: inside the linear band the
        # compensation torque has slope k_f * F_c / qdot_star against a
        # one-tick-old velocity, which on light joints can exceed the delayed
        # feedback limit by an order of magnitude.  Widen the band per joint
        # so that slope never exceeds the same fraction of inertia / dt.
        params.qdot_star = np.maximum(
            params.qdot_star, params.k_f * params.F_c * nominal_dt / (0.25 * inertia))
        return params

    def __post_init__(self):
        if np.any(self.F_c < 0) or np.any(self.F_v < 0):
            raise ValueError("friction parameters must be non-negative")
        if np.any(np.asarray(self.qdot_star) <= 0):
            raise ValueError("qdot_star must be positive")
        if not (0.0 <= self.k_f <= 1.0):
            raise ValueError("k_f must lie in [0, 1]")


def measured_zmp(wrench, f_min=20.0):
    """(p_x, p_y) of a foot-frame wrench about the sole center, or None.

    Returns None when the normal force is at or below ``f_min`` (contact
    loss; no reliable ZMP).
    """
    n_x, n_y, _, _, _, f_z = wrench
    if f_z <= f_min:
        return None
    return (-n_y / f_z, n_x / f_z)


def friction_compensation(qdot_des, params):
    """Coulomb-viscous compensation torque with a linear band of half-width qdot_star."""
    v = np.asarray(qdot_des, dtype=float)
    vs = params.qdot_star
    inner = v * params.F_c / vs
    s = np.sign(v)
    outer = s * params.F_c + params.F_v * (v - s * vs)
    return np.where(np.abs(v) <= vs, inner, outer)


def zmp_in_safe_region(zmp, contact, scale):
    lxm, lxp, lym, lyp = contact.half_extents
    px, py = zmp
    return (-scale * lxm <= px <= scale * lxp) and (-scale * lym <= py <= scale * lyp)


def initial_references(model, state, config=None, height_offset=None, kin=None):
    """Bootstrap references from the current state (planner fixed point)."""
    kin = kin or Kinematics(model, state)
    fk = dynamics.forward_kinematics(model, state, kin=kin)
    com_pos, com_vel, mass = dynamics.com(model, state, kin=kin)
    feet = {}
    for c in model.contacts:
        pos, rot, vel = fk[c.name]
        feet[c.name] = FootRef(pos.copy(), rot.copy(), vel.copy())
    mean_h = np.mean([feet[c.name].pos[2] for c in model.contacts])
    offset = (com_pos[2] - mean_h) if height_offset is None else height_offset
    g = abs(model.gravity[2])
    forces = {}
    for c in model.contacts:
        w = np.zeros(6)
        w[5] = mass * g / 2.0
        forces[c.name] = w
    refs = References(
        feet=feet,
        com_pos=com_pos.copy(), com_vel=com_vel.copy(),
        torso_rot=np.eye(3), torso_angvel=np.zeros(3),
        forces=forces, height_offset=offset,
    )
    _update_com_refs(model, refs)
    return refs


def _update_com_refs(model, refs):
    foot_refs = [refs.feet[c.name] for c in model.contacts]
    pos = np.mean([f.pos for f in foot_refs], axis=0)
    refs.com_pos = np.array([pos[0], pos[1], pos[2] + refs.height_offset])
    refs.com_vel = np.mean([f.vel[3:] for f in foot_refs], axis=0)


def plan_references(model, state, zmp, contacts, config, prev_refs, kin=None,
                    safe_streak=None, dt=1e-3, wrenches=None):
    """ZMP-conditioned reference adjustment.

    A foot whose measured ZMP lies inside the safe region (sole rectangle
    scaled by ``safe_region_scale``) snaps its pose/velocity references to
    the current foot state; otherwise the previous references are held.  CoM
    references follow the foot references (horizontal midpoint, mean height
    plus the standing offset, mean velocity); the torso reference stays
    upright; vertical force references split the robot weight evenly.

    ``safe_streak`` (contact name -> consecutive safe ticks) debounces the
    snap: a foot rocking on an edge after a push can report a momentarily
    safe ZMP, and capturing its tilted pose as the new reference would leave
    the robot balancing on foot edges.  Without it the snap is immediate.
    """
    fk = dynamics.forward_kinematics(model, state, kin=kin)
    feet = {}
    any_contact = False
    for c in model.contacts:
        in_contact = bool(contacts.get(c.name, False))
        any_contact = any_contact or in_contact
        foot_zmp = zmp.get(c.name)
        settled = safe_streak is None or safe_streak.get(c.name, 0) >= config.snap_ticks
        if (in_contact and settled and foot_zmp is not None
                and zmp_in_safe_region(foot_zmp, c, config.safe_region_scale)):
            # desired motion of a support foot is rest at its current pose;
            # copying its full velocity too would remove all restoring
            # feedback and let a slow leg retraction grow unchecked.  The
            # tangential velocity is kept: a translating support drags the
            # foot with it, and braking against that drag every tick pumps
            # energy into the stance
            pos, rot, vel = fk[c.name]
            ref_vel = np.zeros(6)
            ref_vel[3:5] = vel[3:5]
            feet[c.name] = FootRef(pos.copy(), rot.copy(), ref_vel)
        else:
            prev = prev_refs.feet[c.name]
            ref = FootRef(prev.pos.copy(), prev.rot.copy(), prev.vel.copy())
            if in_contact and config.conform_tau > 0:
                # a loaded foot whose ZMP is off-center is being reshaped by
                # the support surface (incline ramp): let the contact-governed
                # components (height and orientation) of the reference follow
                # the actual pose with a short time constant, while tangential
                # position keeps full stiffness against sliding
                alpha = min(1.0, dt / config.conform_tau)
                pos, rot, vel = fk[c.name]
                ref.pos[2] += alpha * (pos[2] - ref.pos[2])
                phi = alpha * rot_log(rot @ ref.rot.T)
                angle = np.linalg.norm(phi)
                if angle > 1e-12:
                    ref.rot = rot_axis_angle(phi / angle, angle) @ ref.rot
                # follow the slow surface motion in velocity as well, so the
                # derivative term does not fight a rotating support; fast
                # rocking stays damped through the low-pass
                ref.vel[:3] += alpha * (vel[:3] - ref.vel[:3])
                ref.vel[5] += alpha * (vel[5] - ref.vel[5])
                # measured-wrench admittance: press the foot toward its normal
                # force reference and tilt it to re-center the measured CoP,
                # restoring flush contact on a support that moves underfoot
                if wrenches is not None and c.name in wrenches:
                    w = wrenches[c.name]
                    dz = config.conform_force_gain * (
                        prev_refs.forces[c.name][5] - w[5])
                    ref.pos[2] -= dz * dt
                    ref.vel[5] -= dz
                    if foot_zmp is not None:
                        px, py = foot_zmp
                        w_adm = config.conform_cop_gain * (
                            rot @ np.array([py, -px, 0.0]))
                        angle = np.linalg.norm(w_adm) * dt
                        if angle > 1e-12:
                            ref.rot = rot_axis_angle(w_adm / np.linalg.norm(w_adm),
                                                     angle) @ ref.rot
                        ref.vel[:3] += w_adm
            feet[c.name] = ref
    refs = References(
        feet=feet,
        com_pos=prev_refs.com_pos, com_vel=prev_refs.com_vel,
        torso_rot=np.eye(3), torso_angvel=np.zeros(3),
        forces={k: v.copy() for k, v in prev_refs.forces.items()},
        height_offset=prev_refs.height_offset,
        contact_lost=not any_contact,
    )
    mass = model.total_mass
    g = abs(model.gravity[2])
    for c in model.contacts:
        w = np.zeros(6)
        w[5] = mass * g / 2.0
        refs.forces[c.name] = w
    _update_com_refs(model, refs)
    return refs


@dataclass
class HierarchyData:
    """Cached dynamics quantities shared between hierarchy build and torque extraction."""

    M: np.ndarray
    h: np.ndarray
    B: dict            # contact name -> nv x 6 map from foot-frame wrench to generalized force
    n_x: int
    contact_names: list


@dataclass
class WbcSolution:
    qdd_opt: np.ndarray
    F_opt: dict            # contact name -> (6,) foot-frame wrench
    tau_opt: np.ndarray
    diagnostics: object    # HqpSolution


def _wrench_map(kin, contact):
    """nv x 6 matrix turning a foot-frame wrench into generalized forces."""
    pos = kin.p[contact.link] + kin.R[contact.link] @ contact.offset_pos
    rot = kin.R[contact.link] @ contact.offset_rot
    J = kin.point_jacobian(contact.link, pos)
    blk = np.zeros((6, 6))
    blk[:3, :3] = rot
    blk[3:, 3:] = rot
    return J.T @ blk, pos, rot, J


def hierarchy_data(model, state, kin=None):
    kin = kin or Kinematics(model, state)
    M = dynamics.mass_matrix(model, state, kin=kin)
    h = dynamics.nonlinear_effects(model, state, kin=kin)
    B = {}
    for c in model.contacts:
        Bc, _, _, _ = _wrench_map(kin, c)
        B[c.name] = Bc
    return HierarchyData(M=M, h=h, B=B, n_x=model.nv + 6 * len(model.contacts),
                         contact_names=[c.name for c in model.contacts])


def build_hierarchy(model, state, refs, config, contacts=None, kin=None):
    """Build the four balance levels over x = [qdd; F].

    Returns (levels, HierarchyData).  Feet reported out of contact keep
    their motion task but lose their contact rows; their wrench variables
    are pinned to zero at the highest priority.
    """
    kin = kin or Kinematics(model, state)
    if contacts is None:
        contacts = {c.name: True for c in model.contacts}
    nv = model.nv
    k = len(model.contacts)
    n_x = nv + 6 * k
    data = hierarchy_data(model, state, kin=kin)
    M, h = data.M, data.h
    B_stack = np.hstack([data.B[c.name] for c in model.contacts]) if k else np.zeros((nv, 0))

    # --- level 1: floating-base dynamics; torque saturation -----------------
    A1 = np.hstack([M[:6], -B_stack[:6]])
    b1 = -h[:6]
    Ma = M[6:]
    Ba = B_stack[6:]
    tau_map = np.hstack([Ma, -Ba])          # tau = tau_map x + h_a
    tau_min = np.array([j.torque_limits[0] for j in model.joints])
    tau_max = np.array([j.torque_limits[1] for j in model.joints])
    D1_rows = [tau_map, -tau_map]
    f1_rows = [tau_max - h[6:], h[6:] - tau_min]
    # joint position-limit avoidance: bound each joint acceleration so a
    # constant-acceleration extrapolation over limit_horizon stays inside the
    # position limits (stops the knees short of the straight-leg singularity)
    T = config.limit_horizon
    if T > 0:
        q_lo = np.array([j.position_limits[0] for j in model.joints])
        q_hi = np.array([j.position_limits[1] for j in model.joints])
        sel_j = np.hstack([np.zeros((model.n_joints, 6)), np.eye(model.n_joints),
                           np.zeros((model.n_joints, 6 * k))])
        qdd_hi = 2.0 * (q_hi - state.q - T * state.dq) / T ** 2
        qdd_lo = 2.0 * (q_lo - state.q - T * state.dq) / T ** 2
        D1_rows += [sel_j, -sel_j]
        f1_rows += [qdd_hi, -qdd_lo]
    for i, c in enumerate(model.contacts):
        if not contacts.get(c.name, False):
            sel = np.zeros((6, n_x))
            sel[:, nv + 6 * i:nv + 6 * i + 6] = np.eye(6)
            D1_rows += [sel, -sel]
            f1_rows += [np.zeros(6), np.zeros(6)]
    level1 = Level(A=A1, b=b1, D=np.vstack(D1_rows), f=np.concatenate(f1_rows),
                   name="floating_base_dynamics")

    # --- level 2: foot pose tasks; CoP / friction pyramid / unilateral ------
    fg = config.foot_gains
    A2_rows, b2_rows, D2_rows, f2_rows = [], [], [], []
    for i, c in enumerate(model.contacts):
        _, pos, rot, J = _wrench_map(kin, c)
        jdqd = dynamics.jdot_qdot(model, state, c.name, kin=kin)
        ref = refs.feet[c.name]
        vel = np.concatenate([kin.w[c.link], kin.v[c.link] + np.cross(kin.w[c.link], pos - kin.p[c.link])])
        a_des = np.concatenate([
            fg.kp * rot_log(ref.rot @ rot.T) + fg.kd * (ref.vel[:3] - vel[:3]),
            fg.kp * (ref.pos - pos) + fg.kd * (ref.vel[3:] - vel[3:]),
        ])
        # saturate: a large pose error (foot rocking after a hard push) would
        # otherwise demand accelerations infeasible under the torque limits
        # and degrade the whole level
        a_des = np.clip(a_des, -config.foot_accel_max, config.foot_accel_max)
        A2_rows.append(np.hstack([J, np.zeros((6, 6 * k))]))
        b2_rows.append(a_des - jdqd)
        if contacts.get(c.name, False):
            lxm, lxp, lym, lyp = c.half_extents
            lxm = max(lxm - config.cop_margin, 1e-3)
            lxp = max(lxp - config.cop_margin, 1e-3)
            lym = max(lym - config.cop_margin, 1e-3)
            lyp = max(lyp - config.cop_margin, 1e-3)
            mu = config.mu if config.mu is not None else c.mu
            mu_eff = mu / np.sqrt(2.0)
            # torsional friction: corner forces can only supply a yaw moment
            # of order mu * (sole radius) * f_z
            gamma = mu * 0.25 * (lxm + lxp + lym + lyp)
            rows = np.array([
                #  n_x   n_y   n_z   f_x   f_y   f_z
                [0.0, -1.0, 0.0, 0.0, 0.0, -lxp],   # p_x <= lxp
                [0.0, 1.0, 0.0, 0.0, 0.0, -lxm],    # p_x >= -lxm
                [1.0, 0.0, 0.0, 0.0, 0.0, -lyp],    # p_y <= lyp
                [-1.0, 0.0, 0.0, 0.0, 0.0, -lym],   # p_y >= -lym
                [0.0, 0.0, 0.0, 1.0, 0.0, -mu_eff],
                [0.0, 0.0, 0.0, -1.0, 0.0, -mu_eff],
                [0.0, 0.0, 0.0, 0.0, 1.0, -mu_eff],
                [0.0, 0.0, 0.0, 0.0, -1.0, -mu_eff],
                [0.0, 0.0, 1.0, 0.0, 0.0, -gamma],   # |n_z| <= gamma f_z
                [0.0, 0.0, -1.0, 0.0, 0.0, -gamma],
                [0.0, 0.0, 0.0, 0.0, 0.0, -1.0],    # f_z >= 0
            ])
            D = np.zeros((11, n_x))
            D[:, nv + 6 * i:nv + 6 * i + 6] = rows
            D2_rows.append(D)
            f2_rows.append(np.zeros(11))
    level2 = Level(
        A=np.vstack(A2_rows), b=np.concatenate(b2_rows),
        D=np.vstack(D2_rows) if D2_rows else None,
        f=np.concatenate(f2_rows) if f2_rows else None,
        name="foot_pose",
    )

    # --- level 3: linear centroidal momentum --------------------------------
    cg = config.com_gains
    cm = dynamics.centroidal_momentum(model, state, kin=kin)
    com_pos, com_vel, mass = dynamics.com(model, state, kin=kin)
    a_com = cg.kp * (refs.com_pos - com_pos) + cg.kd * (refs.com_vel - com_vel)
    # governor: after a hard push the PD law can demand more horizontal
    # deceleration than the contact wrenches can supply (the ZMP would have
    # to leave the support polygon), which makes this level infeasible.
    # Bound the demand by the inverted-pendulum authority of the support
    # polygon so the task asks for the maximum achievable deceleration.
    corners = []
    for c in model.contacts:
        if not contacts.get(c.name, False):
            continue
        _, pos, rot, _ = _wrench_map(kin, c)
        lxm, lxp, lym, lyp = c.half_extents
        for sx, sy in ((lxp, lyp), (lxp, -lym), (-lxm, lyp), (-lxm, -lym)):
            corners.append(pos + rot @ np.array([sx, sy, 0.0]))
    if corners:
        corners = np.array(corners)
        g = abs(model.gravity[2])
        height = max(com_pos[2] - np.mean(corners[:, 2]), 0.1)
        s = config.zmp_authority_scale
        for ax in (0, 1):
            lo = s * (corners[:, ax].min() - com_pos[ax])
            hi = s * (corners[:, ax].max() - com_pos[ax])
            a_com[ax] = np.clip(a_com[ax], g / height * lo, g / height * hi)
        a_com[2] = max(a_com[2], -s * g)   # total normal force stays non-negative
    else:
        # airborne: the CoM is ballistic, so free fall is the only achievable
        # demand; the acceleration freedom goes to foot placement instead
        a_com = np.asarray(model.gravity, dtype=float).copy()
    level3 = Level(
        A=np.hstack([cm.A_G[3:], np.zeros((3, 6 * k))]),
        b=mass * a_com - cm.adot_qdot[3:],
        name="linear_momentum",
    )

    # --- level 4: torso orientation; contact force regulation ---------------
    tg = config.torso_gains
    J_t = kin.point_jacobian(0, kin.p[0])[:3]
    a_torso = tg.kp * rot_log(refs.torso_rot @ kin.R[0].T) + tg.kd * (refs.torso_angvel - kin.w[0])
    A4_rows = [np.hstack([J_t, np.zeros((3, 6 * k))])]
    b4_rows = [a_torso]
    wf = config.force_task_weight
    for i, c in enumerate(model.contacts):
        sel = np.zeros((6, n_x))
        sel[:, nv + 6 * i:nv + 6 * i + 6] = wf * np.eye(6)
        A4_rows.append(sel)
        b4_rows.append(wf * refs.forces[c.name])
    # damped least squares: without a cost on acceleration, the force rows can
    # trade huge joint accelerations (torque at the limits) for tiny force gains
    reg = config.accel_reg * np.hstack([np.eye(nv), np.zeros((nv, 6 * k))])
    A4_rows.append(reg)
    b4_rows.append(np.zeros(nv))
    level4 = Level(A=np.vstack(A4_rows), b=np.concatenate(b4_rows), name="torso_and_forces")

    return [level1, level2, level3, level4], data


def split_solution(model, x):
    nv = model.nv
    qdd = x[:nv]
    F = {c.name: x[nv + 6 * i:nv + 6 * i + 6] for i, c in enumerate(model.contacts)}
    return qdd, F


def extract_torque(model, state, qdd_opt, F_opt, data=None, kin=None):
    """Actuated torques tau = S_a (M qdd + h) - S_a sum J_c^T F (foot-frame wrenches)."""
    if data is None:
        data = hierarchy_data(model, state, kin=kin)
    gen = data.M @ qdd_opt + data.h
    for name, F in F_opt.items():
        gen -= data.B[name] @ F
    return gen[6:]


def optimized_zmp(F_opt, f_min=1e-6):
    """ZMP of each optimized foot-frame wrench (None where unloaded)."""
    return {name: measured_zmp(F, f_min=f_min) for name, F in F_opt.items()}


def joint_command(tau_opt, qdot_des_prev, qdd_opt_joints, state, params, dt, velocity_limits=None):
    """Joint currents from the optimized torque plus friction and velocity terms.

    Returns (currents, new desired joint velocity).  The desired velocity is
    a leaky integral of the optimized joint accelerations, clamped at the
    joint velocity limits and kept within ``track_band`` of the measured
    velocity: during torque saturation the integral would otherwise run far
    ahead of the joint and the stored tracking error discharges as a velocity
    kick once authority returns.
    """
    qdot_des = params.leak * qdot_des_prev + qdd_opt_joints * dt
    qdot_des = np.clip(qdot_des, state.dq - params.track_band,
                       state.dq + params.track_band)
    if velocity_limits is not None:
        qdot_des = np.clip(qdot_des, -velocity_limits, velocity_limits)
    tau_f = friction_compensation(qdot_des, params)
    tau_qd = params.k_qdot * (qdot_des - state.dq)
    currents = params.k_i * (tau_opt + params.k_f * tau_f + tau_qd)
    return currents, qdot_des


@dataclass
class TickResult:
    currents: np.ndarray
    solution: WbcSolution
    refs: References
    zmp: dict
    contacts: dict
    compute_time: float
    qdot_des: np.ndarray


class BalanceController:
    """One balance control loop: planner -> hierarchy -> hQP -> joint currents.

    Owns the planner references and the desired-velocity integrator; use one
    instance per control loop.
    """

    def __init__(self, model, config=None, joint_params=None, solver=None):
        self.model = model
        self.config = config or HierarchyConfig()
        self.joint_params = joint_params or JointControlParams.from_model(model)
        self.solver = solver or HierarchySolver()
        self.refs = None
        self.qdot_des = np.zeros(model.n_joints)
        self._prev_contacts = None
        self._safe_streak = {}
        self.velocity_limits = np.array([j.velocity_limit for j in model.joints])

    def reset(self, state):
        self.refs = initial_references(self.model, state, self.config)
        self.qdot_des = state.dq.copy()
        self._prev_contacts = None
        self._safe_streak = {c.name: self.config.snap_ticks for c in self.model.contacts}
        self.solver.reset()

    def tick(self, state, foot_wrenches, dt):
        """One control step; ``foot_wrenches`` maps contact names to foot-frame wrenches."""
        t0 = time.perf_counter()
        model = self.model
        if self.refs is None:
            self.reset(state)
        kin = Kinematics(model, state)
        contacts = {}
        zmp = {}
        for c in model.contacts:
            w = foot_wrenches.get(c.name)
            z = measured_zmp(w, f_min=self.config.zmp_force_min) if w is not None else None
            zmp[c.name] = z
            # hysteresis: engage above the ZMP-valid threshold, release only
            # near zero force, so brief unloading does not flap the contact set
            was = self._prev_contacts.get(c.name, False) if self._prev_contacts else False
            f_z = w[5] if w is not None else 0.0
            contacts[c.name] = f_z > (0.25 * self.config.zmp_force_min if was
                                      else self.config.zmp_force_min)
            safe = (contacts[c.name] and z is not None
                    and zmp_in_safe_region(z, c, self.config.safe_region_scale))
            self._safe_streak[c.name] = self._safe_streak.get(c.name, 0) + 1 if safe else 0
        self.refs = plan_references(model, state, zmp, contacts, self.config, self.refs,
                                    kin=kin, safe_streak=self._safe_streak, dt=dt,
                                    wrenches=foot_wrenches)

        levels, data = build_hierarchy(model, state, self.refs, self.config, contacts, kin=kin)
        sol = self.solver.solve(levels, data.n_x)
        for _ in range(3):
            if sol.per_level[2].residual_sq <= 1e-16:
                break
            # momentum demand infeasible under the contact and torque
            # constraints (hard push, foot scuffing): relax the target to the
            # achieved momentum rate -- maximal effort with a consistent task
            levels[2].b = levels[2].A @ sol.x
            sol = self.solver.solve(levels, data.n_x)
        qdd, F = split_solution(model, sol.x)
        tau = extract_torque(model, state, qdd, F, data=data)
        wbc = WbcSolution(qdd_opt=qdd, F_opt=F, tau_opt=tau, diagnostics=sol)

        if self._prev_contacts is not None and self._prev_contacts != contacts:
            self.qdot_des = state.dq.copy()
        self._prev_contacts = dict(contacts)
        currents, self.qdot_des = joint_command(
            tau, self.qdot_des, qdd[model.nv - model.n_joints:], state,
            self.joint_params, dt, velocity_limits=self.velocity_limits)
        return TickResult(
            currents=currents, solution=wbc, refs=self.refs, zmp=zmp,
            contacts=contacts, compute_time=time.perf_counter() - t0,
            qdot_des=self.qdot_des.copy(),
        )
