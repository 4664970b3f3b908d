"""Desk-scale plant for the balance controller.

Floating-base forward dynamics with penalty contact at the four sole
corners, kinematically prescribed support surfaces (flat ground, seesaw
incline ramps, translating boards), impulse disturbances on the torso, and
ground-truth instrumentation.  Physics and control run at the same 1 kHz
tick; the control command is computed from the start-of-tick state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from wholebody import dynamics
from wholebody.control import BalanceController, HierarchyConfig, JointControlParams
from wholebody.dynamics import Kinematics
from wholebody.model import build_biped, standing_state
from wholebody.spatial import cross3, quat_integrate, rot_axis_angle, rot_log


class SimError(RuntimeError):
    """Numerical divergence or invalid simulation input."""


# ---------------------------------------------------------------------------
# Prescribed support-surface motion


def _smooth_ramp(t, t0, t1):
    """Cosine ramp 0 -> 1 over [t0, t1] and its time derivative."""
    if t <= t0:
        return 0.0, 0.0
    if t >= t1:
        return 1.0, 0.0
    s = (t - t0) / (t1 - t0)
    return 0.5 * (1.0 - np.cos(np.pi * s)), 0.5 * np.pi * np.sin(np.pi * s) / (t1 - t0)


@dataclass
class SurfaceMotion:
    """Kinematically prescribed support plane (infinite inertia).

    The plane passes through ``pivot`` + translation(t) with normal
    R(t) e_z, R(t) = Rx(ax) Ry(ay).  Subclasses/instances provide the
    scalar profiles; the default surface is flat and static.
    """

    pivot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: object = None       # t -> (pos3, vel3)
    incline: object = None           # t -> (ax, ay, dax, day)

    def pose(self, t):
        """(origin, rotation, angular velocity, origin linear velocity) at time t."""
        pos, vel = (np.zeros(3), np.zeros(3)) if self.translation is None else self.translation(t)
        if self.incline is None:
            ax = ay = dax = day = 0.0
        else:
            ax, ay, dax, day = self.incline(t)
        Rx = rot_axis_angle(np.array([1.0, 0.0, 0.0]), ax)
        Ry = rot_axis_angle(np.array([0.0, 1.0, 0.0]), ay)
        R = Rx @ Ry
        omega = dax * np.array([1.0, 0.0, 0.0]) + day * (Rx @ np.array([0.0, 1.0, 0.0]))
        return self.pivot + pos, R, omega, vel


def flat_motion():
    return SurfaceMotion()


def seesaw_motion(max_angle, t_x=(0.5, 2.5), t_y=(3.5, 5.5), pivot=(0.0, 0.0, 0.0)):
    """Incline ramp to ``max_angle`` about X, then about Y, holding each."""

    def incline(t):
        sx, dsx = _smooth_ramp(t, *t_x)
        sy, dsy = _smooth_ramp(t, *t_y)
        return max_angle * sx, max_angle * sy, max_angle * dsx, max_angle * dsy

    return SurfaceMotion(pivot=np.array(pivot, dtype=float), incline=incline)


def translate_motion(amplitude, omega, phase=0.0, axis=0, ramp=1.0):
    """Sinusoidal translation along a world axis, amplitude-ramped from rest."""

    def translation(t):
        s, ds = _smooth_ramp(t, 0.0, ramp)
        pos = np.zeros(3)
        vel = np.zeros(3)
        pos[axis] = amplitude * s * np.sin(omega * t + phase)
        vel[axis] = amplitude * (ds * np.sin(omega * t + phase)
                                 + s * omega * np.cos(omega * t + phase))
        return pos, vel

    return SurfaceMotion(translation=translation)


# ---------------------------------------------------------------------------
# Disturbances


@dataclass
class Impulse:
    start: float
    duration: float
    force: np.ndarray        # world-frame N
    point: np.ndarray        # application point in the torso frame

    def __post_init__(self):
        if self.duration <= 0:
            raise SimError("impulse duration must be positive")

    @property
    def magnitude(self):
        """Impulse magnitude integral |F| dt, N*s."""
        return float(np.linalg.norm(self.force) * self.duration)


@dataclass
class DisturbanceProfile:
    impulses: list = field(default_factory=list)

    def active_wrench(self, t, kin):
        """World hybrid wrench on the torso origin from all active impulses."""
        total = None
        for imp in self.impulses:
            if imp.start <= t < imp.start + imp.duration:
                pt = kin.p[0] + kin.R[0] @ imp.point
                w = np.concatenate([cross3(pt - kin.p[0], imp.force), imp.force])
                total = w if total is None else total + w
        return total


# ---------------------------------------------------------------------------
# World and stepping


@dataclass
class ContactParams:
    stiffness: float = 1e5        # N/m per corner
    damping: float = 1e3          # N*s/m per corner
    stiction_velocity: float = 1e-3   # m/s regularization threshold
    mu: float = 0.6


class World:
    """One simulated robot on (possibly moving) support surfaces."""

    def __init__(self, model, state, support=None, contact=None,
                 friction_mismatch=0.10, disturbance=None):
        self.model = model
        self.state = state
        self.time = 0.0
        # support maps contact names to surfaces; feet without one are contact-free
        self.support = {c.name: flat_motion() for c in model.contacts} if support is None else support
        self.contact = contact or ContactParams()
        self.disturbance = disturbance or DisturbanceProfile()
        # plant-side (true) actuator friction, offset from the model's values
        self.friction_coulomb = (1.0 + friction_mismatch) * np.array(
            [j.friction_coulomb for j in model.joints])
        self.friction_viscous = (1.0 + friction_mismatch) * np.array(
            [j.friction_viscous for j in model.joints])
        self.k_i = np.array([j.current_torque_coeff for j in model.joints])
        self._corners = {}
        for c in model.contacts:
            lxm, lxp, lym, lyp = c.half_extents
            self._corners[c.name] = np.array([
                [lxp, lyp, 0.0], [lxp, -lym, 0.0],
                [-lxm, lyp, 0.0], [-lxm, -lym, 0.0],
            ])

    def contact_forces(self, kin=None):
        """Per-foot (world hybrid wrench at sole origin, per-corner world forces)."""
        kin = kin or Kinematics(self.model, self.state)
        cp = self.contact
        out = {}
        for c in self.model.contacts:
            if c.name not in self.support:
                out[c.name] = (np.zeros(6), np.zeros((4, 3)))
                continue
            p_sole = kin.p[c.link] + kin.R[c.link] @ c.offset_pos
            R_sole = kin.R[c.link] @ c.offset_rot
            p_s, R_s, w_s, v_s = self.support[c.name].pose(self.time)
            wrench = np.zeros(6)
            forces = np.zeros((4, 3))
            corners = self._corners[c.name]
            for k in range(4):
                X = p_sole + R_sole @ corners[k]
                d = R_s.T @ (X - p_s)
                if d[2] >= 0.0:
                    continue
                v_pt = kin.v[c.link] + cross3(kin.w[c.link], X - kin.p[c.link])
                v_surf = v_s + cross3(w_s, X - p_s)
                u = R_s.T @ (v_pt - v_surf)
                fn = -cp.stiffness * d[2] - cp.damping * u[2]
                if fn <= 0.0:
                    continue
                ut = u[:2]
                speed = float(np.hypot(ut[0], ut[1]))
                ft = -cp.mu * fn * ut / max(speed, cp.stiction_velocity)
                f_w = R_s @ np.array([ft[0], ft[1], fn])
                forces[k] = f_w
                wrench[:3] += cross3(X - p_sole, f_w)
                wrench[3:] += f_w
            out[c.name] = (wrench, forces)
        return out


def contact_wrench(world, foot, kin=None):
    """Foot-frame sensor wrench at the sole center plus per-corner world forces."""
    kin = kin or Kinematics(world.model, world.state)
    c = world.model.contact_frame(foot)
    R_sole = kin.R[c.link] @ c.offset_rot
    wrench_w, forces = world.contact_forces(kin=kin)[foot]
    local = np.concatenate([R_sole.T @ wrench_w[:3], R_sole.T @ wrench_w[3:]])
    return local, forces


def foot_wrenches(world, kin=None):
    """Foot-frame sensor wrenches for every contact frame in one contact pass."""
    kin = kin or Kinematics(world.model, world.state)
    contact = world.contact_forces(kin=kin)
    out = {}
    for c in world.model.contacts:
        R_sole = kin.R[c.link] @ c.offset_rot
        wrench_w, _ = contact[c.name]
        out[c.name] = np.concatenate([R_sole.T @ wrench_w[:3], R_sole.T @ wrench_w[3:]])
    return out


def _joint_friction(world, dq, qdot_star=0.05):
    s = np.clip(dq / qdot_star, -1.0, 1.0)
    return world.friction_coulomb * s + world.friction_viscous * dq


def _contact_terms(world, kin, dt):
    """Penalty contact split for semi-implicit stepping.

    Returns (generalized force from springs and sliding friction, implicit
    velocity-damping matrix D, per-corner bookkeeping).  The damping and
    stiction parts of the contact force are linear in the new generalized
    velocity; folding them into (M + dt D) v+ keeps the 1 ms step stable,
    which an explicit evaluation is not for the light foot links.
    """
    cp = world.contact
    nv = world.model.nv
    f_gen = np.zeros(nv)
    D = np.zeros((nv, nv))
    corners = []
    for c in world.model.contacts:
        if c.name not in world.support:
            continue
        p_sole = kin.p[c.link] + kin.R[c.link] @ c.offset_pos
        R_sole = kin.R[c.link] @ c.offset_rot
        p_s, R_s, w_s, v_s = world.support[c.name].pose(world.time)
        for corner in world._corners[c.name]:
            X = p_sole + R_sole @ corner
            d = R_s.T @ (X - p_s)
            if d[2] >= 0.0:
                continue
            v_pt = kin.v[c.link] + cross3(kin.w[c.link], X - kin.p[c.link])
            v_surf = v_s + cross3(w_s, X - p_s)
            u = R_s.T @ (v_pt - v_surf)
            fn_spring = -cp.stiffness * d[2]
            fn_est = max(fn_spring - cp.damping * u[2], 0.0)
            Jp = kin.point_jacobian(c.link, X)[3:]
            normal = R_s[:, 2]
            # spring force explicit; normal damping implicit
            f_gen += Jp.T @ (normal * fn_spring)
            row_n = normal @ Jp
            D += cp.damping * np.outer(row_n, row_n)
            f_gen += cp.damping * (normal @ v_surf) * row_n
            speed = float(np.hypot(u[0], u[1]))
            # regularized Coulomb friction as implicit viscosity: an explicit
            # saturated force flips sign across the stiction threshold every
            # tick and rattles the light yaw/ankle joints at 1 kHz
            ct = cp.mu * fn_est / max(speed, cp.stiction_velocity)
            for ax in range(2):
                row = R_s[:, ax] @ Jp
                D += ct * np.outer(row, row)
                f_gen += ct * (R_s[:, ax] @ v_surf) * row
            corners.append((c.name, X, p_sole, R_s, Jp, fn_spring, u, fn_est, speed, ct))
    return f_gen, D, corners


def step(world, joint_currents, dt):
    """Advance the plant one tick with semi-implicit Euler integration.

    Joint torque is current/k_i minus the plant's true Coulomb-viscous
    friction; contact forces come from the penalty model at the sole corners
    relative to the prescribed surfaces, with their velocity-proportional
    parts integrated implicitly.  Mutates and returns the world.
    """
    if dt > 1e-3 + 1e-12:
        raise SimError("step requires dt <= 1 ms")
    model = world.model
    state = world.state
    kin = Kinematics(model, state)

    tau = np.asarray(joint_currents, dtype=float) / world.k_i - _joint_friction(world, state.dq)
    M = dynamics.mass_matrix(model, state, kin=kin)
    h = dynamics.nonlinear_effects(model, state, kin=kin)
    rhs = -h
    off = 6 if model.floating_base else 0
    rhs[off:] += tau

    f_contact, D, corners = _contact_terms(world, kin, dt)
    rhs += f_contact
    if model.floating_base:
        dist = world.disturbance.active_wrench(world.time, kin)
        if dist is not None:
            rhs += kin.point_jacobian(0, kin.p[0]).T @ dist

    v_old = state.velocity(model)
    v_new = np.linalg.solve(M + dt * D, M @ v_old + dt * rhs)
    if not np.all(np.isfinite(v_new)):
        raise SimError(f"divergence at t={world.time:.4f} s: state={state!r}")
    qdd = (v_new - v_old) / dt

    # applied forces with the updated velocity, for instrumentation
    applied = {c.name: (np.zeros(6), np.zeros((4, 3))) for c in model.contacts}
    counts = {c.name: 0 for c in model.contacts}
    for name, X, p_sole, R_s, Jp, fn_spring, u, fn_est, speed, ct in corners:
        u_new = R_s.T @ (Jp @ v_new) + (u - R_s.T @ (Jp @ v_old))
        fn = max(fn_spring - world.contact.damping * u_new[2], 0.0)
        ft = -ct * u_new[:2]
        f_w = R_s @ np.array([ft[0], ft[1], fn])
        wrench, forces = applied[name]
        forces[counts[name] % 4] = f_w
        counts[name] += 1
        wrench[:3] += cross3(X - p_sole, f_w)
        wrench[3:] += f_w

    if model.floating_base:
        state.base_twist = v_new[:6]
        state.dq = v_new[6:]
        state.base_pos = state.base_pos + (state.base_rot @ state.base_twist[3:]) * dt
        state.base_quat = quat_integrate(state.base_quat, state.base_twist[:3], dt)
    else:
        state.dq = v_new.copy()
    state.q = state.q + state.dq * dt
    world.time += dt
    world.last_qdd = qdd
    world.last_contact = applied
    return world


# ---------------------------------------------------------------------------
# Scenarios


@dataclass
class ScenarioConfig:
    scenario: str = "flat_push"
    horizon: float = 8.0
    dt: float = 1e-3
    seed: int = 0
    knee_bend: float | None = None   # None: per-scenario default
    total_mass: float = 43.0
    friction_mismatch: float = 0.10
    impulses: list = field(default_factory=list)
    seesaw_angle: float = np.deg2rad(6.0)
    seesaw_dynamic: bool = False
    translate_amplitude: float = 0.2
    translate_speed: float = 0.5
    balance_height_fraction: float = 0.8


def default_impulses(scenario):
    """The standard disturbance sequence of each scenario."""
    if scenario == "flat_push":
        return [Impulse(start=1.0 + 1.5 * i, duration=0.1,
                        force=np.array([mag / 0.1, 0.0, 0.0]),
                        point=np.array([0.0, 0.0, 0.15]))
                for i, mag in enumerate((8.0, 10.0, 11.0, 12.0))]
    if scenario == "moving_support":
        return [Impulse(start=3.0, duration=0.1,
                        force=np.array([0.0, 80.0, 0.0]),
                        point=np.array([0.0, 0.0, 0.15]))]
    return []


def build_world(config):
    """World + controller for a scenario config."""
    model = build_biped(total_mass=config.total_mass)
    bend = config.knee_bend
    if bend is None:
        # the translating support drags each foot up to its full amplitude
        # away from the hip, which needs leg-length headroom only a deeper
        # crouch can provide
        bend = 0.4 if config.scenario == "moving_support" else 0.25
    state = standing_state(model, knee_bend=bend)
    impulses = config.impulses or default_impulses(config.scenario)
    support = {c.name: flat_motion() for c in model.contacts}
    if config.scenario == "seesaw":
        motion = seesaw_motion(config.seesaw_angle)
        support = {c.name: motion for c in model.contacts}
    elif config.scenario == "moving_support":
        omega = config.translate_speed / config.translate_amplitude
        support = {
            "l_sole": translate_motion(config.translate_amplitude, omega, phase=0.0),
            "r_sole": translate_motion(config.translate_amplitude, omega, phase=np.pi),
        }
    elif config.scenario not in ("flat_push", "custom"):
        raise SimError(f"unknown scenario '{config.scenario}'")
    world = World(model, state, support=support,
                  friction_mismatch=config.friction_mismatch,
                  disturbance=DisturbanceProfile(impulses=list(impulses)))
    # settle the penalty springs: lower the base so the eight sole corners
    # carry the robot weight from the first tick instead of free-falling into
    # contact
    weight = model.total_mass * abs(model.gravity[2])
    state.base_pos[2] -= weight / (8.0 * world.contact.stiffness)
    controller = BalanceController(model, HierarchyConfig(),
                                   JointControlParams.from_model(model))
    return world, controller


LOG_PREFIX = ["time", "base_x", "base_y", "base_z", "quat_w", "quat_x", "quat_y", "quat_z"]


def log_columns(model):
    n = model.n_joints
    cols = list(LOG_PREFIX)
    cols += [f"q{j + 1}" for j in range(n)] + [f"dq{j + 1}" for j in range(n)]
    cols += ["ref_com_x", "ref_com_y", "ref_com_z"]
    cols += [f"resid_l{p + 1}" for p in range(4)]
    cols += [f"tau{j + 1}" for j in range(n)]
    for c in model.contacts:
        cols += [f"{c.name}_{ax}" for ax in ("nx", "ny", "nz", "fx", "fy", "fz")]
    for c in model.contacts:
        cols += [f"{c.name}_zmp_x", f"{c.name}_zmp_y"]
    for c in model.contacts:
        cols += [f"{c.name}_corners", f"{c.name}_perr_pos", f"{c.name}_perr_rot"]
    cols += ["solve_ms", "tick_ms", "degraded"]
    return cols


@dataclass
class ScenarioResult:
    verdict: str                  # "balanced" or "fallen"
    columns: list
    rows: np.ndarray
    violations: int               # joint-limit breaches (hard violations)
    tick_ms_mean: float
    tick_ms_p99: float
    qp_time: float
    projection_time: float
    level_residual_max: np.ndarray
    level_residual_mean: np.ndarray


def run_scenario(config):
    """Run the 1 kHz control + physics loop and judge the outcome.

    Verdict is "balanced" iff the CoM height stays above
    ``balance_height_fraction`` of its nominal value and no joint leaves its
    position limits over the whole horizon.  Controller infeasibility
    degrades (logged), it does not abort.
    """
    world, controller = build_world(config)
    model = world.model
    controller.reset(world.state)
    nominal_com = dynamics.com(model, world.state)[0][2]
    columns = log_columns(model)
    rows = []
    n = model.n_joints
    balanced = True
    violations = 0
    tick_times = []
    qp_time = 0.0
    proj_time = 0.0
    resid = np.zeros((4, 2))   # running max / sum per level
    steps = int(round(config.horizon / config.dt))

    for _ in range(steps):
        kin = Kinematics(model, world.state)
        contact = world.contact_forces(kin=kin)
        wrenches = {}
        for c in model.contacts:
            R_sole = kin.R[c.link] @ c.offset_rot
            w_w, _ = contact[c.name]
            wrenches[c.name] = np.concatenate([R_sole.T @ w_w[:3], R_sole.T @ w_w[3:]])
        t0 = time.perf_counter()
        res = controller.tick(world.state, wrenches, config.dt)
        tick_times.append(time.perf_counter() - t0)
        diag = res.solution.diagnostics
        qp_time += diag.qp_time
        proj_time += diag.projection_time
        for p, d in enumerate(diag.per_level):
            resid[p, 0] = max(resid[p, 0], d.residual_sq)
            resid[p, 1] += d.residual_sq

        row = [world.time, *world.state.base_pos, *world.state.base_quat,
               *world.state.q, *world.state.dq, *res.refs.com_pos]
        row += [d.residual_sq for d in diag.per_level]
        row += list(res.solution.tau_opt)
        for c in model.contacts:
            row += list(res.solution.F_opt[c.name])
        for c in model.contacts:
            z = res.zmp[c.name]
            row += [np.nan, np.nan] if z is None else [z[0], z[1]]
        for c in model.contacts:
            loaded = int(np.sum(np.linalg.norm(contact[c.name][1], axis=1) > 0.0))
            p_sole = kin.p[c.link] + kin.R[c.link] @ c.offset_pos
            R_sole = kin.R[c.link] @ c.offset_rot
            ref = res.refs.feet[c.name]
            row += [float(loaded), float(np.linalg.norm(ref.pos - p_sole)),
                    float(np.linalg.norm(rot_log(ref.rot @ R_sole.T)))]
        row += [diag.solve_time * 1e3, res.compute_time * 1e3,
                1.0 if diag.degraded_level is not None else 0.0]
        rows.append(row)

        step(world, res.currents, config.dt)

        com_z = dynamics.com(model, world.state)[0][2]
        if com_z < config.balance_height_fraction * nominal_com:
            balanced = False
        for j, joint in enumerate(model.joints):
            lo, hi = joint.position_limits
            if not (lo <= world.state.q[j] <= hi):
                violations += 1
                balanced = False
        if not balanced:
            break

    tick_ms = 1e3 * np.array(tick_times)
    count = max(len(rows), 1)
    return ScenarioResult(
        verdict="balanced" if balanced else "fallen",
        columns=columns,
        rows=np.array(rows),
        violations=violations,
        tick_ms_mean=float(tick_ms.mean()) if tick_ms.size else 0.0,
        tick_ms_p99=float(np.percentile(tick_ms, 99)) if tick_ms.size else 0.0,
        qp_time=qp_time,
        projection_time=proj_time,
        level_residual_max=resid[:, 0].copy(),
        level_residual_mean=resid[:, 1] / count,
    )


def save_log(path, result):
    header = ",".join(result.columns)
    np.savetxt(path, result.rows, delimiter=",", header=header, comments="")
