"""Rigid-body algorithms on the kinematic tree.

All quantities use world-frame hybrid coordinates: frame velocities are
(world angular velocity, world velocity of the frame origin point), angular
rows first.  The floating base contributes the first six generalized
coordinates as a body-frame twist.  All functions are pure in
(model, state) and safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from wholebody.model import RobotModel, RobotState, ModelError
from wholebody.spatial import cross3, rot_axis_angle, skew


class Kinematics:
    """Forward pass over the tree: poses and velocities of every link.

    Built once per (model, state) and shared by the dynamics routines.
    """

    def __init__(self, model: RobotModel, state: RobotState):
        state.validate(model)
        self.model = model
        nb = len(model.links)
        n = model.n_joints
        self.nv = model.nv
        self.base_offset = 6 if model.floating_base else 0

        self.parent = np.full(nb, -1, dtype=int)
        self.joint_of = np.full(nb, -1, dtype=int)   # joint driving each link
        for j, joint in enumerate(model.joints):
            self.parent[joint.child] = joint.parent
            self.joint_of[joint.child] = j

        # topological order (root first)
        order = [0]
        remaining = set(range(1, nb))
        while remaining:
            progressed = [i for i in remaining if self.parent[i] not in remaining]
            for i in sorted(progressed):
                order.append(i)
            remaining -= set(progressed)
        self.order = order

        self.R = np.zeros((nb, 3, 3))
        self.p = np.zeros((nb, 3))
        self.w = np.zeros((nb, 3))
        self.v = np.zeros((nb, 3))
        self.axis_w = np.zeros((n, 3))

        R0 = state.base_rot if model.floating_base else np.eye(3)
        self.R[0] = R0
        self.p[0] = state.base_pos if model.floating_base else np.zeros(3)
        if model.floating_base:
            self.w[0] = R0 @ state.base_twist[:3]
            self.v[0] = R0 @ state.base_twist[3:]

        q, dq = state.q, state.dq
        for i in self.order[1:]:
            j = self.joint_of[i]
            joint = model.joints[j]
            pl = joint.parent
            Rj = self.R[pl] @ joint.origin_rot
            self.p[i] = self.p[pl] + self.R[pl] @ joint.origin_pos
            self.R[i] = Rj @ rot_axis_angle(joint.axis, q[j])
            a_w = self.R[i] @ joint.axis
            self.axis_w[j] = a_w
            self.w[i] = self.w[pl] + a_w * dq[j]
            self.v[i] = self.v[pl] + cross3(self.w[pl], self.p[i] - self.p[pl])

        # world link CoMs and their velocities
        coms = np.stack([l.com for l in model.links])
        self.c = self.p + np.einsum("nij,nj->ni", self.R, coms)
        self.vc = self.v + np.cross(self.w, self.c - self.p)
        self.masses = np.array([l.mass for l in model.links])

        # ancestor joint chains, used to fill Jacobian columns
        self.ancestors = []
        for i in range(nb):
            chain, cur = [], i
            while self.parent[cur] >= 0:
                chain.append(self.joint_of[cur])
                cur = self.parent[cur]
            self.ancestors.append(chain[::-1])

        self._state = state
        self._bias_acc = None
        self._world_inertias = None
        self._com_jacobians = None

    # -- derived quantities -------------------------------------------------

    def world_inertias(self):
        """CoM inertia of every link rotated into the world frame, cached."""
        if self._world_inertias is None:
            I = np.stack([l.inertia_com for l in self.model.links])
            self._world_inertias = np.einsum("nij,njk,nlk->nil", self.R, I, self.R)
        return self._world_inertias

    def com_jacobians(self):
        """Point Jacobian at every link CoM, cached."""
        if self._com_jacobians is None:
            self._com_jacobians = [self.point_jacobian(i, self.c[i])
                                   for i in range(len(self.model.links))]
        return self._com_jacobians

    def accelerations(self, qdd):
        """Angular and origin accelerations of every link for a given qdd.

        The zero-qdd (bias) case is cached; it is shared by the nonlinear
        effects, frame bias accelerations, and the centroidal bias.
        """
        zero = not np.any(qdd)
        if zero and self._bias_acc is not None:
            return self._bias_acc
        model = self.model
        nb = len(model.links)
        wd = np.zeros((nb, 3))
        ao = np.zeros((nb, 3))
        if model.floating_base:
            R0 = self.R[0]
            wd[0] = R0 @ qdd[:3]
            ao[0] = R0 @ qdd[3:6] + cross3(self.w[0], R0 @ self._state.base_twist[3:])
        dq = self._state.dq
        off = self.base_offset
        for i in self.order[1:]:
            j = self.joint_of[i]
            pl = self.parent[i]
            a_w = self.axis_w[j]
            r = self.p[i] - self.p[pl]
            wd[i] = wd[pl] + a_w * qdd[off + j] + cross3(self.w[pl], a_w * dq[j])
            ao[i] = ao[pl] + cross3(wd[pl], r) + cross3(self.w[pl], cross3(self.w[pl], r))
        if zero:
            self._bias_acc = (wd, ao)
        return wd, ao

    def point_jacobian(self, link, point):
        """6 x nv hybrid Jacobian of a point rigidly attached to a link."""
        J = np.zeros((6, self.nv))
        if self.model.floating_base:
            R0 = self.R[0]
            J[:3, :3] = R0
            J[3:, :3] = -skew(point - self.p[0]) @ R0
            J[3:, 3:6] = R0
        off = self.base_offset
        for j in self.ancestors[link]:
            a_w = self.axis_w[j]
            child = self.model.joints[j].child
            J[:3, off + j] = a_w
            J[3:, off + j] = cross3(a_w, point - self.p[child])
        return J

    def frame(self, name):
        """(link index, world position, world rotation) of a link or contact frame."""
        for c in self.model.contacts:
            if c.name == name:
                pos = self.p[c.link] + self.R[c.link] @ c.offset_pos
                return c.link, pos, self.R[c.link] @ c.offset_rot
        for i, l in enumerate(self.model.links):
            if l.name == name:
                return i, self.p[i].copy(), self.R[i].copy()
        raise ModelError(f"unknown frame '{name}'")

    def frame_velocity(self, name):
        link, pos, _ = self.frame(name)
        return np.concatenate([self.w[link], self.v[link] + cross3(self.w[link], pos - self.p[link])])


def forward_kinematics(model, state, kin=None):
    """World pose and hybrid velocity of every link and contact frame.

    Returns {name: (position, rotation, velocity6)}.
    """
    kin = kin or Kinematics(model, state)
    out = {}
    for i, l in enumerate(model.links):
        vel = np.concatenate([kin.w[i], kin.v[i]])
        out[l.name] = (kin.p[i].copy(), kin.R[i].copy(), vel)
    for c in model.contacts:
        pos = kin.p[c.link] + kin.R[c.link] @ c.offset_pos
        rot = kin.R[c.link] @ c.offset_rot
        vel = np.concatenate([kin.w[c.link], kin.v[c.link] + cross3(kin.w[c.link], pos - kin.p[c.link])])
        out[c.name] = (pos, rot, vel)
    return out


def frame_jacobian(model, state, frame, kin=None):
    """6 x nv hybrid Jacobian of a named frame, angular rows first."""
    kin = kin or Kinematics(model, state)
    link, pos, _ = kin.frame(frame)
    return kin.point_jacobian(link, pos)


def jdot_qdot(model, state, frame, kin=None):
    """Bias acceleration of a frame: its hybrid acceleration at qdd = 0."""
    kin = kin or Kinematics(model, state)
    link, pos, _ = kin.frame(frame)
    wd, ao = kin.accelerations(np.zeros(model.nv))
    r = pos - kin.p[link]
    lin = ao[link] + cross3(wd[link], r) + cross3(kin.w[link], cross3(kin.w[link], r))
    return np.concatenate([wd[link], lin])


def rnea(model, state, qdd, external_wrenches=None, kin=None, gravity=None):
    """Inverse dynamics: generalized forces M qdd + h - sum J_c^T F_ext.

    ``external_wrenches`` maps contact-frame names to world hybrid wrenches
    [n; f] acting on the robot at the frame origin.
    """
    kin = kin or Kinematics(model, state)
    qdd = np.asarray(qdd, dtype=float)
    if qdd.shape != (model.nv,):
        raise ModelError(f"qdd must have length {model.nv}")
    g = model.gravity if gravity is None else np.asarray(gravity, dtype=float)
    wd, ao = kin.accelerations(qdd)

    nb = len(model.links)
    F = np.zeros((nb, 3))
    N = np.zeros((nb, 3))   # moment about each link origin
    inertias = kin.world_inertias()
    for i in range(nb):
        link = model.links[i]
        r = kin.c[i] - kin.p[i]
        a_c = ao[i] + cross3(wd[i], r) + cross3(kin.w[i], cross3(kin.w[i], r))
        Icw = inertias[i]
        f = link.mass * (a_c - g)
        n_c = Icw @ wd[i] + cross3(kin.w[i], Icw @ kin.w[i])
        F[i] = f
        N[i] = n_c + cross3(r, f)

    for i in reversed(kin.order[1:]):
        pl = kin.parent[i]
        F[pl] += F[i]
        N[pl] += N[i] + cross3(kin.p[i] - kin.p[pl], F[i])

    tau = np.zeros(model.nv)
    off = kin.base_offset
    if model.floating_base:
        R0 = kin.R[0]
        tau[:3] = R0.T @ N[0]
        tau[3:6] = R0.T @ F[0]
    # joint row j: axis moment of the accumulated subtree wrench at the joint point
    for j, joint in enumerate(model.joints):
        child = joint.child
        tau[off + j] = kin.axis_w[j] @ N[child]

    if external_wrenches:
        for name, wrench in external_wrenches.items():
            link, pos, _ = kin.frame(name)
            J = kin.point_jacobian(link, pos)
            tau -= J.T @ np.asarray(wrench, dtype=float)
    return tau


def mass_matrix(model, state, kin=None):
    """Generalized inertia matrix via composite rigid-body summation."""
    kin = kin or Kinematics(model, state)
    nv = model.nv
    M = np.zeros((nv, nv))
    jacs = kin.com_jacobians()
    inertias = kin.world_inertias()
    for i, link in enumerate(model.links):
        J = jacs[i]
        Icw = inertias[i]
        Ja, Jl = J[:3], J[3:]
        M += Ja.T @ Icw @ Ja + link.mass * (Jl.T @ Jl)
    return M


def nonlinear_effects(model, state, kin=None):
    """Coriolis, centrifugal and gravity vector h = C + G."""
    kin = kin or Kinematics(model, state)
    return rnea(model, state, np.zeros(model.nv), kin=kin)


def gravity_vector(model, state):
    """Gravity part of h (evaluated with zero velocities)."""
    still = state.copy()
    still.dq = np.zeros_like(still.dq)
    still.base_twist = np.zeros(6)
    return rnea(model, still, np.zeros(model.nv))


def com(model, state, kin=None):
    """CoM position, CoM velocity, and total mass."""
    kin = kin or Kinematics(model, state)
    m = kin.masses.sum()
    pos = kin.masses @ kin.c / m
    vel = kin.masses @ kin.vc / m
    return pos, vel, m


@dataclass
class CentroidalMatrix:
    """Map from generalized velocities to spatial momentum about the CoM."""

    A_G: np.ndarray          # 6 x nv, angular rows first
    adot_qdot: np.ndarray    # 6-vector bias (d/dt A_G) qdot


def centroidal_momentum(model, state, kin=None):
    """Centroidal momentum matrix and its velocity-product bias."""
    if not model.floating_base:
        raise ModelError("centroidal momentum requires a floating-base model")
    kin = kin or Kinematics(model, state)
    c, _, _ = com(model, state, kin=kin)
    nv = model.nv
    A = np.zeros((6, nv))
    jacs = kin.com_jacobians()
    inertias = kin.world_inertias()
    for i, link in enumerate(model.links):
        J = jacs[i]
        Icw = inertias[i]
        A[:3] += Icw @ J[:3] + skew(kin.c[i] - c) @ (link.mass * J[3:])
        A[3:] += link.mass * J[3:]

    wd, ao = kin.accelerations(np.zeros(nv))
    bias = np.zeros(6)
    for i, link in enumerate(model.links):
        r = kin.c[i] - kin.p[i]
        a_c = ao[i] + cross3(wd[i], r) + cross3(kin.w[i], cross3(kin.w[i], r))
        Icw = inertias[i]
        kdot = Icw @ wd[i] + cross3(kin.w[i], Icw @ kin.w[i])
        bias[:3] += kdot + cross3(kin.c[i] - c, link.mass * a_c)
        bias[3:] += link.mass * a_c
    return CentroidalMatrix(A_G=A, adot_qdot=bias)


# ---------------------------------------------------------------------------
# Identification regressor


def band_sign(dq, qdot_star):
    """sign(dq) outside the +-qdot_star band, linear inside it."""
    dq = np.asarray(dq, dtype=float)
    return np.clip(dq / qdot_star, -1.0, 1.0)


def param_count(model):
    return 10 * len(model.links) + 2 * model.n_joints


def pi_vector(model):
    """Stacked dynamic parameters: per link [m, m*c, I6 about origin], per joint [F_c, F_v]."""
    parts = []
    for l in model.links:
        I = l.inertia
        parts.append([l.mass, *(l.mass * l.com),
                      I[0, 0], I[0, 1], I[0, 2], I[1, 1], I[1, 2], I[2, 2]])
    pi = np.concatenate([np.array(p) for p in parts])
    fric = np.array([[j.friction_coulomb, j.friction_viscous] for j in model.joints]).ravel() \
        if model.joints else np.zeros(0)
    return np.concatenate([pi, fric])


_INERTIA_ENTRIES = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def regressor(model, state, qdd, qdot_star=0.05, kin=None, gravity=None):
    """Identification matrix Y with Y pi = rnea + friction on the actuated rows.

    Friction columns multiply [F_c * band_sign(dq), F_v * dq] per joint.
    """
    kin = kin or Kinematics(model, state)
    qdd = np.asarray(qdd, dtype=float)
    if qdd.shape != (model.nv,):
        raise ModelError(f"qdd must have length {model.nv}")
    g = model.gravity if gravity is None else np.asarray(gravity, dtype=float)
    wd, ao = kin.accelerations(qdd)

    nv = model.nv
    Y = np.zeros((nv, param_count(model)))
    for i in range(len(model.links)):
        R, w = kin.R[i], kin.w[i]
        wdi, a_o = wd[i], ao[i]
        cols = np.zeros((6, 10))
        ag = a_o - g
        cols[3:, 0] = ag
        for k in range(3):
            hw = R[:, k]
            cols[3:, 1 + k] = cross3(wdi, hw) + cross3(w, cross3(w, hw))
            cols[:3, 1 + k] = cross3(hw, ag)
        for e, (r_, c_) in enumerate(_INERTIA_ENTRIES):
            E = np.zeros((3, 3))
            E[r_, c_] = 1.0
            E[c_, r_] = 1.0
            Iw = R @ E @ R.T
            cols[:3, 4 + e] = Iw @ wdi + cross3(w, Iw @ w)
        J = kin.point_jacobian(i, kin.p[i])
        Y[:, 10 * i:10 * i + 10] = J.T @ cols

    off = kin.base_offset
    base = 10 * len(model.links)
    s = band_sign(state.dq, qdot_star)
    for j in range(model.n_joints):
        Y[off + j, base + 2 * j] = s[j]
        Y[off + j, base + 2 * j + 1] = state.dq[j]
    return Y


def batch_regressor(model, Q, DQ, QDD, qdot_star=0.05, gravity=None):
    """Identification matrices for N samples at once, fixed-base models only.

    Vectorized counterpart of :func:`regressor`: returns (N, n, dim pi) with
    identical rows.  Used by the identification pipeline, where per-sample
    Python overhead dominates.
    """
    if model.floating_base:
        raise ModelError("batch_regressor supports fixed-base models only")
    Q = np.asarray(Q, dtype=float)
    DQ = np.asarray(DQ, dtype=float)
    QDD = np.asarray(QDD, dtype=float)
    N, n = Q.shape
    nb = len(model.links)
    g = model.gravity if gravity is None else np.asarray(gravity, dtype=float)

    parent = np.full(nb, -1, dtype=int)
    joint_of = np.full(nb, -1, dtype=int)
    for j, joint in enumerate(model.joints):
        parent[joint.child] = joint.parent
        joint_of[joint.child] = j
    order = [0]
    remaining = set(range(1, nb))
    while remaining:
        ready = sorted(i for i in remaining if parent[i] not in remaining)
        order += ready
        remaining -= set(ready)
    ancestors = []
    for i in range(nb):
        chain, cur = [], i
        while parent[cur] >= 0:
            chain.append(joint_of[cur])
            cur = parent[cur]
        ancestors.append(chain[::-1])

    eye = np.broadcast_to(np.eye(3), (N, 3, 3))
    R = [None] * nb
    p = [None] * nb
    w = [None] * nb
    v = [None] * nb
    wd = [None] * nb
    ao = [None] * nb
    axis_w = [None] * n
    R[0] = np.array(eye)
    p[0] = np.zeros((N, 3))
    w[0] = np.zeros((N, 3))
    v[0] = np.zeros((N, 3))
    wd[0] = np.zeros((N, 3))
    ao[0] = np.zeros((N, 3))
    for i in order[1:]:
        j = joint_of[i]
        joint = model.joints[j]
        K = skew(joint.axis)
        th = Q[:, j]
        Rj = (np.eye(3) + np.sin(th)[:, None, None] * K
              + (1.0 - np.cos(th))[:, None, None] * (K @ K))
        Rp = R[parent[i]] @ joint.origin_rot
        R[i] = Rp @ Rj
        p[i] = p[parent[i]] + np.einsum("nij,j->ni", R[parent[i]], joint.origin_pos)
        a_w = np.einsum("nij,j->ni", R[i], joint.axis)
        axis_w[j] = a_w
        w[i] = w[parent[i]] + a_w * DQ[:, j:j + 1]
        r = p[i] - p[parent[i]]
        v[i] = v[parent[i]] + np.cross(w[parent[i]], r)
        wd[i] = (wd[parent[i]] + a_w * QDD[:, j:j + 1]
                 + np.cross(w[parent[i]], a_w * DQ[:, j:j + 1]))
        ao[i] = (ao[parent[i]] + np.cross(wd[parent[i]], r)
                 + np.cross(w[parent[i]], np.cross(w[parent[i]], r)))

    Y = np.zeros((N, n, param_count(model)))
    for i in range(nb):
        ag = ao[i] - g
        cols = np.zeros((N, 6, 10))
        cols[:, 3:, 0] = ag
        for k in range(3):
            hw = R[i][:, :, k]
            cols[:, 3:, 1 + k] = np.cross(wd[i], hw) + np.cross(w[i], np.cross(w[i], hw))
            cols[:, :3, 1 + k] = np.cross(hw, ag)
        for e, (r_, c_) in enumerate(_INERTIA_ENTRIES):
            E = np.zeros((3, 3))
            E[r_, c_] = 1.0
            E[c_, r_] = 1.0
            Iw = R[i] @ E @ R[i].transpose(0, 2, 1)
            cols[:, :3, 4 + e] = (np.einsum("nij,nj->ni", Iw, wd[i])
                                  + np.cross(w[i], np.einsum("nij,nj->ni", Iw, w[i])))
        J = np.zeros((N, 6, n))
        for j in ancestors[i]:
            child = model.joints[j].child
            J[:, :3, j] = axis_w[j]
            J[:, 3:, j] = np.cross(axis_w[j], p[i] - p[child])
        Y[:, :, 10 * i:10 * i + 10] = np.einsum("nij,nik->njk", J, cols)

    base = 10 * nb
    s = band_sign(DQ, qdot_star)
    for j in range(n):
        Y[:, j, base + 2 * j] = s[:, j]
        Y[:, j, base + 2 * j + 1] = DQ[:, j]
    return Y


def selection_matrices(model):
    """S_f (floating rows) and S_a (actuated rows) selectors."""
    nv = model.nv
    n = model.n_joints
    S_f = np.zeros((6, nv))
    S_f[:, :6] = np.eye(6)
    S_a = np.zeros((n, nv))
    S_a[:, nv - n:] = np.eye(n)
    return S_f, S_a


def kinetic_energy(model, state, kin=None):
    kin = kin or Kinematics(model, state)
    v = state.velocity(model)
    return 0.5 * v @ mass_matrix(model, state, kin=kin) @ v


def potential_energy(model, state, kin=None):
    kin = kin or Kinematics(model, state)
    return float(-kin.masses @ (kin.c @ model.gravity))
