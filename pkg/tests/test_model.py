"""Robot description: building, validation, document round trips, oracle dynamics."""

import numpy as np
import pytest
import sympy as sp

from conftest import random_state
from wholebody import dynamics
from wholebody.model import (
    ModelError,
    RobotState,
    build_biped,
    build_leg,
    build_pendulum,
    build_planar_triple,
    load_model,
    serialize_model,
    standing_state,
)


def test_pendulum_document_round_trip(pendulum):
    text = serialize_model(pendulum)
    model = load_model(text)
    assert model.n_joints == 1
    assert len(model.links) == 2
    assert not model.floating_base
    assert serialize_model(model) == text


def test_negative_mass_rejected(pendulum):
    text = serialize_model(pendulum).replace("mass 1.0", "mass -1.0", 1)
    with pytest.raises(ModelError, match="mass"):
        load_model(text)


def test_biped_document_round_trip(biped):
    text = serialize_model(biped)
    model = load_model(text)
    assert model.n_joints == 12
    assert model.total_mass == pytest.approx(43.0, abs=1e-9)
    assert serialize_model(model) == text
    # field-wise equality on a sample of numeric fields
    for a, b in zip(biped.links, model.links):
        assert a.name == b.name
        np.testing.assert_allclose(a.inertia, b.inertia, atol=0.0)
        np.testing.assert_allclose(a.com, b.com, atol=0.0)
    for a, b in zip(biped.joints, model.joints):
        assert a.name == b.name
        np.testing.assert_allclose(a.axis, b.axis, atol=0.0)
        assert a.position_limits == b.position_limits


def test_biped_structure(biped):
    assert biped.floating_base
    assert biped.nv == 18
    assert len(biped.contacts) == 2
    for c in biped.contacts:
        assert len(c.half_extents) == 4
        assert all(h > 0 for h in c.half_extents)
    names = [j.name for j in biped.joints]
    assert names[:6] == ["l_hip_yaw", "l_hip_roll", "l_hip_pitch",
                         "l_knee_pitch", "l_ankle_pitch", "l_ankle_roll"]
    # per-joint mass distribution sums to the totals
    assert sum(l.mass for l in biped.links) == pytest.approx(43.0, abs=1e-12)


def test_biped_mass_matrix_pd_at_random_states(biped):
    rng = np.random.default_rng(3)
    for _ in range(10):
        st = random_state(biped, rng)
        M = dynamics.mass_matrix(biped, st)
        np.testing.assert_allclose(M, M.T, atol=1e-10)
        assert np.linalg.eigvalsh(M)[0] > 0.0


def test_planar_triple_structure(triple):
    assert triple.n_joints == 3
    assert len(triple.links) == 4
    # symmetric zero configuration: chain hangs straight down the z axis
    st = RobotState.zero(triple)
    fk = dynamics.forward_kinematics(triple, st)
    pos, _, _ = fk["tip"]
    np.testing.assert_allclose(pos, [0.0, 0.0, -1.2], atol=1e-12)


def _lagrangian_oracle():
    """Symbolic planar 3-link dynamics: M(q) and full inverse-dynamics torque."""
    masses, lengths = (3.0, 2.0, 1.0), (0.5, 0.4, 0.3)
    q = sp.symbols("q1:4")
    qd = sp.symbols("qd1:4")
    qdd = sp.symbols("qdd1:4")
    g = 9.81
    phi = [sum(q[: i + 1]) for i in range(3)]

    def u(p):
        return sp.Matrix([sp.sin(p), -sp.cos(p)])    # (x, z) unit vector

    coms, base = [], sp.Matrix([0, 0])
    for i in range(3):
        coms.append(base + (lengths[i] / 2) * u(phi[i]))
        base = base + lengths[i] * u(phi[i])
    T = 0
    for i in range(3):
        v = sp.Matrix([sum(sp.diff(coms[i][k], q[j]) * qd[j] for j in range(3))
                       for k in range(2)])
        phid = sum(qd[: i + 1])
        inertia = masses[i] * lengths[i] ** 2 / 12
        T += masses[i] / 2 * (v.T * v)[0] + inertia / 2 * phid ** 2
    V = sum(masses[i] * g * coms[i][1] for i in range(3))
    L = T - V
    M = sp.Matrix([[sp.diff(sp.diff(T, qd[i]), qd[j]) for j in range(3)]
                   for i in range(3)])
    tau = []
    for k in range(3):
        dLdqd = sp.diff(L, qd[k])
        ddt = sum(sp.diff(dLdqd, q[j]) * qd[j] + sp.diff(dLdqd, qd[j]) * qdd[j]
                  for j in range(3))
        tau.append(ddt - sp.diff(L, q[k]))
    return sp.lambdify(q, M, "numpy"), sp.lambdify(q + qd + qdd, tau, "numpy")


def test_planar_triple_matches_lagrangian_oracle(triple):
    f_M, f_tau = _lagrangian_oracle()
    rng = np.random.default_rng(11)
    for _ in range(10):
        st = RobotState.zero(triple)
        st.q = rng.uniform(-2.0, 2.0, 3)
        st.dq = rng.standard_normal(3)
        qdd = rng.standard_normal(3)
        np.testing.assert_allclose(dynamics.mass_matrix(triple, st),
                                   np.array(f_M(*st.q)), atol=1e-10)
        np.testing.assert_allclose(dynamics.rnea(triple, st, qdd),
                                   np.array(f_tau(*st.q, *st.dq, *qdd)), atol=1e-9)


def test_pendulum_mass_matrix_value(pendulum):
    # rod of mass 1, length 1 about its end: I = m L^2 / 3
    st = RobotState.zero(pendulum)
    M = dynamics.mass_matrix(pendulum, st)
    assert M.shape == (1, 1)
    assert M[0, 0] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_leg_model_fixed_base(leg):
    assert not leg.floating_base
    assert leg.n_joints == 6


def test_standing_state_soles_on_ground(biped):
    for bend in (0.0, 0.25, 0.4):
        st = standing_state(biped, knee_bend=bend)
        fk = dynamics.forward_kinematics(biped, st)
        for c in biped.contacts:
            pos, rot, _ = fk[c.name]
            assert abs(pos[2]) < 2e-3
            np.testing.assert_allclose(rot, np.eye(3), atol=1e-9)


def test_state_validation(biped):
    st = RobotState.zero(biped)
    st.base_quat = np.array([1.0, 0.5, 0.0, 0.0])
    with pytest.raises(ModelError, match="quaternion"):
        st.validate(biped)
    st = RobotState.zero(biped)
    st.q = np.zeros(3)
    with pytest.raises(ModelError, match="length"):
        st.validate(biped)
