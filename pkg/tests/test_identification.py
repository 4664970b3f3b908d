"""Dynamic parameter identification: trajectories, regressors, estimation."""

import numpy as np
import pytest

from conftest import random_state
from wholebody import dynamics
from wholebody.identification import (
    FourierTrajectory,
    IdentError,
    base_parameters,
    check_limits,
    estimate_parameters,
    eval_trajectory,
    excitation_cost,
    load_dataset,
    optimize_excitation,
    predict_torque,
    random_trajectory,
    save_dataset,
    stack_regressor,
    synthesize_dataset,
    trajectory_from_text,
    trajectory_to_text,
)
from wholebody.model import RobotState


def _leg_traj(leg, seed=0):
    traj = random_trajectory(leg, np.random.default_rng(seed))
    assert traj is not None
    return traj


# ---------------------------------------------------------------------------
# trajectories


def test_constant_trajectory():
    traj = FourierTrajectory(q0=np.array([0.3, -0.2]), a=np.zeros((2, 3)),
                             b=np.zeros((2, 3)))
    q, dq, qdd = eval_trajectory(traj, np.linspace(0.0, 5.0, 11))
    np.testing.assert_allclose(q, np.tile([0.3, -0.2], (11, 1)), atol=0.0)
    np.testing.assert_allclose(dq, np.zeros((11, 2)), atol=0.0)
    np.testing.assert_allclose(qdd, np.zeros((11, 2)), atol=0.0)


def test_trajectory_derivatives_match_finite_difference():
    rng = np.random.default_rng(3)
    traj = FourierTrajectory(q0=rng.standard_normal(3),
                             a=0.3 * rng.standard_normal((3, 4)),
                             b=0.3 * rng.standard_normal((3, 4)), f0=0.25)
    h = 1e-6
    for t in (0.0, 0.37, 2.1):
        qm, dqm, _ = eval_trajectory(traj, t - h)
        qp, dqp, _ = eval_trajectory(traj, t + h)
        _, dq, qdd = eval_trajectory(traj, t)
        np.testing.assert_allclose(dq, (qp - qm) / (2 * h), atol=1e-8)
        np.testing.assert_allclose(qdd, (dqp - dqm) / (2 * h), atol=1e-8)


def test_trajectory_periodicity():
    rng = np.random.default_rng(4)
    traj = FourierTrajectory(q0=rng.standard_normal(2),
                             a=rng.standard_normal((2, 5)),
                             b=rng.standard_normal((2, 5)), f0=0.1)
    q0, dq0, qdd0 = eval_trajectory(traj, 1.3)
    q1, dq1, qdd1 = eval_trajectory(traj, 1.3 + traj.period)
    np.testing.assert_allclose(q0, q1, atol=1e-12)
    np.testing.assert_allclose(dq0, dq1, atol=1e-12)
    np.testing.assert_allclose(qdd0, qdd1, atol=1e-12)


def test_trajectory_text_round_trip():
    rng = np.random.default_rng(5)
    traj = FourierTrajectory(q0=rng.standard_normal(2),
                             a=rng.standard_normal((2, 3)),
                             b=rng.standard_normal((2, 3)), f0=0.2, duration=30.0)
    back = trajectory_from_text(trajectory_to_text(traj))
    np.testing.assert_allclose(back.q0, traj.q0, atol=0.0)
    np.testing.assert_allclose(back.a, traj.a, atol=0.0)
    np.testing.assert_allclose(back.b, traj.b, atol=0.0)
    assert back.f0 == traj.f0 and back.duration == traj.duration


def test_check_limits_names_joint(leg):
    traj = FourierTrajectory(q0=np.zeros(6), a=np.zeros((6, 1)), b=np.zeros((6, 1)))
    traj.a[2, 0] = 50.0        # far outside any position limit
    with pytest.raises(IdentError, match=leg.joints[2].name):
        check_limits(leg, traj)


# ---------------------------------------------------------------------------
# regressor stacking


def test_stack_regressor_shapes_and_consistency(leg):
    traj = _leg_traj(leg)
    ds = stack_regressor(leg, traj, 50, duration=4.0)
    n = leg.n_joints
    N = ds.t.size
    assert ds.q.shape == (N, n) and ds.Y.shape[0] == N * n
    pi = dynamics.pi_vector(leg)
    np.testing.assert_allclose(ds.tau_stacked, ds.Y @ pi, atol=1e-10)
    # row blocks agree with the per-state regressor
    for i in (0, N // 2, N - 1):
        st = RobotState.zero(leg)
        st.q, st.dq = ds.q[i], ds.dq[i]
        Yi = dynamics.regressor(leg, st, ds.qdd[i])
        np.testing.assert_allclose(ds.Y[i * n:(i + 1) * n], Yi, atol=1e-10)


def test_zero_motion_rows_are_gravity(leg):
    rng = np.random.default_rng(6)
    q0 = np.array([rng.uniform(*j.position_limits) for j in leg.joints]) * 0.5
    traj = FourierTrajectory(q0=q0, a=np.zeros((6, 1)), b=np.zeros((6, 1)))
    ds = stack_regressor(leg, traj, 10, duration=1.0)
    st = RobotState.zero(leg)
    st.q = q0
    g = dynamics.gravity_vector(leg, st)
    np.testing.assert_allclose(ds.tau[0], g, atol=1e-10)


def test_floating_base_rejected(biped):
    traj = FourierTrajectory(q0=np.zeros(12), a=np.zeros((12, 1)), b=np.zeros((12, 1)))
    with pytest.raises(IdentError, match="fixed-base"):
        stack_regressor(biped, traj, 10)


# ---------------------------------------------------------------------------
# base parameters


def test_base_reprojection_on_held_out_states(leg):
    traj = _leg_traj(leg)
    ds = stack_regressor(leg, traj, 50, duration=4.0)
    bp = base_parameters(ds.Y)
    pi = dynamics.pi_vector(leg)
    theta = bp.theta(pi)
    rng = np.random.default_rng(7)
    for _ in range(10):
        st = random_state(leg, rng)
        qdd = rng.standard_normal(leg.n_joints)
        Y = dynamics.regressor(leg, st, qdd)
        np.testing.assert_allclose(bp.reduce(Y) @ theta, Y @ pi, atol=1e-9)


def test_base_dimension_invariant_to_duplicated_columns(leg):
    traj = _leg_traj(leg)
    ds = stack_regressor(leg, traj, 50, duration=4.0)
    bp = base_parameters(ds.Y)
    doubled = np.hstack([ds.Y, ds.Y[:, :5]])
    assert base_parameters(doubled).dimension == bp.dimension


def test_pendulum_base_dimension(pendulum):
    # one revolute joint about y: inertia about the axis, two first-moment
    # components, and the two friction coefficients are identifiable
    traj = random_trajectory(pendulum, np.random.default_rng(8))
    ds = stack_regressor(pendulum, traj, 100, duration=10.0)
    assert base_parameters(ds.Y).dimension == 5


def test_zero_regressor_rejected():
    with pytest.raises(IdentError, match="zero"):
        base_parameters(np.zeros((8, 4)))


# ---------------------------------------------------------------------------
# estimation


def test_noiseless_estimation_is_exact(leg):
    traj = _leg_traj(leg)
    ds = synthesize_dataset(leg, traj, 100, 10.0, noise_sigma=0.0)
    res = estimate_parameters(ds, mode="base")
    theta_true = res.base.theta(dynamics.pi_vector(leg))
    np.testing.assert_allclose(res.params, theta_true, atol=1e-8)
    assert np.max(res.rms_residual) < 1e-8


def test_noisy_estimation_recovers_base_parameters(leg):
    traj = optimize_excitation(leg, seed=0, candidates=20, budget=40, restarts=1)
    theta_errs = []
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        ds = synthesize_dataset(leg, traj, 200, 60.0, noise_sigma=0.05, rng=rng)
        res = estimate_parameters(ds, mode="base")
        theta_true = res.base.theta(dynamics.pi_vector(leg))
        theta_errs.append(np.linalg.norm(res.params - theta_true)
                          / np.linalg.norm(theta_true))
        assert np.mean(res.mean_abs_residual) < 1.0
    assert np.sqrt(np.mean(np.square(theta_errs))) < 0.02


def test_friction_coefficients_recovered(leg):
    traj = _leg_traj(leg, seed=2)
    ds = synthesize_dataset(leg, traj, 200, 60.0, noise_sigma=0.05,
                            rng=np.random.default_rng(9))
    res = estimate_parameters(ds, mode="base")
    pi = dynamics.pi_vector(leg)
    fr_start = 10 * len(leg.links)
    for k, col in enumerate(res.base.columns):
        if col >= fr_start:
            assert res.params[k] == pytest.approx(pi[col], rel=0.05)


def test_full_mode_rejects_rank_deficiency(leg):
    traj = _leg_traj(leg)
    ds = stack_regressor(leg, traj, 50, duration=4.0)
    with pytest.raises(IdentError, match="base"):
        estimate_parameters(ds, mode="full")


# ---------------------------------------------------------------------------
# excitation design


def test_optimized_excitation_beats_random(pendulum):
    traj = optimize_excitation(pendulum, seed=1, candidates=15, budget=60, restarts=2)
    check_limits(pendulum, traj)
    best = traj and excitation_cost(pendulum, traj)
    rng = np.random.default_rng(10)
    baseline = []
    for _ in range(10):
        cand = random_trajectory(pendulum, rng)
        if cand is not None:
            baseline.append(excitation_cost(pendulum, cand))
    assert best <= min(baseline) + 1e-9


def test_optimize_excitation_deterministic(pendulum):
    a = optimize_excitation(pendulum, seed=3, candidates=8, budget=20, restarts=1)
    b = optimize_excitation(pendulum, seed=3, candidates=8, budget=20, restarts=1)
    np.testing.assert_allclose(a.a, b.a, atol=0.0)
    np.testing.assert_allclose(a.b, b.b, atol=0.0)


# ---------------------------------------------------------------------------
# torque prediction


def test_predict_torque_friction_is_odd_in_velocity(leg):
    # rigid-body velocity terms are even under dq -> -dq, so the torque
    # difference across a sign flip is exactly twice the friction torque
    pi = dynamics.pi_vector(leg)
    st = RobotState.zero(leg)
    st.q = 0.3 * np.ones(6)
    st.dq = np.full(6, 1.0)
    tau_p = predict_torque(leg, pi, st, np.zeros(6))
    st.dq = np.full(6, -1.0)
    tau_m = predict_torque(leg, pi, st, np.zeros(6))
    F_c, F_v = 3.0, 0.5
    expect = 2.0 * (F_c + F_v)
    np.testing.assert_allclose(tau_p - tau_m, np.full(6, expect), atol=1e-9)


def test_predict_torque_matches_rnea_plus_friction(leg):
    rng = np.random.default_rng(11)
    st = random_state(leg, rng)
    qdd = rng.standard_normal(6)
    pi = dynamics.pi_vector(leg)
    pred = predict_torque(leg, pi, st, qdd)
    rigid = dynamics.rnea(leg, st, qdd)
    friction = pred - rigid
    # friction torque has the sign of the velocity and is bounded sensibly
    moving = np.abs(st.dq) > 0.05
    assert np.all(np.sign(friction[moving]) == np.sign(st.dq[moving]))


# ---------------------------------------------------------------------------
# dataset files


def test_dataset_round_trip(tmp_path, leg):
    traj = _leg_traj(leg)
    ds = synthesize_dataset(leg, traj, 50, 2.0, noise_sigma=0.01,
                            rng=np.random.default_rng(12))
    path = tmp_path / "data.csv"
    save_dataset(path, ds)
    back = load_dataset(path, leg)
    np.testing.assert_allclose(back.q, ds.q, atol=0.0)
    np.testing.assert_allclose(back.tau_stacked, ds.tau_stacked, atol=0.0)
    np.testing.assert_allclose(back.Y, ds.Y, atol=1e-12)
    assert back.sample_rate == pytest.approx(50.0, rel=1e-9)


def test_load_dataset_names_missing_column(tmp_path, leg):
    path = tmp_path / "bad.csv"
    path.write_text("t,q1\n0.0,0.0\n")
    with pytest.raises(IdentError, match="q2"):
        load_dataset(path, leg)
