"""Dynamic-parameter identification: excitation design, regressor stacking,
base-parameter reduction, and least-squares estimation with friction.

The pipeline targets fixed-base models (a leg on a stand, a planar chain):
design a periodic Fourier excitation that keeps the stacked regressor
well-conditioned, collect (or synthesize) torque data, reduce to the
identifiable base parameters, and fit them in least squares.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr
from scipy.optimize import minimize

from wholebody import dynamics, textdoc
from wholebody.dynamics import Kinematics
from wholebody.model import RobotState, ModelError


class IdentError(ValueError):
    """Bad identification input: limit violations, rank deficiency, bad files."""


@dataclass
class DynamicParams:
    """Stacked dynamic parameters: per link [m, m*c, I6], per joint [F_c, F_v]."""

    pi: np.ndarray
    n_links: int
    n_joints: int

    @classmethod
    def from_model(cls, model):
        return cls(dynamics.pi_vector(model), len(model.links), model.n_joints)

    def link_params(self, i):
        return self.pi[10 * i:10 * (i + 1)]

    def friction_params(self, j):
        base = 10 * self.n_links
        return self.pi[base + 2 * j:base + 2 * j + 2]

    @property
    def physically_plausible(self):
        """True when all masses are positive and all origin inertias are PSD."""
        for i in range(self.n_links):
            p = self.link_params(i)
            if p[0] <= 0:
                return False
            ixx, ixy, ixz, iyy, iyz, izz = p[4:10]
            I = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
            if np.linalg.eigvalsh(I)[0] < -1e-12:
                return False
        return True


# ---------------------------------------------------------------------------
# Fourier excitation trajectories


@dataclass
class FourierTrajectory:
    """Periodic joint excitation q_j(t) = q0_j + sum_k a_jk sin(k w t) + b_jk cos(k w t)."""

    q0: np.ndarray        # (n,)
    a: np.ndarray         # (n, harmonics)
    b: np.ndarray         # (n, harmonics)
    f0: float = 0.1       # base frequency, Hz
    duration: float = 10.0

    def __post_init__(self):
        if self.f0 <= 0:
            raise IdentError("base frequency must be positive")
        if self.a.shape != self.b.shape or self.a.shape[0] != self.q0.shape[0]:
            raise IdentError("coefficient arrays must be (n_joints, harmonics)")

    @property
    def harmonics(self):
        return self.a.shape[1]

    @property
    def period(self):
        return 1.0 / self.f0


def eval_trajectory(traj, t):
    """(q, dq, qdd) at time(s) t; derivatives are exact and periodic."""
    t = np.asarray(t, dtype=float)
    k = np.arange(1, traj.harmonics + 1)
    w = 2.0 * np.pi * traj.f0 * k                       # (K,)
    ph = np.multiply.outer(t, w)                        # (..., K)
    s, c = np.sin(ph), np.cos(ph)
    q = traj.q0 + s @ traj.a.T + c @ traj.b.T
    dq = (s * (-w)) @ traj.b.T + (c * w) @ traj.a.T
    qdd = (s * (-w * w)) @ traj.a.T + (c * (-w * w)) @ traj.b.T
    return q, dq, qdd


def trajectory_to_text(traj):
    blocks = []
    for j in range(traj.q0.shape[0]):
        blocks.append((
            "joint", f"j{j}",
            {
                "q0": float(traj.q0[j]),
                "a": [float(x) for x in traj.a[j]],
                "b": [float(x) for x in traj.b[j]],
            },
            (),
        ))
    fields = {
        "f0": float(traj.f0),
        "duration": float(traj.duration),
        "harmonics": traj.harmonics,
    }
    return textdoc.dump_block(fields, blocks) + "\n"


def trajectory_from_text(text):
    doc = textdoc.parse_document(text)
    f0 = float(doc.scalar("f0"))
    duration = float(doc.scalar("duration"))
    harmonics = int(doc.scalar("harmonics"))
    joints = doc.children("joint")
    if not joints:
        raise IdentError("trajectory file lists no joints")
    q0, a, b = [], [], []
    for blk in joints:
        q0.append(float(blk.scalar("q0")))
        a.append(blk.floats("a", harmonics))
        b.append(blk.floats("b", harmonics))
    return FourierTrajectory(q0=np.array(q0), a=np.array(a), b=np.array(b),
                             f0=f0, duration=duration)


# ---------------------------------------------------------------------------
# Regressor stacking


@dataclass
class IdentDataset:
    """Sampled joint data with the stacked regressor rows."""

    t: np.ndarray         # (N,)
    q: np.ndarray         # (N, n)
    dq: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    Y: np.ndarray         # (N*n, dim pi)
    tau_stacked: np.ndarray
    sample_rate: float


def _state_for(model, q, dq):
    st = RobotState.zero(model)
    st.q = np.asarray(q, dtype=float)
    st.dq = np.asarray(dq, dtype=float)
    return st


def check_limits(model, traj, grid_rate=1000.0):
    """Raise IdentError naming the first joint/time violating a position or velocity limit."""
    t = np.arange(0.0, traj.period, 1.0 / grid_rate)
    q, dq, _ = eval_trajectory(traj, t)
    for j, joint in enumerate(model.joints):
        lo, hi = joint.position_limits
        bad = np.flatnonzero((q[:, j] < lo) | (q[:, j] > hi))
        if bad.size:
            raise IdentError(
                f"joint '{joint.name}' position limit violated at t={t[bad[0]]:.3f} s")
        bad = np.flatnonzero(np.abs(dq[:, j]) > joint.velocity_limit)
        if bad.size:
            raise IdentError(
                f"joint '{joint.name}' velocity limit violated at t={t[bad[0]]:.3f} s")


def stack_regressor(model, traj, sample_rate, duration=None, tau=None,
                    qdot_star=0.05, enforce_limits=True):
    """Sample a trajectory and stack the actuated regressor rows.

    ``tau`` may supply measured torques (N, n); when omitted the torques are
    synthesized noise-free from the model's true parameters.
    """
    if model.floating_base:
        raise IdentError("identification datasets require a fixed-base model")
    if enforce_limits:
        check_limits(model, traj)
    duration = traj.duration if duration is None else duration
    t = np.arange(0.0, duration, 1.0 / sample_rate)
    q, dq, qdd = eval_trajectory(traj, t)
    n = model.n_joints
    pi = dynamics.pi_vector(model)
    Yb = dynamics.batch_regressor(model, q, dq, qdd, qdot_star=qdot_star)
    tau_out = np.einsum("nij,j->ni", Yb, pi) if tau is None else np.asarray(tau, dtype=float)
    return IdentDataset(t=t, q=q, dq=dq, qdd=qdd, tau=tau_out, Y=Yb.reshape(t.size * n, -1),
                        tau_stacked=tau_out.ravel(), sample_rate=sample_rate)


def dataset_from_samples(model, t, q, dq, qdd, tau, sample_rate, qdot_star=0.05):
    """Stack regressor rows for externally provided samples."""
    n = model.n_joints
    t = np.asarray(t, dtype=float)
    Y = dynamics.batch_regressor(model, q, dq, qdd, qdot_star=qdot_star).reshape(t.size * n, -1)
    return IdentDataset(t=t, q=np.asarray(q), dq=np.asarray(dq), qdd=np.asarray(qdd),
                        tau=np.asarray(tau), Y=Y, tau_stacked=np.asarray(tau).ravel(),
                        sample_rate=sample_rate)


# ---------------------------------------------------------------------------
# Base parameters


@dataclass
class BaseParametrization:
    """Identifiable linear combinations of the full parameter vector.

    ``combination`` is the (dim x dim pi) matrix B with theta = B pi; the
    base regressor keeps the pivot ``columns`` of Y, so Y pi = Y[:, columns] theta.
    """

    columns: np.ndarray        # independent column indices, (dim,)
    combination: np.ndarray    # (dim, dim pi)
    dimension: int

    def reduce(self, Y):
        return Y[:, self.columns]

    def theta(self, pi):
        return self.combination @ np.asarray(pi, dtype=float)


def base_parameters(Y, tol=1e-8):
    """Rank-revealing pivoted QR over the regressor columns.

    The numerical rank uses the cutoff tol * |R[0,0]|.  Raises IdentError on
    all-zero data.
    """
    Y = np.asarray(Y, dtype=float)
    Q, R, piv = qr(Y, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        raise IdentError("regressor is identically zero; no identifiable parameters")
    r = int(np.sum(diag > tol * diag[0]))
    indep = piv[:r]
    dep = piv[r:]
    K = np.linalg.solve(R[:r, :r], R[:r, r:]) if dep.size else np.zeros((r, 0))
    B = np.zeros((r, Y.shape[1]))
    B[np.arange(r), indep] = 1.0
    B[:, dep] = K
    return BaseParametrization(columns=np.asarray(indep), combination=B, dimension=r)


# ---------------------------------------------------------------------------
# Excitation optimization


def _amplitude_scale(model, traj, grid_rate=1000.0, margin=0.98):
    """Largest-violation ratio over a dense grid; used to shrink amplitudes."""
    t = np.arange(0.0, traj.period, 1.0 / grid_rate)
    q, dq, _ = eval_trajectory(traj, t)
    worst = 1.0
    for j, joint in enumerate(model.joints):
        lo, hi = joint.position_limits
        dev = q[:, j] - traj.q0[j]
        up = hi - traj.q0[j]
        dn = traj.q0[j] - lo
        if up <= 0 or dn <= 0:
            return 0.0
        worst = max(worst, dev.max() / (margin * up), (-dev.min()) / (margin * dn))
        worst = max(worst, np.abs(dq[:, j]).max() / (margin * joint.velocity_limit))
    return 1.0 / worst


def _feasible(model, traj, torque_check=True, grid_rate=200.0):
    """Shrink a candidate's amplitudes until every limit holds; None if impossible."""
    scale = _amplitude_scale(model, traj)
    if scale == 0.0:
        return None
    traj = FourierTrajectory(q0=traj.q0, a=scale * traj.a, b=scale * traj.b,
                             f0=traj.f0, duration=traj.duration)
    if not torque_check:
        return traj
    tau_max = np.array([j.torque_limits[1] for j in model.joints])
    tau_min = np.array([j.torque_limits[0] for j in model.joints])
    pi = dynamics.pi_vector(model)
    for _ in range(12):
        t = np.arange(0.0, traj.period, 1.0 / grid_rate)
        q, dq, qdd = eval_trajectory(traj, t)
        tau = np.einsum("nij,j->ni", dynamics.batch_regressor(model, q, dq, qdd), pi)
        if np.all(tau <= tau_max) and np.all(tau >= tau_min):
            return traj
        traj = FourierTrajectory(q0=traj.q0, a=0.8 * traj.a, b=0.8 * traj.b,
                                 f0=traj.f0, duration=traj.duration)
    return None


def excitation_cost(model, traj, samples=80, tol=1e-8, qdot_star=0.05):
    """Condition number of the stacked base regressor over one period."""
    t = np.linspace(0.0, traj.period, samples, endpoint=False)
    q, dq, qdd = eval_trajectory(traj, t)
    Y = dynamics.batch_regressor(model, q, dq, qdd, qdot_star=qdot_star)
    Y = Y.reshape(t.size * model.n_joints, -1)
    try:
        bp = base_parameters(Y, tol=tol)
    except IdentError:
        return np.inf
    s = np.linalg.svd(bp.reduce(Y), compute_uv=False)
    if s[-1] <= 0:
        return np.inf
    return float(s[0] / s[-1])


def random_trajectory(model, rng, harmonics=5, f0=0.1, duration=None, amplitude=0.4):
    """A random feasible excitation candidate (amplitudes shrunk to the limits)."""
    n = model.n_joints
    mid = np.array([0.5 * (j.position_limits[0] + j.position_limits[1]) for j in model.joints])
    span = np.array([0.5 * (j.position_limits[1] - j.position_limits[0]) for j in model.joints])
    q0 = mid + 0.2 * span * rng.uniform(-1.0, 1.0, n)
    a = amplitude * rng.standard_normal((n, harmonics)) / np.arange(1, harmonics + 1)
    b = amplitude * rng.standard_normal((n, harmonics)) / np.arange(1, harmonics + 1)
    traj = FourierTrajectory(q0=q0, a=a, b=b, f0=f0,
                             duration=(1.0 / f0) if duration is None else duration)
    return _feasible(model, traj)


def optimize_excitation(model, harmonics=5, f0=0.1, duration=None, budget=300,
                        restarts=4, candidates=120, seed=0, samples=60):
    """Design a limit-respecting excitation minimizing cond of the base regressor.

    Random search over ``candidates`` feasible trajectories followed by
    derivative-free simplex refinement of the ``restarts`` best, each given
    ``budget`` cost evaluations; deterministic given ``seed``.  Every
    candidate is projected back inside the joint limits before costing, so
    the result never violates them.
    """
    n = model.n_joints
    rng = np.random.default_rng(seed)
    duration = (1.0 / f0) if duration is None else duration

    def unpack(x):
        q0 = x[:n]
        a = x[n:n + n * harmonics].reshape(n, harmonics)
        b = x[n + n * harmonics:].reshape(n, harmonics)
        return FourierTrajectory(q0=q0, a=a, b=b, f0=f0, duration=duration)

    def cost(x):
        traj = _feasible(model, unpack(x), torque_check=False)
        if traj is None:
            return 1e12
        return excitation_cost(model, traj, samples=samples)

    pool = []
    for _ in range(candidates):
        cand = random_trajectory(model, rng, harmonics=harmonics, f0=f0, duration=duration)
        if cand is not None:
            pool.append((excitation_cost(model, cand, samples=samples), cand))
    if not pool:
        raise IdentError("no feasible excitation trajectory found within budget")
    pool.sort(key=lambda pair: pair[0])

    best_cost, best_traj = pool[0]
    for c0, start in pool[:restarts]:
        x0 = np.concatenate([start.q0, start.a.ravel(), start.b.ravel()])
        res = minimize(cost, x0, method="Nelder-Mead",
                       options={"maxfev": budget, "xatol": 1e-3, "fatol": 1e-2})
        cand = _feasible(model, unpack(res.x))
        if cand is None:
            continue
        c = excitation_cost(model, cand, samples=samples)
        if c < best_cost:
            best_cost, best_traj = c, cand
    return best_traj


# ---------------------------------------------------------------------------
# Estimation


@dataclass
class EstimationResult:
    params: np.ndarray            # full pi (mode full) or theta (mode base)
    mode: str
    base: BaseParametrization | None
    rms_residual: np.ndarray      # per joint, N*m
    mean_abs_residual: np.ndarray


def _residual_stats(dataset, pred_stacked):
    n = dataset.q.shape[1]
    resid = (dataset.tau_stacked - pred_stacked).reshape(-1, n)
    return np.sqrt(np.mean(resid**2, axis=0)), np.mean(np.abs(resid), axis=0)


def estimate_parameters(dataset, mode="base", tol=1e-8):
    """Least-squares fit of the (base) dynamic parameters to measured torque."""
    Y, tau = dataset.Y, dataset.tau_stacked
    if mode == "full":
        rank = np.linalg.matrix_rank(Y, tol * np.linalg.norm(Y, 2))
        if rank < Y.shape[1]:
            raise IdentError(
                f"full regressor is rank deficient ({rank} < {Y.shape[1]}); use mode='base'")
        pi, *_ = np.linalg.lstsq(Y, tau, rcond=None)
        rms, mabs = _residual_stats(dataset, Y @ pi)
        return EstimationResult(pi, "full", None, rms, mabs)
    if mode != "base":
        raise IdentError(f"unknown estimation mode '{mode}'")
    bp = base_parameters(Y, tol=tol)
    Yb = bp.reduce(Y)
    theta, *_ = np.linalg.lstsq(Yb, tau, rcond=None)
    rms, mabs = _residual_stats(dataset, Yb @ theta)
    return EstimationResult(theta, "base", bp, rms, mabs)


def predict_torque(model, params, state, qdd, base=None, qdot_star=0.05):
    """Regressor torque prediction: full pi, or base theta when ``base`` given."""
    Y = dynamics.regressor(model, state, np.asarray(qdd, dtype=float), qdot_star=qdot_star)
    if base is not None:
        return base.reduce(Y) @ params
    return Y @ params


def synthesize_dataset(model, traj, sample_rate, duration, noise_sigma=0.0,
                       rng=None, friction=True, qdot_star=0.05):
    """Noisy synthetic torque data from the model's true parameters."""
    ds = stack_regressor(model, traj, sample_rate, duration=duration, qdot_star=qdot_star)
    pi = dynamics.pi_vector(model)
    if not friction:
        pi = pi.copy()
        pi[10 * len(model.links):] = 0.0
    tau = (ds.Y @ pi).reshape(-1, model.n_joints)
    if noise_sigma > 0.0:
        rng = rng or np.random.default_rng(0)
        tau = tau + noise_sigma * rng.standard_normal(tau.shape)
    ds.tau = tau
    ds.tau_stacked = tau.ravel()
    return ds


# ---------------------------------------------------------------------------
# CSV dataset files


def save_dataset(path, dataset):
    n = dataset.q.shape[1]
    header = (["t"] + [f"q{j + 1}" for j in range(n)] + [f"dq{j + 1}" for j in range(n)]
              + [f"ddq{j + 1}" for j in range(n)] + [f"tau{j + 1}" for j in range(n)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.t.size):
            row = [repr(float(dataset.t[i]))]
            for arr in (dataset.q, dataset.dq, dataset.qdd, dataset.tau):
                row += [repr(float(x)) for x in arr[i]]
            writer.writerow(row)


def load_dataset(path, model, qdot_star=0.05):
    """Read a CSV dataset and stack its regressor; errors name missing columns."""
    n = model.n_joints
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IdentError("dataset file is empty")
        expected = (["t"] + [f"q{j + 1}" for j in range(n)] + [f"dq{j + 1}" for j in range(n)]
                    + [f"ddq{j + 1}" for j in range(n)] + [f"tau{j + 1}" for j in range(n)])
        for col in expected:
            if col not in header:
                raise IdentError(f"dataset missing column '{col}'")
        idx = [header.index(c) for c in expected]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in idx])
            except (ValueError, IndexError):
                raise IdentError(f"bad numeric row at line {lineno}")
    data = np.array(rows)
    if data.size == 0:
        raise IdentError("dataset contains no samples")
    t = data[:, 0]
    q = data[:, 1:1 + n]
    dq = data[:, 1 + n:1 + 2 * n]
    qdd = data[:, 1 + 2 * n:1 + 3 * n]
    tau = data[:, 1 + 3 * n:1 + 4 * n]
    rate = 1.0 / np.median(np.diff(t)) if t.size > 1 else 0.0
    return dataset_from_samples(model, t, q, dq, qdd, tau, rate, qdot_star=qdot_star)
