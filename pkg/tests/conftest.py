"""Shared fixtures and oracle helpers for the test suite."""

import itertools

import numpy as np
import pytest

from wholebody.hqp import Level
from wholebody.model import (
    RobotState,
    build_biped,
    build_leg,
    build_pendulum,
    build_planar_triple,
)


@pytest.fixture(scope="session")
def biped():
    return build_biped()


@pytest.fixture(scope="session")
def triple():
    return build_planar_triple()


@pytest.fixture(scope="session")
def pendulum():
    return build_pendulum()


@pytest.fixture(scope="session")
def leg():
    return build_leg()


def random_state(model, rng, dq_scale=1.0):
    """A valid random state with joint positions inside their limits."""
    st = RobotState.zero(model)
    for j, joint in enumerate(model.joints):
        lo = max(joint.position_limits[0], -np.pi)
        hi = min(joint.position_limits[1], np.pi)
        span = hi - lo
        st.q[j] = rng.uniform(lo + 0.05 * span, hi - 0.05 * span)
    st.dq = dq_scale * rng.standard_normal(model.n_joints)
    if model.floating_base:
        st.base_pos = rng.standard_normal(3)
        quat = rng.standard_normal(4)
        st.base_quat = quat / np.linalg.norm(quat)
        st.base_twist = dq_scale * rng.standard_normal(6)
    return st


# ---------------------------------------------------------------------------
# Random hierarchy generation (always feasible by construction)


def random_hierarchy(rng, n_x, task_dims, constraint_dims, rank_deficient=True):
    """Random levels whose constraint set contains a known interior point."""
    x_feas = rng.standard_normal(n_x)
    levels = []
    for p, (m_t, m_c) in enumerate(zip(task_dims, constraint_dims)):
        A = rng.standard_normal((m_t, n_x)) if m_t else None
        if A is not None and rank_deficient and m_t > 2 and rng.random() < 0.5:
            A[-1] = A[0] + A[1]          # force a rank deficiency
        b = rng.standard_normal(m_t) if m_t else None
        if m_c:
            D = rng.standard_normal((m_c, n_x))
            f = D @ x_feas + rng.uniform(0.1, 2.0, m_c)
        else:
            D = f = None
        levels.append(Level(A=A, b=b, D=D, f=f, name=f"L{p + 1}"))
    return levels


# ---------------------------------------------------------------------------
# Lexicographic least-squares oracle by active-set enumeration
#
# At each priority the optimal set of the preceding levels is the affine
# slice {x : E x = e} of the feasible set (the squared residual is strictly
# convex in A x, so A x is constant over the minimizers).  Enumerating every
# subset of the inequality constraints as candidate active equalities and
# keeping the feasible candidate with the smallest residual is therefore an
# exhaustive, independent solution of each level.


def _face_optimum(A, b, E, e, n_x):
    """Optimal residual of min ||A x - b|| s.t. E x = e, plus the unique A x value.

    Returns (residual, y) or None when the equalities are inconsistent.  The
    squared residual is strictly convex in y = A x, so y is unique over the
    minimizer set even when x is not.
    """
    if E.shape[0]:
        x0, *_ = np.linalg.lstsq(E, e, rcond=None)
        if np.linalg.norm(E @ x0 - e) > 1e-8 * max(1.0, np.linalg.norm(e)):
            return None
        _, s, Vt = np.linalg.svd(E)
        rank = int(np.sum(s > 1e-10 * max(s[0], 1.0))) if s.size else 0
        Z = Vt[rank:].T
    else:
        x0 = np.zeros(n_x)
        Z = np.eye(n_x)
    if A is None or A.shape[0] == 0:
        return 0.0, np.zeros(0)
    if Z.shape[1] == 0:
        y = A @ x0
        return float(np.linalg.norm(y - b)), y
    u, *_ = np.linalg.lstsq(A @ Z, b - A @ x0, rcond=None)
    y = A @ (x0 + Z @ u)
    return float(np.linalg.norm(y - b)), y


def _affine_set_feasible(E, e, D, f, n_x, slack=1e-9):
    """True when {x : E x = e} intersects {x : D x <= f + slack}."""
    from scipy.optimize import linprog

    res = linprog(np.zeros(n_x), A_ub=D if D.shape[0] else None,
                  b_ub=f + slack if D.shape[0] else None,
                  A_eq=E if E.shape[0] else None,
                  b_eq=e if E.shape[0] else None,
                  bounds=[(None, None)] * n_x, method="highs")
    return res.status == 0


def lexicographic_oracle(levels, n_x):
    """Per-level optimal residuals by exhaustive active-set enumeration.

    At each priority the minimizers of the preceding levels form the affine
    slice {x : A_j x = y_j*} of the feasible set (the squared residual is
    strictly convex in A x).  Every subset of the inequality rows is tried
    as a candidate active set; candidates are ranked by residual and the
    first one whose full minimizer set intersects the feasible region wins.
    """
    D_all = np.vstack([lv.D for lv in levels if lv.D is not None]) \
        if any(lv.D is not None for lv in levels) else np.zeros((0, n_x))
    f_all = np.concatenate([lv.f for lv in levels if lv.f is not None]) \
        if D_all.shape[0] else np.zeros(0)
    m = D_all.shape[0]

    E = np.zeros((0, n_x))
    e = np.zeros(0)
    residuals = []
    for level in levels:
        A, b = level.A, level.b
        candidates = []
        for size in range(m + 1):
            for subset in itertools.combinations(range(m), size):
                idx = list(subset)
                E_c = np.vstack([E, D_all[idx]])
                e_c = np.concatenate([e, f_all[idx]])
                opt = _face_optimum(A, b, E_c, e_c, n_x)
                if opt is not None:
                    candidates.append((opt[0], idx, opt[1]))
        candidates.sort(key=lambda c: c[0])
        accepted = None
        for r, idx, y in candidates:
            rows = [E, D_all[idx]]
            vals = [e, f_all[idx]]
            if A is not None and A.shape[0]:
                rows.append(A)
                vals.append(y)
            E_c = np.vstack(rows)
            e_c = np.concatenate(vals)
            if _affine_set_feasible(E_c, e_c, D_all, f_all, n_x):
                accepted = (r, y)
                break
        if accepted is None:
            raise RuntimeError("oracle found no feasible candidate")
        r, y = accepted
        residuals.append(r)
        if A is not None and A.shape[0]:
            E = np.vstack([E, A])
            e = np.concatenate([e, y])
    return residuals
