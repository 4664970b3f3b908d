"""Strict-priority hierarchical quadratic programming.

A hierarchy is an ordered list of :class:`Level` objects, each holding task
equalities A x = b and inequality constraints D x <= f over a shared
variable.  Levels are solved in sequence; each level optimizes only inside
the null space of all higher-priority task matrices while accumulating every
higher-priority inequality.  No slack variables are introduced: if a level's
QP is infeasible the solver degrades, keeping the last feasible solution.

The QP subproblems are solved by a dense dual active-set method working from
the unconstrained minimum, which needs no feasible starting point and
detects infeasibility.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class QpInfeasibleError(RuntimeError):
    """Raised when a QP (or the first hierarchy level) has no feasible point."""

    def __init__(self, message, constraint_index=None, level=None):
        super().__init__(message)
        self.constraint_index = constraint_index
        self.level = level


class QpIterationError(RuntimeError):
    """Active-set iteration cap exceeded."""


@dataclass
class Level:
    """One priority level: tasks A x = b and constraints D x <= f."""

    A: np.ndarray | None = None
    b: np.ndarray | None = None
    D: np.ndarray | None = None
    f: np.ndarray | None = None
    name: str = ""

    def task_rows(self):
        return 0 if self.A is None else self.A.shape[0]

    def constraint_rows(self):
        return 0 if self.D is None else self.D.shape[0]

    def check(self, n_x):
        if self.A is not None:
            if self.A.shape[1] != n_x or self.b.shape != (self.A.shape[0],):
                raise ValueError(f"level '{self.name}': task dimensions inconsistent with n_x={n_x}")
        if self.D is not None:
            if self.D.shape[1] != n_x or self.f.shape != (self.D.shape[0],):
                raise ValueError(f"level '{self.name}': constraint dimensions inconsistent with n_x={n_x}")


@dataclass
class QpResult:
    x: np.ndarray
    lam: np.ndarray
    active: tuple
    iterations: int
    status: str                      # "optimal" or "infeasible"
    most_violated: int | None = None


@dataclass
class LevelDiagnostics:
    name: str
    residual_sq: float
    active_constraints: tuple
    nullspace_dim: int


@dataclass
class HqpSolution:
    x: np.ndarray
    per_level: list
    iterations: int
    solve_time: float
    degraded_level: int | None = None
    qp_time: float = 0.0
    projection_time: float = 0.0


# ---------------------------------------------------------------------------
# Dense QP: min 1/2 x'Hx + g'x  s.t.  D x <= f


def _equality_kkt(H, g, D, f, active):
    """Solve the QP with the given constraints treated as equalities."""
    n = H.shape[0]
    k = len(active)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = H
    if k:
        N = D[list(active)]
        K[:n, n:] = N.T
        K[n:, :n] = N
    rhs = np.concatenate([-g, f[list(active)] if k else np.zeros(0)])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    return sol[:n], sol[n:]


def solve_qp(H, g, D=None, f=None, warm_active=None, max_iterations=None):
    """Strictly convex dense QP via a dual active-set method.

    H must be symmetric positive definite (callers regularize).  Returns a
    :class:`QpResult` whose KKT residuals are at solver precision; an
    infeasible problem is reported with the index of the constraint that
    could not be satisfied.  Deterministic: ties break to the lowest index.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = H.shape[0]
    m = 0 if D is None else D.shape[0]
    if m:
        D = np.asarray(D, dtype=float)
        f = np.asarray(f, dtype=float)
    if max_iterations is None:
        max_iterations = max(50, 10 * (n + m))

    if n == 0:
        # no variables: feasibility check only
        if m:
            s = -f
            worst = int(np.argmax(s))
            if s[worst] > 1e-9 * max(1.0, np.abs(f).max()):
                return QpResult(np.zeros(0), np.zeros(m), (), 0, "infeasible", worst)
        return QpResult(np.zeros(0), np.zeros(m), (), 0, "optimal")

    chol = cho_factor(H, lower=True)
    x = cho_solve(chol, -g)
    if m == 0:
        return QpResult(x, np.zeros(0), (), 0, "optimal")

    scale = max(1.0, float(np.abs(f).max()), float(np.abs(D).max()))
    tol = 1e-11 * scale

    # warm start: accept the prior active set outright when it still solves the QP
    if warm_active:
        act = tuple(i for i in warm_active if i < m)
        if act:
            xw, lw = _equality_kkt(H, g, D, f, act)
            if np.all(lw >= -1e-12) and np.all(D @ xw - f <= tol):
                lam = np.zeros(m)
                lam[list(act)] = lw
                return QpResult(xw, lam, act, 0, "optimal")

    active: list = []
    lam_active: list = []
    iterations = 0
    while True:
        s = D @ x - f
        s[active] = -np.inf
        p = int(np.argmax(s))
        if s[p] <= tol:
            break
        n_p = D[p]
        lam_p = 0.0
        while True:
            iterations += 1
            if iterations > max_iterations:
                raise QpIterationError(f"active-set iteration cap {max_iterations} exceeded")
            Hin = cho_solve(chol, n_p)
            if active:
                N = D[active]
                invHN = cho_solve(chol, N.T)
                S = N @ invHN
                try:
                    r = np.linalg.solve(S, N @ Hin)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(S, N @ Hin, rcond=None)[0]
                z = Hin - invHN @ r
            else:
                r = np.zeros(0)
                z = Hin
            dz = float(n_p @ z)
            s_p = float(n_p @ x - f[p])
            t2 = s_p / dz if dz > 1e-14 * scale * scale else np.inf
            t1, blocker = np.inf, -1
            for idx, (li, ri) in enumerate(zip(lam_active, r)):
                if ri > 1e-14 * max(1.0, abs(li)) and li / ri < t1:
                    t1, blocker = li / ri, idx
            t = min(t1, t2)
            if not np.isfinite(t):
                lam = np.zeros(m)
                lam[active] = lam_active
                return QpResult(x, lam, tuple(sorted(active)), iterations, "infeasible", p)
            if t > 0.0:
                x = x - t * z
                lam_active = [li - t * ri for li, ri in zip(lam_active, r)]
                lam_p += t
            if t2 <= t1:
                active.append(p)
                lam_active.append(lam_p)
                break
            # dual step hit zero first: drop the blocking constraint, retry p
            active.pop(blocker)
            lam_active.pop(blocker)

    # polish: re-solve the equality KKT system on the final active set
    if active:
        xp, lp = _equality_kkt(H, g, D, f, tuple(active))
        if np.all(lp >= -1e-12) and np.all(D @ xp - f <= tol):
            x, lam_active = xp, list(lp)
    lam = np.zeros(m)
    if active:
        lam[active] = lam_active
    order = tuple(sorted(active))
    return QpResult(x, lam, order, iterations, "optimal")


# ---------------------------------------------------------------------------
# Null-space machinery


def pseudo_inverse(A, tol=1e-8):
    """Rank-revealing pseudo-inverse with singular-value cutoff tol * sigma_max."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((A.shape[1], A.shape[0])), 0
    rank = int(np.sum(s > tol * s[0]))
    if rank == 0:
        return np.zeros((A.shape[1], A.shape[0])), 0
    return (Vt[:rank].T / s[:rank]) @ U[:, :rank].T, rank


def nullspace_basis_update(N_prev, A_hat, tol=1e-8):
    """Projector recursion N_next = N_prev (I - pinv(A_hat) A_hat)."""
    pinv, rank = pseudo_inverse(A_hat, tol)
    if rank == 0:
        return N_prev.copy()
    return N_prev @ (np.eye(A_hat.shape[1]) - pinv @ A_hat)


def _orthonormal_nullspace(A_hat, tol=1e-8):
    """Orthonormal basis of the null space of A_hat (columns)."""
    r_cols = A_hat.shape[1]
    if A_hat.shape[0] == 0:
        return np.eye(r_cols)
    U, s, Vt = np.linalg.svd(A_hat, full_matrices=True)
    rank = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return Vt[rank:].T


# ---------------------------------------------------------------------------
# Hierarchy


class HierarchySolver:
    """Sequential lexicographic solver over a list of levels.

    Holds scratch state (warm-start active sets) for one control loop;
    distinct instances may run concurrently.
    """

    def __init__(self, reg=1e-10, rank_tol=1e-8, warm_start=True):
        self.reg = reg
        self.rank_tol = rank_tol
        self.warm_start = warm_start
        self._warm: dict = {}

    def reset(self):
        self._warm.clear()

    def solve(self, levels, n_x):
        """Solve the strict hierarchy; returns an :class:`HqpSolution`.

        Level-1 infeasibility raises :class:`QpInfeasibleError`; infeasibility
        at a later level returns the last feasible solution with
        ``degraded_level`` set.
        """
        t_start = time.perf_counter()
        if not levels:
            raise ValueError("hierarchy needs at least one level")
        for level in levels:
            level.check(n_x)

        x = np.zeros(n_x)
        Z = np.eye(n_x)
        D_rows: list = []
        f_rows: list = []
        degraded = None
        iterations = 0
        qp_time = 0.0
        proj_time = 0.0
        null_dims = []
        active_sets = []

        for p, level in enumerate(levels):
            if level.constraint_rows():
                D_rows.append(np.asarray(level.D, dtype=float))
                f_rows.append(np.asarray(level.f, dtype=float))
            D_all = np.vstack(D_rows) if D_rows else np.zeros((0, n_x))
            f_all = np.concatenate(f_rows) if f_rows else np.zeros(0)

            r = Z.shape[1]
            if level.task_rows():
                A_hat = level.A @ Z
                H = A_hat.T @ A_hat + self.reg * np.eye(r)
                g = -A_hat.T @ (level.b - level.A @ x)
            else:
                A_hat = np.zeros((0, r))
                H = self.reg * np.eye(r)
                g = np.zeros(r)
            Du = D_all @ Z
            fu = f_all - D_all @ x

            warm = self._warm.get(p) if self.warm_start else None
            t0 = time.perf_counter()
            try:
                res = solve_qp(H, g, Du if Du.shape[0] else None,
                               fu if Du.shape[0] else None, warm_active=warm)
            finally:
                qp_time += time.perf_counter() - t0
            iterations += res.iterations
            if res.status == "infeasible":
                if p == 0:
                    raise QpInfeasibleError(
                        f"level 1 ('{level.name}') is infeasible at constraint row {res.most_violated}",
                        constraint_index=res.most_violated, level=0)
                degraded = p
                break

            u = res.x
            if level.task_rows():
                # one step of iterative refinement: the Tikhonov term biases
                # the minimizer by ~reg/sigma_min^2 in task space, which the
                # fixed task values of later levels would amplify; re-solving
                # for the correction against the leftover residual cancels
                # the bias to second order (warm-started, typically 0 extra
                # active-set iterations)
                r_left = (level.b - level.A @ x) - A_hat @ u
                t0 = time.perf_counter()
                try:
                    res_fix = solve_qp(H, -A_hat.T @ r_left,
                                       Du if Du.shape[0] else None,
                                       fu - Du @ u if Du.shape[0] else None,
                                       warm_active=res.active)
                finally:
                    qp_time += time.perf_counter() - t0
                if res_fix.status == "optimal":
                    u = u + res_fix.x
                    iterations += res_fix.iterations
                    res = QpResult(u, res_fix.lam, res_fix.active,
                                   res.iterations + res_fix.iterations, "optimal")
            x = x + Z @ u
            self._warm[p] = res.active
            active_sets.append(res.active)
            if level.task_rows():
                t0 = time.perf_counter()
                Z = Z @ _orthonormal_nullspace(A_hat, self.rank_tol)
                proj_time += time.perf_counter() - t0
            null_dims.append(Z.shape[1])

        per_level = []
        for p, level in enumerate(levels):
            if level.task_rows():
                resid = level.A @ x - level.b
                residual_sq = float(resid @ resid)
            else:
                residual_sq = 0.0
            per_level.append(LevelDiagnostics(
                name=level.name,
                residual_sq=residual_sq,
                active_constraints=active_sets[p] if p < len(active_sets) else (),
                nullspace_dim=null_dims[p] if p < len(null_dims) else (null_dims[-1] if null_dims else n_x),
            ))
        return HqpSolution(
            x=x, per_level=per_level, iterations=iterations,
            solve_time=time.perf_counter() - t_start,
            degraded_level=degraded, qp_time=qp_time, projection_time=proj_time,
        )

    def solve_weighted(self, levels, weights, n_x):
        """Weighted single-QP alternative: min sum_p w_p ||A_p x - b_p||^2."""
        t_start = time.perf_counter()
        if len(weights) != len(levels):
            raise ValueError("one weight per level required")
        if any(w <= 0 for w in weights):
            raise ValueError("weights must be positive")
        for level in levels:
            level.check(n_x)
        H = self.reg * np.eye(n_x)
        g = np.zeros(n_x)
        D_rows, f_rows = [], []
        for level, w in zip(levels, weights):
            if level.task_rows():
                H += w * (level.A.T @ level.A)
                g += -w * (level.A.T @ level.b)
            if level.constraint_rows():
                D_rows.append(np.asarray(level.D, dtype=float))
                f_rows.append(np.asarray(level.f, dtype=float))
        D_all = np.vstack(D_rows) if D_rows else None
        f_all = np.concatenate(f_rows) if f_rows else None
        res = solve_qp(H, g, D_all, f_all)
        if res.status == "infeasible":
            raise QpInfeasibleError(
                f"weighted problem infeasible at constraint row {res.most_violated}",
                constraint_index=res.most_violated)
        # refinement step against the regularization bias (see solve): the
        # correction targets the unregularized objective's gradient
        g_fix = np.zeros(n_x)
        for level, w in zip(levels, weights):
            if level.task_rows():
                g_fix += -w * (level.A.T @ (level.b - level.A @ res.x))
        res_fix = solve_qp(H, g_fix, D_all,
                           f_all - D_all @ res.x if D_all is not None else None,
                           warm_active=res.active)
        if res_fix.status == "optimal":
            res = QpResult(res.x + res_fix.x, res_fix.lam, res_fix.active,
                           res.iterations + res_fix.iterations, "optimal")
        per_level = []
        for level in levels:
            if level.task_rows():
                resid = level.A @ res.x - level.b
                per_level.append(LevelDiagnostics(level.name, float(resid @ resid), res.active, n_x))
            else:
                per_level.append(LevelDiagnostics(level.name, 0.0, res.active, n_x))
        return HqpSolution(
            x=res.x, per_level=per_level, iterations=res.iterations,
            solve_time=time.perf_counter() - t_start, degraded_level=None,
        )
