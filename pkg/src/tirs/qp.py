"""Dense strictly convex QP with two-sided linear constraints.

    minimize    0.5 x'Hx + g'x
    subject to  lb <= A x <= ub

Dual active-set method (Goldfarb-Idnani): start from the unconstrained minimum and
add the most violated constraint each round, dropping constraints whose multiplier
would turn negative.  The sizes here are tiny (a few dozen rows), so the projected
step is rebuilt from scratch every iteration with a Gram-Schmidt factorisation
instead of updating factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

MAX_ITER = 200
REG_SCALE = 1e-8
# condition bound above which H is regularised before factorising
COND_LIMIT = 1e12

OPTIMAL, INFEASIBLE, ITERATION_CAP = "optimal", "infeasible", "iteration-cap"
_STATUS = {0: OPTIMAL, 1: INFEASIBLE, 2: ITERATION_CAP}


@dataclass
class QPProblem:
    H: np.ndarray
    g: np.ndarray
    A: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).reshape(-1)
        n = self.g.size
        if self.H.shape != (n, n):
            raise ValueError(f"H has shape {self.H.shape}, expected {(n, n)}")
        if self.A is None:
            self.A = np.zeros((0, n))
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if n else np.zeros((0, 0))
        m = self.A.shape[0]
        self.lb = np.full(m, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1)
        self.ub = np.full(m, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1)
        if self.lb.size != m or self.ub.size != m:
            raise ValueError("lb and ub need one entry per constraint row")
        if np.any(self.lb > self.ub):
            raise ValueError("lb must not exceed ub")
        if not np.allclose(self.H, self.H.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(self.H).max())):
            raise ValueError("H must be symmetric")

    @property
    def n(self) -> int:
        return self.g.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.H @ x + self.g @ x)


@dataclass
class QPSolution:
    x: np.ndarray
    status: str
    kkt_residual: float
    active_set: tuple = ()
    # +1 for a lower bound, -1 for an upper bound, aligned with active_set
    active_sides: tuple = ()
    multipliers: np.ndarray = field(default=None, repr=False)
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@njit(cache=True)
def _cholesky(H):
    n = H.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        s = H[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= 0.0:
            return L, False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            t = H[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
    return L, True


@njit(cache=True)
def _lower_inverse(L):
    n = L.shape[0]
    X = np.zeros((n, n))
    for c in range(n):
        for i in range(c, n):
            s = 1.0 if i == c else 0.0
            for k in range(c, i):
                s -= L[i, k] * X[k, c]
            X[i, c] = s / L[i, i]
    return X


@njit(cache=True)
def _projected_step(Linv, C, active, k, cp):
    """Primal direction z, dual direction r and whether cp depends on the active rows."""
    n = Linv.shape[0]
    v = Linv @ cp
    Q = np.zeros((k, n))
    R = np.zeros((k, k))
    for j in range(k):
        w = Linv @ C[active[j]]
        for i in range(j):
            R[i, j] = Q[i] @ w
            w = w - R[i, j] * Q[i]
        R[j, j] = np.sqrt(w @ w)
        Q[j] = w / R[j, j]
    coef = np.zeros(k)
    for j in range(k):
        coef[j] = Q[j] @ v
    resid = v.copy()
    for j in range(k):
        resid -= coef[j] * Q[j]
    r = np.zeros(k)
    for i in range(k - 1, -1, -1):
        s = coef[i]
        for j in range(i + 1, k):
            s -= R[i, j] * r[j]
        r[i] = s / R[i, i]
    z = Linv.T @ resid
    # relative test: a tiny residual means cp lies in the span of the active rows
    dependent = k >= n or np.sqrt(resid @ resid) <= 1e-10 * np.sqrt(v @ v)
    return z, r, dependent


@njit(cache=True)
def _dual_active_set(L, g, C, d, n_eq, max_iter, tol):
    n = g.shape[0]
    m = C.shape[0]
    Linv = _lower_inverse(L)
    Hinv = Linv.T @ Linv
    x = -(Hinv @ g)
    active = np.empty(n, np.int64)
    u = np.zeros(n)
    k = 0
    iters = 0
    is_active = np.zeros(m, np.bool_)
    sign = np.ones(m)
    eq_done = 0
    while True:
        # pick the entering constraint: remaining equalities first, then the most violated
        p = -1
        if eq_done < n_eq:
            p = eq_done
            eq_done += 1
            sp = C[p] @ x - d[p]
            if sp > 0.0:
                sign[p] = -1.0
                sp = -sp
        else:
            worst = 0.0
            for i in range(n_eq, m):
                if is_active[i]:
                    continue
                s = C[i] @ x - d[i]
                scale = 1.0 + abs(d[i])
                if s < -tol * scale and s / scale < worst:
                    worst = s / scale
                    p = i
            if p < 0:
                return x, active, u, k, 0, iters, sign
            sp = C[p] @ x - d[p]
        cp = sign[p] * C[p]
        u_plus = 0.0
        while True:
            iters += 1
            if iters > max_iter:
                return x, active, u, k, 2, iters, sign
            z, r, dependent = _projected_step(Linv, C, active, k, cp)
            zz = z @ cp
            for j in range(k):
                r[j] *= sign[active[j]]
            t2 = np.inf
            if not dependent:
                t2 = -sp / zz
            t1 = np.inf
            drop = -1
            for j in range(k):
                if active[j] < n_eq:
                    continue
                if r[j] > 1e-14:
                    t = u[j] / r[j]
                    if t < t1:
                        t1 = t
                        drop = j
            t = min(t1, t2)
            if t == np.inf:
                return x, active, u, k, 1, iters, sign
            if t2 < np.inf:
                x = x + t * z
            for j in range(k):
                u[j] -= t * r[j]
            u_plus += t
            if t2 <= t1:
                active[k] = p
                u[k] = u_plus
                is_active[p] = True
                k += 1
                break
            is_active[active[drop]] = False
            for j in range(drop, k - 1):
                active[j] = active[j + 1]
                u[j] = u[j + 1]
            k -= 1
            sp = sign[p] * (C[p] @ x - d[p])


def _expand(problem: QPProblem):
    """Rows as C x >= d: equalities first, then lower and upper sides in row order."""
    A, lb, ub = problem.A, problem.lb, problem.ub
    rows, rhs, origin, side = [], [], [], []
    eq = np.flatnonzero(lb == ub)
    for i in eq:
        rows.append(A[i])
        rhs.append(lb[i])
        origin.append(i)
        side.append(0)
    for i in range(A.shape[0]):
        if lb[i] == ub[i]:
            continue
        if np.isfinite(lb[i]):
            rows.append(A[i])
            rhs.append(lb[i])
            origin.append(i)
            side.append(1)
        if np.isfinite(ub[i]):
            rows.append(-A[i])
            rhs.append(-ub[i])
            origin.append(i)
            side.append(-1)
    n = problem.n
    C = np.array(rows).reshape(-1, n)
    return C, np.array(rhs, dtype=float), np.array(origin, dtype=np.int64), np.array(side), len(eq)


def regularized_hessian(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky factor of H, adding eps*I only when H is (nearly) singular."""
    L, ok = _cholesky(H)
    if ok:
        diag = np.diag(L)
        if (diag.max() / diag.min()) ** 2 < COND_LIMIT:
            return H, L
    n = H.shape[0]
    eps = REG_SCALE * max(np.trace(H), 1e-300) / n
    Hr = H + eps * np.eye(n)
    L, ok = _cholesky(Hr)
    if not ok:
        raise np.linalg.LinAlgError("H is not positive semidefinite")
    return Hr, L


def _multipliers(problem, active, u, k, sign, origin, side):
    y = np.zeros(problem.A.shape[0])
    for j in range(k):
        c = active[j]
        s = side[c] if side[c] != 0 else sign[c]
        y[origin[c]] += s * u[j]
    return y


def _active_rows(active, k, origin, side, sign):
    rows, sides = [], []
    for j in range(k):
        c = active[j]
        rows.append(int(origin[c]))
        sides.append(int(side[c] if side[c] != 0 else sign[c]))
    order = np.argsort(rows, kind="stable")
    return tuple(rows[i] for i in order), tuple(sides[i] for i in order)


def _warm_solve(problem: QPProblem, Hr: np.ndarray, rows: Sequence[int], sides: Sequence[int]):
    n = problem.n
    if len(rows) == 0 or len(rows) > n:
        return None
    N = problem.A[list(rows)]
    b = np.array([problem.lb[r] if s > 0 else problem.ub[r] for r, s in zip(rows, sides)])
    if not np.all(np.isfinite(b)):
        return None
    k = len(rows)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = Hr
    K[:n, n:] = -N.T
    K[n:, :n] = N
    try:
        sol = np.linalg.solve(K, np.concatenate([-problem.g, b]))
    except np.linalg.LinAlgError:
        return None
    x, lam = sol[:n], sol[n:]
    y = np.zeros(problem.A.shape[0])
    for r, s, l in zip(rows, sides, lam):
        if l * s < -1e-12 and problem.lb[r] != problem.ub[r]:
            return None
        y[r] += l
    return x, y


def solve(problem: QPProblem, warm_start=None, max_iter: int = MAX_ITER, tol: float = 1e-11) -> QPSolution:
    """Solve the QP; optionally try a previous active set first.

    ``warm_start`` may be a previous QPSolution or a sequence of row indices
    (lower bounds assumed unless the row only has an upper bound).
    A warm start is accepted only if its KKT residual certifies optimality;
    otherwise the solve restarts cold, so the answer does not depend on it.
    """
    Hr, L = regularized_hessian(problem.H)
    if warm_start is not None:
        if isinstance(warm_start, QPSolution):
            rows, sides = warm_start.active_set, warm_start.active_sides
        else:
            rows = tuple(int(r) for r in warm_start)
            if any(r < 0 or r >= problem.A.shape[0] for r in rows):
                raise ValueError("warm-start row index out of range")
            sides = tuple(1 if np.isfinite(problem.lb[r]) else -1 for r in rows)
        if len(rows) and max(rows) >= problem.A.shape[0]:
            raise ValueError("warm-start row index out of range")
        warm = _warm_solve(problem, Hr, rows, sides)
        if warm is not None:
            x, y = warm
            sol = QPSolution(x, OPTIMAL, 0.0, tuple(rows), tuple(sides), y, 0)
            res = verify_kkt(problem, sol, H=Hr)
            if res < 1e-9:
                sol.kkt_residual = verify_kkt(problem, sol)
                return sol

    C, d, origin, side, n_eq = _expand(problem)
    x, active, u, k, code, iters, sign = _dual_active_set(L, problem.g, C, d, n_eq, max_iter, tol)
    y = _multipliers(problem, active, u, k, sign, origin, side)
    rows, sides = _active_rows(active, k, origin, side, sign)
    sol = QPSolution(x, _STATUS[code], 0.0, rows, sides, y, iters)
    sol.kkt_residual = verify_kkt(problem, sol)
    return sol


def verify_kkt(problem: QPProblem, solution: QPSolution, H: np.ndarray | None = None) -> float:
    """Infinity norm of stationarity, feasibility, complementarity and sign residuals.

    Multipliers follow H x + g - A'y = 0 with y >= 0 on lower bounds and
    y <= 0 on upper bounds.  Missing multipliers are fitted by least squares.
    """
    H = problem.H if H is None else H
    x = np.asarray(solution.x, dtype=float)
    A, lb, ub = problem.A, problem.lb, problem.ub
    grad = H @ x + problem.g
    y = solution.multipliers
    if y is None:
        y = np.linalg.lstsq(A.T, grad, rcond=None)[0] if A.shape[0] else np.zeros(0)
    ax = A @ x
    stationarity = np.abs(grad - A.T @ y).max(initial=0.0)
    feasibility = np.maximum(np.maximum(lb - ax, ax - ub), 0.0).max(initial=0.0)
    slack_lo = np.where(np.isfinite(lb), ax - lb, np.inf)
    slack_hi = np.where(np.isfinite(ub), ub - ax, np.inf)
    pos, neg = np.maximum(y, 0.0), np.maximum(-y, 0.0)
    with np.errstate(invalid="ignore"):
        comp_lo = np.where(pos > 0.0, pos * np.abs(slack_lo), 0.0)
        comp_hi = np.where(neg > 0.0, neg * np.abs(slack_hi), 0.0)
    # a multiplier pushing on a missing bound is a sign error
    comp_lo = np.where(np.isinf(slack_lo) & (pos > 0.0), pos, comp_lo)
    comp_hi = np.where(np.isinf(slack_hi) & (neg > 0.0), neg, comp_hi)
    complementarity = max(comp_lo.max(initial=0.0), comp_hi.max(initial=0.0))
    return float(max(stationarity, feasibility, complementarity))
