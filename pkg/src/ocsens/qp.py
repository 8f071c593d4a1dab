"""Primal active-set method for small convex quadratic programs.

    minimize    1/2 x'Hx + c'x
    subject to  A_eq x = b_eq,  G x <= h

``H`` only needs to be positive semidefinite: directions of zero curvature
along which the objective decreases are followed to the first blocking
constraint, and reported as unbounded rays when nothing blocks. Every step is
a descent step, so the recorded objective trace is non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, null_space, qr

from .lp import run_lp

OPTIMAL = "OPTIMAL"
INFEASIBLE = "INFEASIBLE"
UNBOUNDED = "UNBOUNDED"
MAX_ITER = "MAX_ITER"

UNBOUNDED_LEVEL = -1e12


@dataclass
class QPResult:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int = 0
    trace: list = field(default_factory=list)
    working_set: list = field(default_factory=list)
    eq_multipliers: np.ndarray | None = None
    ineq_multipliers: np.ndarray | None = None
    stationarity: float = np.nan
    ray: np.ndarray | None = None


def _independent_rows(A, tol=1e-10):
    if A.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, R, piv = qr(A.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0:
        return np.zeros(0, dtype=int)
    r = int(np.sum(diag > tol * diag[0]))
    return np.sort(piv[:r])


def _phase_one(A_eq, b_eq, G, h, n):
    res = run_lp(np.zeros(n), G, h, A_eq, b_eq, [(None, None)] * n)
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"phase-one LP failed: {res.message}")
    return res.x


def solve_qp(H, c, A_eq=None, b_eq=None, G=None, h=None, x0=None,
             max_iter=1000, tol=1e-10):
    """Solve a convex QP; see the module docstring.

    Parameters
    ----------
    H : (n, n) array
        Positive semidefinite Hessian.
    c : (n,) array
        Linear term.
    A_eq, b_eq, G, h : arrays, optional
        Constraint data. Missing blocks mean no constraints of that kind.
    x0 : (n,) array, optional
        Feasible starting point. Without it a phase-one LP finds a vertex.
    max_iter : int
        Iteration cap; the best iterate is returned with status ``MAX_ITER``.

    Returns
    -------
    QPResult
    """
    H = np.atleast_2d(np.asarray(H, float))
    c = np.asarray(c, float).ravel()
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).ravel()
    G = np.zeros((0, n)) if G is None else np.asarray(G, float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, float).ravel()

    eq_rows = _independent_rows(A_eq)
    Ae, be = A_eq[eq_rows], b_eq[eq_rows]

    if x0 is None:
        x = _phase_one(A_eq, b_eq, G, h, n)
        if x is None:
            return QPResult(INFEASIBLE, None, np.inf)
    else:
        x = np.asarray(x0, float).copy()
    if len(be):
        x -= np.linalg.lstsq(Ae, Ae @ x - be, rcond=None)[0]

    def objective(v):
        return float(0.5 * v @ H @ v + c @ v)

    scale_G = np.linalg.norm(G, axis=1) if len(G) else np.zeros(0)
    W = []
    if len(G):
        slack = h - G @ x
        act_tol = 1e-9 * (1 + np.abs(h))
        if np.any(slack < -1e-6 * (1 + np.abs(h))):
            raise ValueError("starting point violates inequality constraints")
        for i in np.argsort(slack):
            if slack[i] > act_tol[i]:
                break
            trial = np.vstack([Ae, G[W + [int(i)]]])
            if np.linalg.matrix_rank(trial, tol=1e-10) == trial.shape[0]:
                W.append(int(i))

    trace = [objective(x)]
    degenerate = False
    status = MAX_ITER
    mult = np.zeros(0)
    it = 0
    for it in range(1, max_iter + 1):
        g = H @ x + c
        A = np.vstack([Ae, G[W]]) if W else Ae
        Z = null_space(A, rcond=1e-12) if len(A) else np.eye(n)
        ray = False
        if Z.shape[1] == 0:
            d = np.zeros(n)
        else:
            Hr = Z.T @ H @ Z
            gr = Z.T @ g
            lam, U = eigh((Hr + Hr.T) / 2)
            pos = lam > 1e-10 * max(1.0, np.abs(lam).max(initial=0.0))
            gn = U[:, ~pos] @ (U[:, ~pos].T @ gr)
            if np.linalg.norm(gn) > 1e-10 * (1 + np.linalg.norm(g)):
                d = -Z @ gn
                ray = True
            else:
                d = -Z @ (U[:, pos] @ ((U[:, pos].T @ gr) / lam[pos]))

        if np.linalg.norm(d) <= 1e-12 * (1 + np.linalg.norm(x)):
            if len(A):
                mult = np.linalg.lstsq(A.T, -g, rcond=None)[0]
            else:
                mult = np.zeros(0)
            lam_W = mult[len(be):]
            neg_tol = tol * (1 + np.linalg.norm(g))
            negative = [k for k in range(len(W)) if lam_W[k] < -neg_tol]
            if not negative:
                status = OPTIMAL
                break
            if degenerate:
                k = min(negative, key=lambda k: W[k])
            else:
                k = min(negative, key=lambda k: lam_W[k])
            W.pop(k)
            continue

        Gd = G @ d if len(G) else np.zeros(0)
        slack = np.maximum(h - G @ x, 0.0) if len(G) else np.zeros(0)
        alpha_block, block = np.inf, None
        dn = np.linalg.norm(d)
        for i in range(len(G)):
            if i in W or Gd[i] <= 1e-13 * dn * max(scale_G[i], 1e-300):
                continue
            a = slack[i] / Gd[i]
            if a < alpha_block - 1e-15:
                alpha_block, block = a, i
        alpha = alpha_block if ray else min(1.0, alpha_block)
        if not np.isfinite(alpha):
            return QPResult(UNBOUNDED, x, -np.inf, it, trace, W, ray=d)
        x = x + alpha * d
        degenerate = alpha <= 1e-14
        if block is not None and alpha == alpha_block:
            W.append(block)
        val = objective(x)
        trace.append(val)
        if val < UNBOUNDED_LEVEL:
            return QPResult(UNBOUNDED, x, val, it, trace, W, ray=d)

    g = H @ x + c
    A = np.vstack([Ae, G[W]]) if W else Ae
    if status != OPTIMAL and len(A):
        mult = np.linalg.lstsq(A.T, -g, rcond=None)[0]
    eq_mult = np.zeros(len(b_eq))
    eq_mult[eq_rows] = mult[:len(be)] if len(mult) else 0.0
    ineq_mult = np.zeros(len(h))
    if W and len(mult):
        ineq_mult[W] = mult[len(be):]
    resid = g + (A.T @ mult if len(A) and len(mult) else 0.0)
    return QPResult(status, x, objective(x), it, trace, sorted(W), eq_mult, ineq_mult,
                    float(np.linalg.norm(resid)))
