"""Parametric linear-dynamics control problems and their assembled operators.

Variables are ordered ``z = (x_0, ..., x_N, u_0, ..., u_{N-1})`` and
``w = (w_0, ..., w_{N-1})``. The dynamics ``x_{k+1} = A_k x_k + B_k u_k + T_k w_k``
read ``M z = T w`` after assembly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import block_diag

from .convex import ConvexExpr, eval_expr
from .errors import InvalidProblemError, ProblemFormatError
from .lp import run_lp
from .sets import HPoly

log = logging.getLogger(__name__)

FEAS_TOL = 1e-7
RANK_RTOL = 1e-9
INTERIOR_TOL = 1e-9


def _matrix(M, rows, cols, what):
    try:
        M = np.asarray(M, dtype=float)
    except (ValueError, TypeError) as exc:
        raise ProblemFormatError(f"{what}: {exc}") from None
    if M.size == 0:
        return np.zeros((rows, cols))
    if M.ndim == 1 and rows == 1:
        M = M.reshape(1, -1)
    elif M.ndim == 1 and cols == 1:
        M = M.reshape(-1, 1)
    elif M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ProblemFormatError(f"{what}: expected a matrix, got {M.ndim}-d data")
    return M


def stage_blocks(n, m, p):
    return (("x", n), ("u", m), ("w", p))


def _relabel(e, blocks):
    if e.blocks == blocks or e.dim != sum(s for _, s in blocks):
        return e
    return ConvexExpr(e.Q, e.q, e.c, e.atoms, blocks)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Convex discrete-time control problem with parameter ``w``.

    Parameters
    ----------
    horizon : int
    state_dims, control_dims, param_dims : sequences of int
        ``n_0..n_N``, ``m_0..m_{N-1}`` and ``p_0..p_{N-1}``.
    A, B, T : sequences of arrays
        Dynamics matrices, one per stage.
    stage_costs : sequence of ConvexExpr
        ``h_k`` over ``(x_k, u_k, w_k)``.
    terminal_cost : ConvexExpr
        ``h_N`` over ``x_N``.
    initial_set : HPoly
        ``C``.
    control_sets : sequence of HPoly
        ``Omega_k``.
    wbar : array, optional
        Default parameter value.
    """

    horizon: int
    state_dims: tuple
    control_dims: tuple
    param_dims: tuple
    A: tuple
    B: tuple
    T: tuple
    stage_costs: tuple
    terminal_cost: ConvexExpr
    initial_set: HPoly
    control_sets: tuple
    wbar: np.ndarray = field(default=None)

    def __post_init__(self):
        N = int(self.horizon)
        if N < 1:
            raise ProblemFormatError("horizon must be a positive integer")
        n = tuple(int(v) for v in self.state_dims)
        m = tuple(int(v) for v in self.control_dims)
        p = tuple(int(v) for v in self.param_dims)
        if len(n) != N + 1 or len(m) != N or len(p) != N:
            raise ProblemFormatError("dimension lists do not match the horizon")
        for name in ("A", "B", "T", "stage_costs", "control_sets"):
            if len(getattr(self, name)) != N:
                raise ProblemFormatError(f"{name} must have {N} entries")
        A = tuple(_matrix(self.A[k], n[k + 1], n[k], f"A[{k}]") for k in range(N))
        B = tuple(_matrix(self.B[k], n[k + 1], m[k], f"B[{k}]") for k in range(N))
        T = tuple(_matrix(self.T[k], n[k + 1], p[k], f"T[{k}]") for k in range(N))
        costs = tuple(_relabel(self.stage_costs[k], stage_blocks(n[k], m[k], p[k]))
                      for k in range(N))
        terminal = _relabel(self.terminal_cost, (("x", n[N]),))
        wbar = None if self.wbar is None else np.asarray(self.wbar, float).ravel()
        for name, value in (("horizon", N), ("state_dims", n), ("control_dims", m),
                            ("param_dims", p), ("A", A), ("B", B), ("T", T),
                            ("stage_costs", costs), ("terminal_cost", terminal),
                            ("control_sets", tuple(self.control_sets)), ("wbar", wbar)):
            object.__setattr__(self, name, value)

    # dimensions -------------------------------------------------------------

    @property
    def nz(self):
        return sum(self.state_dims) + sum(self.control_dims)

    @property
    def nw(self):
        return sum(self.param_dims)

    @cached_property
    def x_offsets(self):
        return np.concatenate([[0], np.cumsum(self.state_dims)]).astype(int)

    @cached_property
    def u_offsets(self):
        return (sum(self.state_dims) + np.concatenate([[0], np.cumsum(self.control_dims)])).astype(int)

    @cached_property
    def w_offsets(self):
        return np.concatenate([[0], np.cumsum(self.param_dims)]).astype(int)

    def x_slice(self, k):
        return slice(self.x_offsets[k], self.x_offsets[k + 1])

    def u_slice(self, k):
        return slice(self.u_offsets[k], self.u_offsets[k + 1])

    def w_slice(self, k):
        return slice(self.w_offsets[k], self.w_offsets[k + 1])

    def split_w(self, w):
        w = check_parameter(self, w)
        return [w[self.w_slice(k)] for k in range(self.horizon)]

    def default_w(self):
        return np.zeros(self.nw) if self.wbar is None else self.wbar.copy()

    # cached derived objects -------------------------------------------------

    @cached_property
    def report(self):
        return validate_problem(self)

    @cached_property
    def system(self):
        return assemble_operators(self)

    @cached_property
    def cost(self):
        return global_cost(self)

    @cached_property
    def anchors(self):
        """A point of ``C`` and of each ``Omega_k`` (``None`` where empty)."""
        return (_inner_point(self.initial_set),
                tuple(_inner_point(S) for S in self.control_sets))

    def require_valid(self):
        if not self.report.ok:
            raise InvalidProblemError(self.report)
        return self

    def with_T(self, T):
        """Copy with the parameter matrices replaced."""
        return ControlProblem(self.horizon, self.state_dims, self.control_dims,
                              self.param_dims, self.A, self.B, tuple(T),
                              self.stage_costs, self.terminal_cost, self.initial_set,
                              self.control_sets, self.wbar)


def check_parameter(p, w):
    """Return ``w`` as a flat float vector of length ``sum(p_k)``."""
    w = np.atleast_1d(np.asarray(w, float)).ravel()
    if w.size != p.nw:
        raise ValueError(f"parameter has length {w.size}, expected {p.nw}")
    return w


def _inner_point(S):
    """Chebyshev-style point of ``S`` (slack capped at 1), or ``None`` if empty."""
    n = S.n
    if not S.b.size:
        if not S.e.size:
            return np.zeros(n)
        x, *_ = np.linalg.lstsq(S.E, S.e, rcond=None)
        return x if np.allclose(S.E @ x, S.e, atol=FEAS_TOL) else None
    norms = np.linalg.norm(S.A, axis=1)
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = run_lp(c, np.hstack([S.A, norms[:, None]]), S.b,
                 np.hstack([S.E, np.zeros((S.e.size, 1))]) if S.e.size else None,
                 S.e if S.e.size else None, [(None, None)] * n + [(0.0, 1.0)])
    if res.status != 0:
        return None
    return res.x[:n]


# --------------------------------------------------------------------------


@dataclass
class Solution:
    """Trajectory and controls; ``z`` is their concatenation."""

    x: list
    u: list
    objective: float = np.nan

    @property
    def z(self):
        return np.concatenate([*self.x, *self.u])

    @classmethod
    def from_z(cls, p, z, objective=np.nan):
        z = np.asarray(z, float)
        x = [z[p.x_slice(k)].copy() for k in range(p.horizon + 1)]
        u = [z[p.u_slice(k)].copy() for k in range(p.horizon)]
        return cls(x, u, float(objective))

    def residuals(self, p, w):
        """Largest dynamics residual and largest constraint violation."""
        w = p.split_w(w)
        dyn = max(np.max(np.abs(self.x[k + 1] - p.A[k] @ self.x[k] - p.B[k] @ self.u[k]
                                - p.T[k] @ w[k]), initial=0.0) for k in range(p.horizon))
        viol = _violation(p.initial_set, self.x[0])
        for k in range(p.horizon):
            viol = max(viol, _violation(p.control_sets[k], self.u[k]))
        return float(dyn), float(viol)

    def is_feasible(self, p, w, tol=FEAS_TOL):
        dyn, viol = self.residuals(p, w)
        return dyn <= tol and viol <= tol

    def to_json(self):
        return {"x": [v.tolist() for v in self.x], "u": [v.tolist() for v in self.u],
                "objective": self.objective}

    @classmethod
    def from_json(cls, d):
        return cls([np.array(v, float) for v in d["x"]], [np.array(v, float) for v in d["u"]],
                   float(d["objective"]))


def _violation(S, x):
    v = 0.0
    if S.b.size:
        v = max(v, float(np.max(S.A @ x - S.b)))
    if S.e.size:
        v = max(v, float(np.max(np.abs(S.E @ x - S.e))))
    return max(v, 0.0)


def simulate(p, x0, u, w):
    """State trajectory generated by ``x0``, controls ``u`` and parameter ``w``."""
    w = p.split_w(w)
    x = [np.asarray(x0, float).ravel()]
    for k in range(p.horizon):
        x.append(p.A[k] @ x[k] + p.B[k] @ np.asarray(u[k], float).ravel() + p.T[k] @ w[k])
    return x


# --------------------------------------------------------------------------
# validation


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self):
        return [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks]


def validate_problem(p):
    """Check shapes, convexity of every cost and interiority of every ``Omega_k``."""
    checks = []
    n, m, q, N = p.state_dims, p.control_dims, p.param_dims, p.horizon
    problems = []
    for k in range(N):
        for name, M, shape in (("A", p.A[k], (n[k + 1], n[k])), ("B", p.B[k], (n[k + 1], m[k])),
                               ("T", p.T[k], (n[k + 1], q[k]))):
            if M.shape != shape:
                problems.append(f"{name}[{k}] has shape {M.shape}, expected {shape}")
        if p.stage_costs[k].dim != n[k] + m[k] + q[k]:
            problems.append(f"stage cost {k} has dimension {p.stage_costs[k].dim}, "
                            f"expected {n[k] + m[k] + q[k]}")
        if p.control_sets[k].n != m[k]:
            problems.append(f"control set {k} has dimension {p.control_sets[k].n}")
    if p.terminal_cost.dim != n[N]:
        problems.append(f"terminal cost has dimension {p.terminal_cost.dim}, expected {n[N]}")
    if p.initial_set.n != n[0]:
        problems.append(f"initial set has dimension {p.initial_set.n}, expected {n[0]}")
    if p.wbar is not None and p.wbar.size != p.nw:
        problems.append(f"wbar has length {p.wbar.size}, expected {p.nw}")
    checks.append(CheckResult("shapes", not problems, "; ".join(problems)))

    for k, e in enumerate([*p.stage_costs, p.terminal_cost]):
        label = f"convex:h{k}"
        neg = [a.weight for a in e.atoms if a.weight < 0]
        ok = e.is_convex
        detail = f"min eigenvalue {e.min_eigenvalue:.3g}"
        if neg:
            detail += f"; negative atom weights {neg}"
        checks.append(CheckResult(label, ok, detail))

    for k, S in enumerate(p.control_sets):
        if S.e.size:
            checks.append(CheckResult(f"interior:Omega{k}", False, "equality rows present"))
            continue
        margin = S.interior_margin()
        checks.append(CheckResult(f"interior:Omega{k}", margin > INTERIOR_TOL,
                                  f"max slack {margin:.3g}"))
    return ValidationReport(checks)


# --------------------------------------------------------------------------
# assembly


@dataclass(frozen=True, eq=False)
class AssembledSystem:
    """``M``, ``T`` and ``K`` with ``Phi(w, z) = -T w + M z``.

    ``K`` is an :class:`HPoly` over ``z``; the free states contribute no rows.
    """

    M: np.ndarray
    T: np.ndarray
    K: HPoly
    x_offsets: np.ndarray
    u_offsets: np.ndarray
    w_offsets: np.ndarray

    @property
    def nz(self):
        return self.M.shape[1]

    @property
    def nw(self):
        return self.T.shape[1]

    def phi(self, w, z):
        return -self.T @ np.asarray(w, float) + self.M @ np.asarray(z, float)


def assemble_operators(p):
    """Build ``M``, ``T`` and ``K`` for ``p``."""
    n, m, N = p.state_dims, p.control_dims, p.horizon
    rows = sum(n[1:])
    M = np.zeros((rows, p.nz))
    r = 0
    for k in range(N):
        nk1 = n[k + 1]
        M[r:r + nk1, p.x_slice(k)] = -p.A[k]
        M[r:r + nk1, p.x_slice(k + 1)] = np.eye(nk1)
        M[r:r + nk1, p.u_slice(k)] = -p.B[k]
        r += nk1
    M += 0.0
    T = block_diag(*p.T) if N else np.zeros((0, 0))
    T = np.asarray(T, float).reshape(rows, p.nw)

    A_rows, b_rows, E_rows, e_rows = [], [], [], []

    def embed(S, sl):
        if S.b.size:
            blk = np.zeros((S.b.size, p.nz))
            blk[:, sl] = S.A
            A_rows.append(blk)
            b_rows.append(S.b)
        if S.e.size:
            blk = np.zeros((S.e.size, p.nz))
            blk[:, sl] = S.E
            E_rows.append(blk)
            e_rows.append(S.e)

    embed(p.initial_set, p.x_slice(0))
    for k in range(N):
        embed(p.control_sets[k], p.u_slice(k))
    K = HPoly(np.vstack(A_rows) if A_rows else None,
              np.concatenate(b_rows) if b_rows else None,
              np.vstack(E_rows) if E_rows else None,
              np.concatenate(e_rows) if e_rows else None, n=p.nz)
    return AssembledSystem(M, T, K, p.x_offsets, p.u_offsets, p.w_offsets)


def kernel_basis(M, rtol=RANK_RTOL):
    """Orthonormal basis of ``ker M`` as the rows of a ``(k, n)`` array.

    Singular values below ``rtol * sigma_max`` count as zero.
    """
    M = np.atleast_2d(np.asarray(M, float))
    n = M.shape[1]
    if M.size == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    smax = s[0] if s.size else 0.0
    if smax == 0.0:
        return np.eye(n)
    rank = int(np.sum(s > rtol * smax))
    return Vt[rank:].copy()


# --------------------------------------------------------------------------
# objective


def _stage_selector(p, k):
    """Matrix picking ``(x_k, u_k, w_k)`` out of ``(z, w)``."""
    nz, nw = p.nz, p.nw
    n, m, q = p.state_dims[k], p.control_dims[k], p.param_dims[k]
    P = np.zeros((n + m + q, nz + nw))
    P[:n, p.x_slice(k)] = np.eye(n)
    P[n:n + m, p.u_slice(k)] = np.eye(m)
    ws = p.w_slice(k)
    P[n + m:, nz + ws.start:nz + ws.stop] = np.eye(q)
    return P


def _terminal_selector(p):
    P = np.zeros((p.state_dims[-1], p.nz + p.nw))
    P[:, p.x_slice(p.horizon)] = np.eye(p.state_dims[-1])
    return P


def global_cost(p):
    """``f(z, w) = sum_k h_k + h_N`` as one expression over ``(z, w)``."""
    from .convex import Atom

    dim = p.nz + p.nw
    Q = np.zeros((dim, dim))
    q = np.zeros(dim)
    c = 0.0
    atoms = []
    parts = [(p.stage_costs[k], _stage_selector(p, k)) for k in range(p.horizon)]
    parts.append((p.terminal_cost, _terminal_selector(p)))
    for e, P in parts:
        Q += P.T @ e.Q @ P
        q += P.T @ e.q
        c += e.c
        atoms.extend(Atom(P.T @ a.a, a.b, a.weight) for a in e.atoms)
    return ConvexExpr(Q, q, c, tuple(atoms), (("z", p.nz), ("w", p.nw)))


def evaluate_objective(p, sol, w):
    """``sum_k h_k(x_k, u_k, w_k) + h_N(x_N)``; ``sol`` may be a Solution or ``z``."""
    if not isinstance(sol, Solution):
        sol = Solution.from_z(p, sol)
    w = p.split_w(w)
    total = 0.0
    for k in range(p.horizon):
        total += eval_expr(p.stage_costs[k], np.concatenate([sol.x[k], sol.u[k], w[k]]))
    return total + eval_expr(p.terminal_cost, sol.x[p.horizon])
