"""Solving the control problem at a fixed parameter, optimality certificates and oracles.

``solve`` rewrites every absolute-value atom with an epigraph variable and
hands the resulting convex QP to :func:`ocsens.qp.solve_qp`. The oracles in the
second half of the module (brute-force grid search over the free variables,
finite differences of ``V``) are independent checks used by the tests.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .convex import FarkasCertificate, eval_expr, farkas_certificate
from .model import FEAS_TOL, Solution, check_parameter, evaluate_objective, simulate
from .qp import INFEASIBLE, MAX_ITER, OPTIMAL, UNBOUNDED, solve_qp
from .sets import HPoly, Zonotope

log = logging.getLogger(__name__)

GRID_CAP = 100_000


@dataclass
class SolveResult:
    solution: Solution | None
    value: float
    status: str
    kkt: FarkasCertificate | None = None
    iterations: int = 0
    trace: list = field(default_factory=list)

    @property
    def z(self):
        return None if self.solution is None else self.solution.z

    def to_json(self):
        return {
            "status": self.status,
            "value": self.value,
            "iterations": self.iterations,
            "solution": None if self.solution is None else self.solution.to_json(),
            "z": None if self.solution is None else self.solution.z.tolist(),
            "kkt": None if self.kkt is None else self.kkt.to_json(),
        }

    @classmethod
    def from_json(cls, d):
        sol = None if d["solution"] is None else Solution.from_json(d["solution"])
        kkt = None if d["kkt"] is None else FarkasCertificate.from_json(d["kkt"])
        return cls(sol, float(d["value"]), d["status"], kkt, int(d["iterations"]))


def _restricted_cost(p, w):
    """Quadratic part and atoms of ``f(., w)`` over ``z``."""
    f = p.cost
    nz = p.nz
    Q = f.Q[:nz, :nz]
    q = f.q[:nz] + f.Q[:nz, nz:] @ w
    c = f.c + f.q[nz:] @ w + 0.5 * w @ f.Q[nz:, nz:] @ w
    rows, rhs, lam = [], [], []
    for atom in f.atoms:
        az, aw = atom.a[:nz], atom.a[nz:]
        b = atom.b - aw @ w
        if atom.weight == 0:
            continue
        if not np.any(az):
            c += atom.weight * abs(b)
            continue
        rows.append(az)
        rhs.append(b)
        lam.append(atom.weight)
    return Q, q, c, np.array(rows).reshape(-1, nz), np.array(rhs), np.array(lam)


def _start_point(p, w):
    x0, us = p.anchors
    if x0 is None or any(u is None for u in us):
        return None
    x = simulate(p, x0, us, w)
    return np.concatenate([*x, *us])


def solve(p, w=None, max_iter=2000, certify=True):
    """Minimize ``f(z, w)`` over ``M z = T w``, ``z in K``.

    Parameters
    ----------
    certify : bool
        Attach a KKT certificate from :func:`kkt_verify`. Value-only callers
        (grids, finite differences) switch it off.

    Returns
    -------
    SolveResult
    """
    w = p.default_w() if w is None else check_parameter(p, w)
    z0 = _start_point(p, w)
    if z0 is None:
        return SolveResult(None, np.inf, INFEASIBLE)
    sys = p.system
    nz = p.nz
    Q, q, c, Aabs, babs, lam = _restricted_cost(p, w)
    k = len(babs)
    n = nz + k
    H = np.zeros((n, n))
    H[:nz, :nz] = Q
    g = np.concatenate([q, lam])
    A_eq = np.hstack([sys.M, np.zeros((sys.M.shape[0], k))])
    b_eq = sys.T @ w
    K = sys.K
    G_parts = [np.hstack([K.A, np.zeros((K.b.size, k))])]
    h_parts = [K.b]
    if K.e.size:
        A_eq = np.vstack([A_eq, np.hstack([K.E, np.zeros((K.e.size, k))])])
        b_eq = np.concatenate([b_eq, K.e])
    if k:
        I = np.eye(k)
        G_parts += [np.hstack([Aabs, -I]), np.hstack([-Aabs, -I])]
        h_parts += [babs, -babs]
    G = np.vstack(G_parts)
    h = np.concatenate(h_parts)
    t0 = np.abs(Aabs @ z0 - babs)
    res = solve_qp(H, g, A_eq, b_eq, G, h, x0=np.concatenate([z0, t0]), max_iter=max_iter)
    trace = [v + c for v in res.trace]
    if res.status == UNBOUNDED:
        return SolveResult(None, -np.inf, UNBOUNDED, None, res.iterations, trace)
    if res.status == INFEASIBLE:
        return SolveResult(None, np.inf, INFEASIBLE, None, res.iterations, trace)
    z = res.x[:nz]
    value = evaluate_objective(p, z, w)
    sol = Solution.from_z(p, z, value)
    if res.status == MAX_ITER:
        return SolveResult(sol, value, MAX_ITER, None, res.iterations, trace)
    if not certify:
        return SolveResult(sol, value, OPTIMAL, None, res.iterations, trace)
    kkt = kkt_verify(p, w, sol)
    if kkt is None:
        log.warning("solver returned a point without a KKT certificate")
    return SolveResult(sol, value, OPTIMAL, kkt, res.iterations, trace)


def optimal_value(p, w=None):
    """``V(w)``: ``+inf`` when infeasible, ``-inf`` when unbounded."""
    res = solve(p, w, certify=False)
    if res.status == INFEASIBLE:
        return np.inf
    if res.status == UNBOUNDED:
        return -np.inf
    return res.value


def constraint_set(p, w):
    """All constraints on ``z`` at parameter ``w`` as one :class:`HPoly`."""
    sys = p.system
    E = np.vstack([sys.M, sys.K.E])
    e = np.concatenate([sys.T @ w, sys.K.e])
    return HPoly(sys.K.A, sys.K.b, E, e, n=p.nz)


def kkt_verify(p, w, sol):
    """Optimality certificate for ``sol`` at parameter ``w``, or ``None``.

    The objective's subdifferential in ``z`` is the exact zonotope of
    ``f(., w)``; the constraints are the dynamics together with ``C`` and the
    ``Omega_k``. Infeasible candidates are rejected.
    """
    w = check_parameter(p, w)
    if not isinstance(sol, Solution):
        sol = Solution.from_z(p, sol)
    if not sol.is_feasible(p, w):
        return None
    z = sol.z
    f = p.cost
    g0, C = f.subgradient_affine(np.concatenate([z, w]))
    target = Zonotope(g0[:p.nz], C[:, :p.nz])
    return farkas_certificate(constraint_set(p, w), z, target)


# --------------------------------------------------------------------------
# brute force


def _affine_parametrization(p, w):
    """``z = L d + z_w`` with ``d = (x_0, u_0, ..., u_{N-1})``."""
    n0 = p.state_dims[0]
    m = p.control_dims
    dof = n0 + sum(m)

    def build(d, ww):
        x0 = d[:n0]
        us, s = [], n0
        for mk in m:
            us.append(d[s:s + mk])
            s += mk
        return np.concatenate([*simulate(p, x0, us, ww), *us])

    zw = build(np.zeros(dof), w)
    L = np.column_stack([build(e, np.zeros(p.nw)) for e in np.eye(dof)]) if dof else \
        np.zeros((p.nz, 0))
    return L, zw


@dataclass
class BruteForceResult:
    z: np.ndarray
    value: float
    evaluations: int


def brute_force_minimize(p, w=None, radius=4.0, points=None, levels=40, center=None,
                         shrink=0.5, tol=1e-10, feas_tol=0.0, polish=True, near=1e-2):
    """Minimize by zooming grid search over ``(x_0, u)``.

    Each level evaluates a full tensor grid on a box around the incumbent and
    then halves the box. Grid search can stall next to an oblique kink or
    constraint, so with ``polish`` the constraints and atoms within ``near``
    of the incumbent are enumerated (active or not, kinked or either sign),
    followed by a global pass over every piece with at most ``dim d`` tight
    rows when their number is manageable. Each piece is an
    equality-constrained quadratic minimized through its KKT linear system;
    candidates are evaluated exactly and kept only if feasible. The solver is
    not used.
    """
    w = p.default_w() if w is None else check_parameter(p, w)
    L, zw = _affine_parametrization(p, w)
    dof = L.shape[1]
    if points is None:
        points = {1: 41, 2: 21, 3: 13}.get(dof, 9)
    K = p.system.K
    f = p.cost
    center = np.zeros(dof) if center is None else np.asarray(center, float)
    rad = np.broadcast_to(np.asarray(radius, float), (dof,)).copy()
    best_d, best_v = None, np.inf
    evals = 0
    axis = np.linspace(-1.0, 1.0, points)
    offsets = np.array(list(itertools.product(axis, repeat=dof))) if dof else np.zeros((1, 0))
    for _ in range(levels):
        D = center + offsets * rad
        Z = D @ L.T + zw
        ok = np.ones(len(Z), bool)
        if K.b.size:
            ok &= np.all(Z @ K.A.T <= K.b + feas_tol, axis=1)
        if K.e.size:
            ok &= np.all(np.abs(Z @ K.E.T - K.e) <= feas_tol, axis=1)
        evals += len(Z)
        if np.any(ok):
            V = f_eval(f, Z[ok], w)
            i = int(np.argmin(V))
            if V[i] < best_v:
                best_v, best_d = float(V[i]), D[ok][i]
        if best_d is None:
            break
        center = best_d
        rad = rad * shrink
        if np.all(rad < tol):
            break
    if best_d is None:
        return BruteForceResult(None, np.inf, evals)
    if polish:
        d, v, n = _polish(p, w, L, zw, best_d, near)
        evals += n
        if v < best_v:
            best_d, best_v = d, v
        found = _enumerate_pieces(p, w, L, zw)
        if found is not None:
            d, v, n = found
            evals += n
            if d is not None and v < best_v:
                best_d, best_v = d, v
    return BruteForceResult(best_d @ L.T + zw, best_v, evals)


def _reduced_data(p, w, L, zw):
    """Quadratic, constraints and atoms of ``f(L d + zw, w)`` in terms of ``d``."""
    f, K, nz = p.cost, p.system.K, p.nz
    Qzz, Qzw = f.Q[:nz, :nz], f.Q[:nz, nz:]
    H = L.T @ Qzz @ L
    g = L.T @ (Qzz @ zw + Qzw @ w + f.q[:nz])
    Ad, bd = K.A @ L, K.b - K.A @ zw
    Ed, ed = K.E @ L, K.e - K.E @ zw
    keep = np.linalg.norm(Ad, axis=1) > 0 if len(bd) else np.zeros(0, bool)
    atoms = []
    for atom in f.atoms:
        a = atom.a[:nz] @ L
        beta = atom.b - atom.a[:nz] @ zw - atom.a[nz:] @ w
        if atom.weight > 0 and np.linalg.norm(a) > 0:
            atoms.append((a, beta, atom.weight))
    return H, g, Ad, bd, Ed, ed, keep, atoms


class _Candidates:
    """Exact evaluation of equality-constrained pieces of the reduced problem."""

    def __init__(self, p, w, L, zw):
        self.p, self.w, self.L, self.zw = p, w, L, zw
        self.H, self.g, self.Ad, self.bd, self.Ed, self.ed, _, self.atoms = \
            _reduced_data(p, w, L, zw)
        self.best_d, self.best_v, self.tried = None, np.inf, 0

    def try_piece(self, active, kinked, signs):
        """Minimize the quadratic piece with ``active`` constraints tight,
        ``kinked`` atoms at their kink and the other atoms linearized with
        ``signs``; keep the result if it is feasible and improves."""
        rows, rhs = [self.Ed], [self.ed]
        lin = self.g.copy()
        for i in active:
            rows.append(self.Ad[i:i + 1])
            rhs.append(self.bd[i:i + 1])
        for j, (a, beta, lam) in enumerate(self.atoms):
            if j in kinked:
                rows.append(a[None, :])
                rhs.append([beta])
            else:
                lin = lin + lam * signs[j] * a
        E = np.vstack(rows)
        e = np.concatenate([np.asarray(r, float) for r in rhs])
        m, dof = len(e), self.H.shape[0]
        KKT = np.block([[self.H, E.T], [E, np.zeros((m, m))]])
        rhs_k = np.concatenate([-lin, e])
        sol = np.linalg.lstsq(KKT, rhs_k, rcond=None)[0]
        self.tried += 1
        if np.linalg.norm(KKT @ sol - rhs_k) > 1e-9 * (1 + np.linalg.norm(rhs_k)):
            return
        d = sol[:dof]
        bd, ed = self.bd, self.ed
        if len(bd) and np.any(self.Ad @ d > bd + 1e-12 * (1 + np.abs(bd))):
            return
        if len(ed) and np.any(np.abs(self.Ed @ d - ed) > 1e-12 * (1 + np.abs(ed))):
            return
        v = float(f_eval(self.p.cost, (d @ self.L.T + self.zw)[None, :], self.w)[0])
        if v < self.best_v:
            self.best_d, self.best_v = d, v


def _polish(p, w, L, zw, d0, near, max_combinations=20_000):
    """Enumerate the pieces through constraints and atoms within ``near`` of ``d0``."""
    cands = _Candidates(p, w, L, zw)
    Ad, bd, atoms = cands.Ad, cands.bd, cands.atoms
    scale = 1.0 + np.linalg.norm(d0)
    items = []
    for i in range(len(bd)):
        nrm = np.linalg.norm(Ad[i])
        if nrm > 0:
            items.append(((bd[i] - Ad[i] @ d0) / nrm, "c", i))
    for j, (a, beta, _) in enumerate(atoms):
        items.append((abs(a @ d0 - beta) / np.linalg.norm(a), "a", j))
    items = sorted(t for t in items if t[0] <= near * scale)
    chosen, combos = [], 1
    for t in items:
        k = 2 if t[1] == "c" else 3
        if combos * k > max_combinations:
            break
        chosen.append(t)
        combos *= k
    sign0 = [np.sign(a @ d0 - beta) or 1.0 for a, beta, _ in atoms]
    options = [(0, 1) if t[1] == "c" else (0, 1, -1) for t in chosen]
    for pick in itertools.product(*options):
        active, kinked, signs = [], set(), list(sign0)
        for (_, kind, idx), opt in zip(chosen, pick):
            if kind == "c" and opt:
                active.append(idx)
            elif kind == "a":
                if opt == 0:
                    kinked.add(idx)
                else:
                    signs[idx] = float(opt)
        cands.try_piece(active, kinked, signs)
    if cands.best_d is None:
        return d0, np.inf, cands.tried
    return cands.best_d, cands.best_v, cands.tried


def _enumerate_pieces(p, w, L, zw, max_pieces=200_000):
    """Global pass over every piece with at most ``dof`` tight rows.

    A minimizer of the reduced problem is the minimizer of the quadratic
    piece fixed by its tight constraints, its kinked atoms and the signs of
    the remaining atoms, and an independent subset of at most ``dof`` tight
    rows describes the same affine set. Returns ``None`` if the count of
    pieces exceeds ``max_pieces``.
    """
    cands = _Candidates(p, w, L, zw)
    dof = L.shape[1]
    items = [("c", i) for i in range(len(cands.bd)) if np.linalg.norm(cands.Ad[i]) > 0]
    items += [("a", j) for j in range(len(cands.atoms))]
    k = len(cands.atoms)
    from math import comb

    total = sum(comb(len(items), r) for r in range(min(dof, len(items)) + 1)) * 2 ** k
    if total > max_pieces:
        return None
    sign_patterns = list(itertools.product((1.0, -1.0), repeat=k))
    for r in range(min(dof, len(items)) + 1):
        for subset in itertools.combinations(items, r):
            active = [i for kind, i in subset if kind == "c"]
            kinked = {j for kind, j in subset if kind == "a"}
            free = [j for j in range(k) if j not in kinked]
            seen = set()
            for signs in sign_patterns:
                key = tuple(signs[j] for j in free)
                if key in seen:
                    continue
                seen.add(key)
                cands.try_piece(active, kinked, signs)
    return cands.best_d, cands.best_v, cands.tried


def f_eval(f, Z, w):
    """``f(z, w)`` for every row ``z`` of ``Z``."""
    W = np.broadcast_to(w, (len(Z), len(w)))
    return eval_expr(f, np.hstack([Z, W]))


# --------------------------------------------------------------------------
# parameter grids


@dataclass
class OracleGrid:
    """Tensor grid of parameter values around ``center`` with cached ``V``."""

    center: np.ndarray
    radii: np.ndarray
    points: int
    values: np.ndarray | None = None
    status: list | None = None

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, float))
        self.radii = np.broadcast_to(np.asarray(self.radii, float), self.center.shape).copy()
        if self.points < 1 or self.points % 2 == 0:
            raise ValueError("points per axis must be odd so the center is a grid point")
        if self.points ** self.center.size > GRID_CAP:
            raise ValueError(f"grid has more than {GRID_CAP} points")

    def axes(self):
        return [np.linspace(c - r, c + r, self.points) if self.points > 1 else np.array([c])
                for c, r in zip(self.center, self.radii)]

    def parameters(self):
        """All grid points, last coordinate varying fastest."""
        return np.array(list(itertools.product(*self.axes()))).reshape(-1, self.center.size)

    def center_value(self):
        P = self.parameters()
        i = int(np.argmin(np.linalg.norm(P - self.center, axis=1)))
        return float(self.values[i])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)

    def write_csv(self, fh):
        wr = csv.writer(fh)
        wr.writerow([f"w_{i}" for i in range(self.center.size)] + ["V"])
        for wv, v in zip(self.parameters(), self.values):
            wr.writerow([f"{x:.12g}" for x in wv] + [f"{v:.12g}"])


def grid_oracle(p, g):
    """Fill ``g`` with ``V`` at every grid point; failures are marked per point."""
    if g.center.size != p.nw:
        raise ValueError("grid dimension differs from the parameter dimension")
    vals, stats = [], []
    for wv in g.parameters():
        res = solve(p, wv, certify=False)
        stats.append(res.status)
        if res.status == OPTIMAL:
            vals.append(res.value)
        elif res.status == INFEASIBLE:
            vals.append(np.inf)
        elif res.status == UNBOUNDED:
            vals.append(-np.inf)
        else:
            vals.append(np.nan)
    return OracleGrid(g.center, g.radii, g.points, np.array(vals), stats)


@dataclass
class CheckReport:
    passed: bool
    worst_margin: float
    worst_point: np.ndarray | None
    candidate: np.ndarray
    tol: float = 1e-6

    def to_json(self):
        return {"passed": self.passed, "worst_margin": self.worst_margin,
                "worst_point": None if self.worst_point is None else self.worst_point.tolist(),
                "candidate": self.candidate.tolist(), "tol": self.tol}

    @classmethod
    def from_json(cls, d):
        wp = None if d["worst_point"] is None else np.array(d["worst_point"], float)
        return cls(bool(d["passed"]), float(d["worst_margin"]), wp,
                   np.array(d["candidate"], float), float(d["tol"]))


def subgradient_inequality_check(p, wbar, Vbar, cand, g, tol=1e-6):
    """Check ``V(w) - Vbar >= <cand, w - wbar> - tol`` on every grid point."""
    wbar = np.atleast_1d(np.asarray(wbar, float))
    cand = np.atleast_1d(np.asarray(cand, float))
    P = g.parameters()
    with np.errstate(invalid="ignore"):
        margins = g.values - Vbar - (P - wbar) @ cand
    margins = np.where(np.isnan(margins), -np.inf, margins)
    i = int(np.argmin(margins))
    worst = float(margins[i])
    return CheckReport(bool(worst >= -tol), worst, P[i], cand, tol)


# --------------------------------------------------------------------------
# finite differences of V


def central_difference(p, w, direction, step):
    """``(V(w + h d) - V(w - h d)) / 2h``."""
    d = np.asarray(direction, float)
    return (optimal_value(p, w + step * d) - optimal_value(p, w - step * d)) / (2 * step)


def one_sided_slope(p, w, direction, step=1e-5, Vw=None):
    """``(V(w + h d) - V(w)) / h``."""
    d = np.asarray(direction, float)
    Vw = optimal_value(p, w) if Vw is None else Vw
    return (optimal_value(p, w + step * d) - Vw) / step


def fd_gradient(p, w, step):
    """Central-difference gradient of ``V`` at ``w``."""
    w = np.asarray(w, float)
    return np.array([central_difference(p, w, e, step) for e in np.eye(w.size)])


def directional_derivative(p, w, d, steps=(1e-3, 1e-4)):
    """``V'(w; d)`` from one-sided quotients, linearly extrapolated to step 0."""
    w = np.asarray(w, float)
    Vw = optimal_value(p, w)
    h1, h2 = steps
    s1 = one_sided_slope(p, w, d, h1, Vw)
    s2 = one_sided_slope(p, w, d, h2, Vw)
    return s2 - h2 * (s1 - s2) / (h1 - h2)


def fd_subgradient_samples(p, wbar, directions, eps=(1e-2, 1e-3, 1e-4)):
    """Limiting gradients of ``V`` approached along each direction.

    For a direction ``d`` the gradient is taken by central differences at
    ``wbar + e d`` (step ``e / 100``) for each ``e`` in ``eps`` and
    extrapolated linearly to ``e = 0`` from the two smallest offsets.
    """
    wbar = np.asarray(wbar, float)
    out = []
    for d in np.atleast_2d(directions):
        grads = [fd_gradient(p, wbar + e * d, e * 1e-2) for e in eps]
        e1, e2 = eps[-2], eps[-1]
        g1, g2 = grads[-2], grads[-1]
        out.append(g2 - e2 * (g1 - g2) / (e1 - e2))
    return np.array(out).reshape(-1, wbar.size)
