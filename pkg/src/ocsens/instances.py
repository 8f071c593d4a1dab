"""Reference problems and random instance generators."""

from __future__ import annotations

import numpy as np

from .convex import Atom, ConvexExpr
from .model import ControlProblem, stage_blocks
from .sets import HPoly


def _half_line(upper=None, lower=None):
    rows, rhs = [], []
    if upper is not None:
        rows.append([1.0])
        rhs.append(upper)
    if lower is not None:
        rows.append([-1.0])
        rhs.append(-lower)
    return HPoly(np.array(rows).reshape(-1, 1), rhs, n=1)


def example1(T0=2.0):
    """Scalar one-stage problem with a smooth solution.

    Minimizes ``x0^2 + x0 u0 + u0^2 + w0/2 + (x1 + 1)^2`` subject to
    ``x1 = x0 - u0 + T0 w0``, ``x0 <= 2`` and ``u0 >= -1``.
    """
    h0 = ConvexExpr([[2, 1, 0], [1, 2, 0], [0, 0, 0]], [0, 0, 0.5], 0.0, (),
                    stage_blocks(1, 1, 1))
    h1 = ConvexExpr([[2.0]], [2.0], 1.0)
    return ControlProblem(1, (1, 1), (1,), (1,), ([[1.0]],), ([[-1.0]],), ([[T0]],),
                          (h0,), h1, _half_line(upper=2.0), (_half_line(lower=-1.0),),
                          wbar=np.zeros(1))


def example2():
    """Two-stage scalar problem with kinks at the solution.

    Costs ``(x0 + u0)^2 + w0^2/2``, ``|x1 - 1| + |w1|`` and ``|x2|``; dynamics
    ``x1 = -x0 - w0``, ``x2 = x1 - u1 + w1``; ``x0 <= 1``, controls free.
    """
    h0 = ConvexExpr([[2, 2, 0], [2, 2, 0], [0, 0, 1]], [0, 0, 0], 0.0, (),
                    stage_blocks(1, 1, 1))
    h1 = ConvexExpr(np.zeros((3, 3)), np.zeros(3), 0.0,
                    (Atom([1, 0, 0], 1.0), Atom([0, 0, 1], 0.0)), stage_blocks(1, 1, 1))
    h2 = ConvexExpr(np.zeros((1, 1)), np.zeros(1), 0.0, (Atom([1.0], 0.0),))
    free = HPoly.whole_space(1)
    return ControlProblem(2, (1, 1, 1), (1, 1), (1, 1),
                          ([[-1.0]], [[1.0]]), ([[0.0]], [[-1.0]]), ([[-1.0]], [[1.0]]),
                          (h0, h1), h2, _half_line(upper=1.0), (free, free),
                          wbar=np.zeros(2))


def _random_psd(rng, n, floor):
    G = rng.normal(size=(n, n))
    return G @ G.T / n + floor * np.eye(n)


def random_dims(rng, max_horizon=3, max_dim=2, surjective=True):
    N = int(rng.integers(1, max_horizon + 1))
    n = [int(rng.integers(1, max_dim + 1)) for _ in range(N + 1)]
    m = [int(rng.integers(1, max_dim + 1)) for _ in range(N)]
    if surjective:
        p = [int(rng.integers(n[k + 1], max_dim + 1)) for k in range(N)]
    else:
        p = [int(rng.integers(1, max_dim + 1)) for _ in range(N)]
    return N, n, m, p


def _full_rank(rng, rows, cols):
    while True:
        M = rng.normal(size=(rows, cols))
        if np.linalg.matrix_rank(M) == min(rows, cols):
            return M


def random_smooth(rng, max_horizon=3, max_dim=2, box=3.0, max_param=None):
    """Strongly convex quadratic costs, surjective ``T_k``, box constraints.

    The boxes are wide enough that the solution is usually interior, but
    active bounds are allowed. ``max_param`` caps ``sum(p_k)``.
    """
    while True:
        N, n, m, p = random_dims(rng, max_horizon, max_dim)
        if max_param is None or sum(p) <= max_param:
            break
    A = [0.8 * rng.normal(size=(n[k + 1], n[k])) for k in range(N)]
    B = [rng.normal(size=(n[k + 1], m[k])) for k in range(N)]
    T = [_full_rank(rng, n[k + 1], p[k]) for k in range(N)]
    costs = []
    for k in range(N):
        d = n[k] + m[k] + p[k]
        Q = _random_psd(rng, d, 0.5)
        costs.append(ConvexExpr(Q, rng.normal(size=d), float(rng.normal()), (),
                                stage_blocks(n[k], m[k], p[k])))
    terminal = ConvexExpr(_random_psd(rng, n[N], 0.5), rng.normal(size=n[N]), 0.0)
    C = HPoly.from_box(-box * np.ones(n[0]), box * np.ones(n[0]))
    Om = tuple(HPoly.from_box(-box * np.ones(m[k]), box * np.ones(m[k])) for k in range(N))
    return ControlProblem(N, n, m, p, A, B, T, costs, terminal, C, Om,
                          wbar=0.1 * rng.normal(size=sum(p)))


def random_polyhedral(rng, max_nz=4, box=2.0):
    """Small instance mixing quadratic and absolute-value terms.

    Horizon and dimensions are chosen so that ``dim z <= max_nz``; every
    ``T_k`` is surjective. Constraint sets are boxes cut by random halfspaces
    that keep a neighbourhood of the origin.
    """
    while True:
        N = int(rng.integers(1, 3))
        n = [int(rng.integers(1, 3)) for _ in range(N + 1)]
        m = [1 for _ in range(N)]
        if sum(n) + sum(m) <= max_nz:
            break
    p = [int(rng.integers(n[k + 1], 3)) for k in range(N)]
    A = [0.7 * rng.normal(size=(n[k + 1], n[k])) for k in range(N)]
    B = [rng.normal(size=(n[k + 1], m[k])) for k in range(N)]
    T = [_full_rank(rng, n[k + 1], p[k]) for k in range(N)]
    costs = []
    for k in range(N):
        d = n[k] + m[k] + p[k]
        Q = _random_psd(rng, d, 0.0) * float(rng.uniform(0, 1) < 0.7)
        atoms = tuple(Atom(rng.normal(size=d), float(rng.normal()), float(rng.uniform(0.2, 1.5)))
                      for _ in range(int(rng.integers(1, 3))))
        costs.append(ConvexExpr(Q, 0.5 * rng.normal(size=d), 0.0, atoms,
                                stage_blocks(n[k], m[k], p[k])))
    terminal = ConvexExpr(_random_psd(rng, n[N], 0.2), rng.normal(size=n[N]), 0.0,
                          (Atom(rng.normal(size=n[N]), float(rng.normal()), 1.0),))
    C = _random_polytope(rng, n[0], box)
    Om = tuple(_random_polytope(rng, m[k], box) for k in range(N))
    return ControlProblem(N, n, m, p, A, B, T, costs, terminal, C, Om,
                          wbar=0.3 * rng.normal(size=sum(p)))


def _random_polytope(rng, d, box):
    """Box ``[-box, box]^d`` cut by up to two random halfspaces through a
    neighbourhood of the origin, so the interior stays nonempty."""
    A = [np.eye(d), -np.eye(d)]
    b = [box * np.ones(d), box * np.ones(d)]
    for _ in range(int(rng.integers(0, 3))):
        a = rng.normal(size=d)
        a /= np.linalg.norm(a)
        A.append(a[None, :])
        b.append([float(rng.uniform(0.3, box))])
    return HPoly(np.vstack(A), np.concatenate(b))
