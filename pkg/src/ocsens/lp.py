"""Linear systems with named variable blocks, LP solves and polyhedral projection.

The :class:`LinearSystem` builder is shared by every place that needs a small
LP (Farkas certificates, membership tests, interval/cone intersections) and by
the Fourier-Motzkin projection used for lifted inclusion systems.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DimCapExceeded

log = logging.getLogger(__name__)

HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}

MAX_FM_ROWS = 5000


def run_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Thin wrapper around HiGHS with tight tolerances.

    Returns the scipy ``OptimizeResult``; ``status`` 0 optimal, 2 infeasible,
    3 unbounded.
    """
    n = len(c)
    if bounds is None:
        bounds = [(None, None)] * n
    if A_ub is not None and len(A_ub) == 0:
        A_ub, b_ub = None, None
    if A_eq is not None and len(A_eq) == 0:
        A_eq, b_eq = None, None
    return linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
        options=HIGHS_OPTIONS,
    )


@dataclass
class LPSolution:
    status: int
    x: np.ndarray | None
    fun: float | None
    blocks: dict

    @property
    def ok(self):
        return self.status == 0

    def __getitem__(self, name):
        start, size = self.blocks[name]
        return self.x[start:start + size]


class LinearSystem:
    """Rows ``sum_b A_b v_b (=|<=) rhs`` over named blocks ``v_b``."""

    def __init__(self):
        self.blocks = {}
        self.lb = []
        self.ub = []
        self._eq = []
        self._le = []

    @property
    def n(self):
        return len(self.lb)

    def add(self, name, size, lb=-np.inf, ub=np.inf):
        if name in self.blocks:
            raise KeyError(f"duplicate block {name!r}")
        self.blocks[name] = (self.n, int(size))
        self.lb.extend(np.broadcast_to(np.asarray(lb, float), (size,)).tolist())
        self.ub.extend(np.broadcast_to(np.asarray(ub, float), (size,)).tolist())
        return name

    def _row_block(self, terms, rhs):
        rhs = np.atleast_1d(np.asarray(rhs, float))
        rows = np.zeros((rhs.size, self.n))
        for name, coef in terms.items():
            start, size = self.blocks[name]
            coef = np.asarray(coef, float)
            if coef.ndim == 0:
                coef = coef * np.eye(size)
            elif coef.ndim == 1:
                coef = coef.reshape(1, -1)
            if size == 0:
                continue
            rows[:, start:start + size] += coef
        return rows, rhs

    def eq(self, terms, rhs):
        self._eq.append((terms, rhs))

    def le(self, terms, rhs):
        self._le.append((terms, rhs))

    def dense(self):
        """Return ``(A_eq, b_eq, A_ub, b_ub)`` with the current column count."""
        def stack(items):
            if not items:
                return np.zeros((0, self.n)), np.zeros(0)
            pairs = [self._row_block(t, r) for t, r in items]
            return np.vstack([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs])

        A_eq, b_eq = stack(self._eq)
        A_ub, b_ub = stack(self._le)
        return A_eq, b_eq, A_ub, b_ub

    def bounds(self):
        return [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi)
                for lo, hi in zip(self.lb, self.ub)]

    def solve(self, objective=None):
        c = np.zeros(self.n)
        for name, coef in (objective or {}).items():
            start, size = self.blocks[name]
            c[start:start + size] += coef
        A_eq, b_eq, A_ub, b_ub = self.dense()
        if self.n == 0:
            feasible = (np.all(np.abs(b_eq) <= 1e-12) and np.all(b_ub >= -1e-12))
            return LPSolution(0 if feasible else 2, np.zeros(0), 0.0, self.blocks)
        res = run_lp(c, A_ub, b_ub, A_eq, b_eq, self.bounds())
        x = res.x if res.status == 0 else None
        fun = res.fun if res.status == 0 else None
        return LPSolution(res.status, x, fun, self.blocks)

    def inequality_form(self):
        """All constraints as ``(E, e, G, h)`` with bounds folded into ``G``."""
        A_eq, b_eq, A_ub, b_ub = self.dense()
        rows, rhs = [A_ub], [b_ub]
        eye = np.eye(self.n)
        for j, (lo, hi) in enumerate(zip(self.lb, self.ub)):
            if np.isfinite(hi):
                rows.append(eye[j:j + 1])
                rhs.append([hi])
            if np.isfinite(lo):
                rows.append(-eye[j:j + 1])
                rhs.append([-lo])
        return A_eq, b_eq, np.vstack(rows), np.concatenate([np.asarray(r, float) for r in rhs])

    def columns(self, names):
        idx = []
        for name in names:
            start, size = self.blocks[name]
            idx.extend(range(start, start + size))
        return np.array(idx, dtype=int)


# --------------------------------------------------------------------------
# Fourier-Motzkin projection


@dataclass
class Projection:
    """``{y : G y <= h, E y = e}``; ``empty`` when the lifted system is infeasible."""

    G: np.ndarray
    h: np.ndarray
    E: np.ndarray
    e: np.ndarray
    empty: bool = False


def _normalize(G, h):
    scale = np.max(np.abs(G), axis=1) if G.size else np.zeros(len(h))
    keep = scale > 1e-12
    if not np.all(keep):
        # rows 0 <= h_i: infeasible iff h_i < 0
        if np.any(h[~keep] < -1e-9):
            return None
    G, h, scale = G[keep], h[keep], scale[keep]
    return G / scale[:, None], h / scale


def _dedupe(G, h):
    if len(h) == 0:
        return G, h
    key = np.round(np.hstack([G, h[:, None]]), 10)
    _, idx = np.unique(key, axis=0, return_index=True)
    idx = np.sort(idx)
    return G[idx], h[idx]


def _prune_redundant(G, h, E, e, tol=1e-9):
    """Drop rows implied by the remaining ones (one LP per row)."""
    keep = np.ones(len(h), bool)
    for i in range(len(h)):
        keep[i] = False
        others = np.where(keep)[0]
        res = run_lp(-G[i], G[others], h[others], E if len(E) else None,
                     e if len(E) else None)
        if res.status == 0 and -res.fun <= h[i] + tol * max(1.0, abs(h[i])):
            continue
        keep[i] = True
    return G[keep], h[keep]


def project(E, e, G, h, keep, tol=1e-10, max_rows=MAX_FM_ROWS):
    """Project ``{v : E v = e, G v <= h}`` onto the coordinates ``keep``.

    Equalities are used first to substitute eliminated variables out; the
    remaining ones are removed by Fourier-Motzkin with LP redundancy pruning
    after every step.
    """
    n = np.shape(G)[1] if np.ndim(G) == 2 else np.shape(E)[1]
    keep = np.asarray(keep, dtype=int)
    elim = [j for j in range(n) if j not in set(keep.tolist())]
    E, e = np.array(E, float).reshape(-1, n), np.array(e, float)
    G, h = np.array(G, float).reshape(-1, n), np.array(h, float)

    out_E, out_e = [], []
    pending = list(range(len(e)))
    while pending:
        r = pending.pop(0)
        row, rhs = E[r], e[r]
        scale = max(1.0, np.max(np.abs(row)))
        cand = np.abs(row[elim]) if elim else np.zeros(0)
        if cand.size and cand.max() > tol * scale:
            j = elim[int(np.argmax(cand))]
            piv = row[j]
            for s in pending:
                f = E[s, j] / piv
                if f:
                    E[s] -= f * row
                    e[s] -= f * rhs
                    E[s, j] = 0.0
            f = G[:, j] / piv
            G -= np.outer(f, row)
            h -= f * rhs
            G[:, j] = 0.0
            elim.remove(j)
        elif np.max(np.abs(row[keep])) > tol * scale if keep.size else False:
            out_E.append(row.copy())
            out_e.append(rhs)
        elif abs(rhs) > 1e-9 * scale:
            return Projection(np.zeros((0, len(keep))), np.zeros(0),
                              np.zeros((0, len(keep))), np.zeros(0), empty=True)

    out_E = np.array(out_E).reshape(-1, n)
    out_e = np.array(out_e)
    normalized = _normalize(G, h)
    if normalized is None:
        return Projection(np.zeros((0, len(keep))), np.zeros(0),
                          out_E[:, keep], out_e, empty=True)
    G, h = _dedupe(*normalized)

    remaining = [j for j in elim if np.any(np.abs(G[:, j]) > tol)]
    while remaining:
        counts = []
        for j in remaining:
            pos = int(np.sum(G[:, j] > tol))
            neg = int(np.sum(G[:, j] < -tol))
            counts.append(pos * neg - pos - neg)
        j = remaining.pop(int(np.argmin(counts)))
        col = G[:, j]
        P, N = np.where(col > tol)[0], np.where(col < -tol)[0]
        Z = np.where(np.abs(col) <= tol)[0]
        new_G = [G[Z]]
        new_h = [h[Z]]
        if len(P) and len(N):
            gp, gn = G[P] / col[P, None], G[N] / -col[N, None]
            hp, hn = h[P] / col[P], h[N] / -col[N]
            new_G.append((gp[:, None, :] + gn[None, :, :]).reshape(-1, n))
            new_h.append((hp[:, None] + hn[None, :]).reshape(-1))
        G = np.vstack(new_G)
        h = np.concatenate(new_h)
        G[:, j] = 0.0
        if len(h) > max_rows:
            raise DimCapExceeded(f"Fourier-Motzkin produced {len(h)} rows")
        normalized = _normalize(G, h)
        if normalized is None:
            return Projection(np.zeros((0, len(keep))), np.zeros(0),
                              out_E[:, keep], out_e, empty=True)
        G, h = _dedupe(*normalized)
        G, h = _prune_redundant(G, h, out_E, out_e)
        remaining = [k for k in remaining if np.any(np.abs(G[:, k]) > tol)]
        log.debug("eliminated column %d, %d rows remain", j, len(h))

    Gk = G[:, keep]
    if len(h):
        res = run_lp(np.zeros(len(keep)), Gk, h, out_E[:, keep] if len(out_e) else None,
                     out_e if len(out_e) else None, [(None, None)] * len(keep))
        if res.status == 2:
            return Projection(Gk, h, out_E[:, keep], out_e, empty=True)
    return Projection(Gk, h, out_E[:, keep], out_e)


def enumerate_vertices(G, h, E=None, e=None, tol=1e-9, max_combinations=200_000):
    """Vertices of a bounded polyhedron by brute-force active-set enumeration.

    Suitable for the low dimensions handled here. The caller must make sure
    the set is bounded.
    """
    G = np.asarray(G, float)
    d = G.shape[1]
    E = np.zeros((0, d)) if E is None else np.asarray(E, float).reshape(-1, d)
    e = np.zeros(0) if e is None else np.asarray(e, float)
    rank_E = np.linalg.matrix_rank(E) if len(E) else 0
    k = d - rank_E
    m = len(h)
    from math import comb
    if comb(m, k) > max_combinations:
        raise DimCapExceeded(f"{comb(m, k)} active-set combinations")
    found = []
    for S in itertools.combinations(range(m), k):
        A = np.vstack([E, G[list(S)]])
        b = np.concatenate([e, h[list(S)]])
        if np.linalg.matrix_rank(A) < d:
            continue
        v, *_ = np.linalg.lstsq(A, b, rcond=None)
        scale = 1.0 + np.max(np.abs(v), initial=0.0)
        if len(h) and np.any(G @ v > h + tol * scale):
            continue
        if len(e) and np.any(np.abs(E @ v - e) > tol * scale):
            continue
        if not any(np.allclose(v, u, atol=1e-9 * scale) for u in found):
            found.append(v)
    return np.array(found).reshape(-1, d)
