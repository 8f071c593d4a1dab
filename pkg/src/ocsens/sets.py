"""Finite-dimensional convex sets used as values of subdifferentials.

Four representations are supported: :class:`Singleton`, :class:`Box`
(coordinate bounds, infinite bounds allowed), :class:`HPoly` (inequalities and
equalities) and :class:`VPoly` (convex hull of vertices plus a cone of rays).
``PolyhedralSet`` is an alias of :class:`HPoly` used for problem data.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DimCapExceeded, UnsupportedCombination
from .lp import LinearSystem, enumerate_vertices, run_lp

DIM_CAP = 10
VERTEX_CAP = 10_000


def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float)).copy()


def _mat(A, ncols):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return np.zeros((0, ncols))
    return np.atleast_2d(A).copy()


def _enc(x):
    """JSON-safe list; infinities become strings."""
    out = []
    for v in np.asarray(x, float).ravel():
        out.append("inf" if v == np.inf else "-inf" if v == -np.inf else float(v))
    return out


def _dec(x):
    return np.array([float(v) for v in x], dtype=float)


class SetRep:
    """Common interface of all set representations."""

    dim: int

    def support(self, d):
        raise NotImplementedError

    def contains(self, x, tol=1e-9):
        raise NotImplementedError

    def bounding_box(self):
        """Smallest :class:`Box` containing the set."""
        lo = np.array([-self.support(-e) for e in np.eye(self.dim)])
        hi = np.array([self.support(e) for e in np.eye(self.dim)])
        return Box(lo, hi)

    def is_bounded(self):
        return bool(np.all(np.isfinite(self.bounding_box().lo))
                    and np.all(np.isfinite(self.bounding_box().hi)))

    def to_vpoly(self):
        raise NotImplementedError

    def vertices(self):
        return self.to_vpoly().vertices_

    def lp_block(self, system, name):
        """Add variables to ``system`` encoding a point of this set.

        Returns ``(terms, offset)`` so that the point equals
        ``sum(coef @ var) + offset`` over the returned term dict.
        """
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Singleton(SetRep):
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _vec(self.point))

    @property
    def dim(self):
        return self.point.size

    def support(self, d):
        return float(np.dot(self.point, d))

    def contains(self, x, tol=1e-9):
        return bool(np.linalg.norm(_vec(x) - self.point) <= tol * (1 + np.linalg.norm(self.point)))

    def bounding_box(self):
        return Box(self.point, self.point)

    def to_vpoly(self):
        return VPoly(self.point[None, :])

    def lp_block(self, system, name):
        return {}, self.point.copy()

    def to_json(self):
        return {"type": "singleton", "point": _enc(self.point)}

    def __repr__(self):
        return f"Singleton({self.point.tolist()})"


@dataclass(frozen=True, eq=False)
class Box(SetRep):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo, hi = _vec(self.lo), _vec(self.hi)
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("box requires lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    @property
    def center(self):
        return np.where(np.isfinite(self.lo) & np.isfinite(self.hi), (self.lo + self.hi) / 2, 0.0)

    @property
    def radius(self):
        return (self.hi - self.lo) / 2

    def support(self, d):
        d = _vec(d)
        total = 0.0
        for lo, hi, di in zip(self.lo, self.hi, d):
            if di > 0:
                total += di * hi
            elif di < 0:
                total += di * lo
        return float(total)

    def contains(self, x, tol=1e-9):
        x = _vec(x)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def bounding_box(self):
        return self

    def is_bounded(self):
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def to_vpoly(self):
        base = np.where(np.isfinite(self.lo), self.lo, np.where(np.isfinite(self.hi), self.hi, 0.0))
        free = [i for i in range(self.dim)
                if np.isfinite(self.lo[i]) and np.isfinite(self.hi[i]) and self.hi[i] > self.lo[i]]
        if len(free) > 13:
            raise DimCapExceeded(f"box with {len(free)} free coordinates")
        verts = []
        for corner in itertools.product((0, 1), repeat=len(free)):
            v = base.copy()
            for i, c in zip(free, corner):
                v[i] = self.hi[i] if c else self.lo[i]
            verts.append(v)
        rays = []
        for i in range(self.dim):
            e = np.eye(self.dim)[i]
            if np.isinf(self.hi[i]):
                rays.append(e)
            if np.isinf(self.lo[i]):
                rays.append(-e)
        return VPoly(np.array(verts), np.array(rays).reshape(-1, self.dim))

    def lp_block(self, system, name):
        system.add(name, self.dim, lb=self.lo, ub=self.hi)
        return {name: np.eye(self.dim)}, np.zeros(self.dim)

    def to_json(self):
        return {"type": "box", "lo": _enc(self.lo), "hi": _enc(self.hi)}

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


@dataclass(frozen=True, eq=False)
class HPoly(SetRep):
    """``{x : A x <= b, E x = e}``."""

    A: np.ndarray
    b: np.ndarray
    E: np.ndarray = None
    e: np.ndarray = None
    n: int = field(default=None)

    def __post_init__(self):
        n = self.n
        if n is None:
            for M in (self.A, self.E):
                if M is not None and np.size(M):
                    n = np.atleast_2d(M).shape[1]
                    break
        if n is None:
            raise ValueError("cannot infer dimension of an HPoly without rows; pass n=")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "A", _mat(self.A if self.A is not None else [], n))
        object.__setattr__(self, "b", _vec(self.b if self.b is not None else []))
        object.__setattr__(self, "E", _mat(self.E if self.E is not None else [], n))
        object.__setattr__(self, "e", _vec(self.e if self.e is not None else []))
        if self.A.shape != (self.b.size, n) or self.E.shape != (self.e.size, n):
            raise ValueError("inconsistent HPoly shapes")

    @classmethod
    def whole_space(cls, n):
        return cls(None, None, n=n)

    @classmethod
    def from_box(cls, lo, hi):
        lo, hi = _vec(lo), _vec(hi)
        n = lo.size
        rows, rhs = [], []
        for i in range(n):
            if np.isfinite(hi[i]):
                rows.append(np.eye(n)[i])
                rhs.append(hi[i])
            if np.isfinite(lo[i]):
                rows.append(-np.eye(n)[i])
                rhs.append(-lo[i])
        return cls(np.array(rows).reshape(-1, n), rhs, n=n)

    @property
    def dim(self):
        return self.n

    def support(self, d):
        d = _vec(d)
        res = run_lp(-d, self.A, self.b, self.E, self.e, [(None, None)] * self.n)
        if res.status == 3:
            return np.inf
        if res.status == 2:
            return -np.inf
        return float(-res.fun)

    def contains(self, x, tol=1e-9):
        x = _vec(x)
        s = tol * (1 + np.linalg.norm(x))
        return bool(np.all(self.A @ x <= self.b + s) and np.all(np.abs(self.E @ x - self.e) <= s))

    def is_empty(self):
        res = run_lp(np.zeros(self.n), self.A, self.b, self.E, self.e, [(None, None)] * self.n)
        return res.status == 2

    def interior_margin(self):
        """Largest ``s`` (capped at 1) with a point at normalized slack ``s`` from every inequality."""
        if self.e.size:
            return 0.0
        if not self.b.size:
            return 1.0
        norms = np.linalg.norm(self.A, axis=1)
        A = np.hstack([self.A, norms[:, None]])
        c = np.zeros(self.n + 1)
        c[-1] = -1.0
        bounds = [(None, None)] * self.n + [(None, 1.0)]
        res = run_lp(c, A, self.b, None, None, bounds)
        if res.status != 0:
            return -np.inf
        return float(res.x[-1])

    def to_vpoly(self):
        if self.n > DIM_CAP:
            raise DimCapExceeded(f"dimension {self.n} above cap {DIM_CAP}")
        if not self.is_bounded():
            raise UnsupportedCombination("vertex enumeration of an unbounded HPoly")
        V = enumerate_vertices(self.A, self.b, self.E, self.e)
        if len(V) == 0:
            raise UnsupportedCombination("empty HPoly has no V-representation")
        return VPoly(V)

    def lp_block(self, system, name):
        system.add(name, self.n)
        if self.b.size:
            system.le({name: self.A}, self.b)
        if self.e.size:
            system.eq({name: self.E}, self.e)
        return {name: np.eye(self.n)}, np.zeros(self.n)

    def to_json(self):
        return {
            "type": "hpoly",
            "n": self.n,
            "ineq": [{"a": _enc(a), "alpha": float(al)} for a, al in zip(self.A, self.b)],
            "eq": [{"b": _enc(bb), "beta": float(be)} for bb, be in zip(self.E, self.e)],
        }

    def __repr__(self):
        return f"HPoly(n={self.n}, {self.b.size} ineq, {self.e.size} eq)"


PolyhedralSet = HPoly


@dataclass(frozen=True, eq=False)
class VPoly(SetRep):
    """``conv(vertices) + cone(rays)``."""

    vertices_: np.ndarray
    rays: np.ndarray = None

    def __post_init__(self):
        V = np.atleast_2d(np.asarray(self.vertices_, dtype=float))
        if V.shape[0] == 0:
            raise ValueError("VPoly needs at least one vertex")
        R = _mat(self.rays if self.rays is not None else [], V.shape[1])
        object.__setattr__(self, "vertices_", V.copy())
        object.__setattr__(self, "rays", R)

    @property
    def dim(self):
        return self.vertices_.shape[1]

    def vertices(self):
        return self.vertices_

    def support(self, d):
        d = _vec(d)
        if self.rays.size and np.any(self.rays @ d > 1e-12):
            return np.inf
        return float(np.max(self.vertices_ @ d))

    def contains(self, x, tol=1e-9):
        x = _vec(x)
        if len(self.vertices_) == 1 and not self.rays.size:
            return bool(np.linalg.norm(x - self.vertices_[0]) <= tol * (1 + np.linalg.norm(x)))
        sys = LinearSystem()
        terms, off = self.lp_block(sys, "p")
        sys.add("r+", self.dim, lb=0.0)
        sys.add("r-", self.dim, lb=0.0)
        sys.eq({**terms, "r+": 1.0, "r-": -1.0}, x - off)
        sol = sys.solve({"r+": np.ones(self.dim), "r-": np.ones(self.dim)})
        return bool(sol.ok and sol.fun <= tol * (1 + np.linalg.norm(x)))

    def bounding_box(self):
        lo = self.vertices_.min(axis=0)
        hi = self.vertices_.max(axis=0)
        for r in self.rays:
            hi = np.where(r > 1e-12, np.inf, hi)
            lo = np.where(r < -1e-12, -np.inf, lo)
        return Box(lo, hi)

    def to_vpoly(self):
        return self

    def lp_block(self, system, name):
        k = len(self.vertices_)
        system.add(name + ".theta", k, lb=0.0)
        system.eq({name + ".theta": np.ones((1, k))}, [1.0])
        terms = {name + ".theta": self.vertices_.T}
        if self.rays.size:
            system.add(name + ".rho", len(self.rays), lb=0.0)
            terms[name + ".rho"] = self.rays.T
        return terms, np.zeros(self.dim)

    def to_json(self):
        return {"type": "vpoly", "vertices": [_enc(v) for v in self.vertices_],
                "rays": [_enc(r) for r in self.rays]}

    def __repr__(self):
        return f"VPoly({self.vertices_.tolist()}, rays={self.rays.tolist()})"


@dataclass(frozen=True, eq=False)
class Zonotope(SetRep):
    """``{center + G.T s : s in [-1, 1]^k}``; the shape of grammar subdifferentials."""

    center: np.ndarray
    generators: np.ndarray = None

    def __post_init__(self):
        c = _vec(self.center)
        G = _mat(self.generators if self.generators is not None else [], c.size)
        G = G[np.any(G != 0, axis=1)] if len(G) else G
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", G)

    @property
    def dim(self):
        return self.center.size

    def support(self, d):
        d = _vec(d)
        return float(self.center @ d + np.abs(self.generators @ d).sum())

    def bounding_box(self):
        r = np.abs(self.generators).sum(axis=0)
        return Box(self.center - r, self.center + r)

    def is_bounded(self):
        return True

    def contains(self, x, tol=1e-9):
        return self.to_vpoly().contains(x, tol) if len(self.generators) else \
            Singleton(self.center).contains(x, tol)

    def to_vpoly(self):
        k = len(self.generators)
        if k == 0:
            return VPoly(self.center[None, :])
        if k > 13:
            raise DimCapExceeded(f"zonotope with {k} generators")
        signs = np.array(list(itertools.product((-1.0, 1.0), repeat=k)))
        V, _ = prune_vertices(self.center + signs @ self.generators)
        return VPoly(V)

    def simplified(self):
        """Equivalent Singleton, Box or VPoly."""
        G = self.generators
        if len(G) == 0:
            return Singleton(self.center)
        if all(np.count_nonzero(row) == 1 for row in G):
            r = np.abs(G).sum(axis=0)
            return Box(self.center - r, self.center + r)
        return _simplify(self.to_vpoly())

    def lp_block(self, system, name):
        k = len(self.generators)
        if k == 0:
            return {}, self.center.copy()
        system.add(name, k, lb=-1.0, ub=1.0)
        return {name: self.generators.T}, self.center.copy()

    def to_json(self):
        return {"type": "zonotope", "center": _enc(self.center),
                "generators": [_enc(g) for g in self.generators]}

    def __repr__(self):
        return f"Zonotope({self.center.tolist()}, {self.generators.tolist()})"


def from_json(obj):
    kind = obj["type"]
    if kind == "zonotope":
        G = np.array([_dec(g) for g in obj["generators"]])
        return Zonotope(_dec(obj["center"]), G.reshape(-1, len(obj["center"])))
    if kind == "singleton":
        return Singleton(_dec(obj["point"]))
    if kind == "box":
        return Box(_dec(obj["lo"]), _dec(obj["hi"]))
    if kind == "vpoly":
        V = np.array([_dec(v) for v in obj["vertices"]])
        R = np.array([_dec(r) for r in obj["rays"]]).reshape(-1, V.shape[1])
        return VPoly(V, R)
    if kind == "hpoly":
        n = obj["n"]
        A = np.array([_dec(r["a"]) for r in obj["ineq"]]).reshape(-1, n)
        b = [r["alpha"] for r in obj["ineq"]]
        E = np.array([_dec(r["b"]) for r in obj["eq"]]).reshape(-1, n)
        e = [r["beta"] for r in obj["eq"]]
        return HPoly(A, b, E, e, n=n)
    raise ValueError(f"unknown set type {kind!r}")


# --------------------------------------------------------------------------
# vertex pruning


def _dedupe_rows(P, tol=1e-12):
    if len(P) <= 1:
        return P
    scale = 1 + np.max(np.abs(P))
    key = np.round(P / (tol * scale * 1e3), 0)
    _, idx = np.unique(key, axis=0, return_index=True)
    return P[np.sort(idx)]


def _normalize_rays(R):
    if not R.size:
        return R
    norms = np.linalg.norm(R, axis=1)
    R = R[norms > 1e-12] / norms[norms > 1e-12, None]
    return _dedupe_rows(R, 1e-9)


def prune_vertices(V, rays=None):
    """Remove points of ``V`` that are not extreme.

    The points are projected onto their affine hull; the hull is then taken
    with Qhull (or min/max in one dimension). With rays present a point is
    dropped when an LP shows it lies in the hull of the others plus the cone.
    """
    V = _dedupe_rows(np.atleast_2d(np.asarray(V, float)))
    rays = np.zeros((0, V.shape[1])) if rays is None else _normalize_rays(np.asarray(rays, float))
    if len(V) <= 1:
        return V, rays
    if rays.size:
        keep = np.ones(len(V), bool)
        for i in range(len(V)):
            keep[i] = False
            others = VPoly(V[keep], rays)
            if others.contains(V[i], tol=1e-10):
                continue
            keep[i] = True
        return V[keep], rays
    center = V.mean(axis=0)
    X = V - center
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    r = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    if r == 0:
        return V[:1], rays
    Y = X @ Vt[:r].T
    if r == 1:
        return V[[int(np.argmin(Y[:, 0])), int(np.argmax(Y[:, 0]))]], rays
    try:
        hull = ConvexHull(Y)
        return V[np.sort(hull.vertices)], rays
    except QhullError:
        keep = np.ones(len(V), bool)
        for i in range(len(V)):
            keep[i] = False
            if not VPoly(V[keep]).contains(V[i], tol=1e-10):
                keep[i] = True
        return V[keep], rays


def _simplify(S):
    """Collapse single-vertex, ray-free polytopes to :class:`Singleton`."""
    if isinstance(S, VPoly) and len(S.vertices_) == 1 and not S.rays.size:
        return Singleton(S.vertices_[0])
    return S


# --------------------------------------------------------------------------
# arithmetic


def _as_vpoly(S):
    if isinstance(S, HPoly) and S.dim > DIM_CAP:
        raise UnsupportedCombination(f"HPoly of dimension {S.dim} above cap {DIM_CAP}")
    return S.to_vpoly()


def _as_zonotope(S):
    if isinstance(S, Singleton):
        return Zonotope(S.point, np.zeros((0, S.dim)))
    return S


def minkowski_sum(A, B):
    """Exact Minkowski sum ``A + B``."""
    if A.dim != B.dim:
        raise ValueError(f"dimension mismatch {A.dim} vs {B.dim}")
    if isinstance(A, Singleton) and isinstance(B, Singleton):
        return Singleton(A.point + B.point)
    if isinstance(A, (Singleton, Zonotope)) and isinstance(B, (Singleton, Zonotope)):
        za, zb = _as_zonotope(A), _as_zonotope(B)
        return Zonotope(za.center + zb.center, np.vstack([za.generators, zb.generators]))
    if isinstance(B, Singleton):
        A, B = B, A
    if isinstance(A, Singleton):
        p = A.point
        if isinstance(B, Box):
            return Box(B.lo + p, B.hi + p)
        if isinstance(B, VPoly):
            return VPoly(B.vertices_ + p, B.rays)
        return HPoly(B.A, B.b + B.A @ p, B.E, B.e + B.E @ p, n=B.n)
    if isinstance(A, Box) and isinstance(B, Box):
        return Box(A.lo + B.lo, A.hi + B.hi)
    if isinstance(A, HPoly) and isinstance(B, HPoly) and A.dim > DIM_CAP:
        raise UnsupportedCombination("HPoly + HPoly above dimension cap")
    VA, VB = _as_vpoly(A), _as_vpoly(B)
    if len(VA.vertices_) * len(VB.vertices_) > 100 * VERTEX_CAP:
        raise DimCapExceeded("too many vertex pairs")
    sums = (VA.vertices_[:, None, :] + VB.vertices_[None, :, :]).reshape(-1, A.dim)
    V, R = prune_vertices(sums, np.vstack([VA.rays, VB.rays]))
    if len(V) > VERTEX_CAP:
        raise DimCapExceeded(f"{len(V)} vertices above cap")
    return _simplify(VPoly(V, R))


EXACT = "EXACT"
OUTER_BOX = "OUTER_BOX"


def affine_image(M, S, mode=EXACT):
    """Image ``{M x : x in S}``.

    ``EXACT`` maps vertices and rays; ``OUTER_BOX`` returns the interval
    enclosure ``center' = M c``, ``radius' = |M| r`` of the bounding box.
    """
    M = np.atleast_2d(np.asarray(M, float))
    if M.shape[1] != S.dim:
        raise ValueError(f"matrix has {M.shape[1]} columns, set has dimension {S.dim}")
    if isinstance(S, Singleton):
        return Singleton(M @ S.point)
    if isinstance(S, Zonotope) and mode == EXACT:
        return Zonotope(M @ S.center, S.generators @ M.T)
    if mode == OUTER_BOX:
        box = S.bounding_box()
        with np.errstate(invalid="ignore"):
            a = M * box.lo[None, :]
            b = M * box.hi[None, :]
        a = np.where(M == 0, 0.0, a)
        b = np.where(M == 0, 0.0, b)
        return Box(np.minimum(a, b).sum(axis=1), np.maximum(a, b).sum(axis=1))
    if mode != EXACT:
        raise ValueError(f"unknown mode {mode!r}")
    if isinstance(S, HPoly) and not S.is_bounded():
        raise UnsupportedCombination("EXACT image of an unbounded HPoly")
    if isinstance(S, VPoly) and S.rays.size:
        raise UnsupportedCombination("EXACT image of an unbounded non-box set")
    V = S.to_vpoly()
    W, R = prune_vertices(V.vertices_ @ M.T, V.rays @ M.T if V.rays.size else None)
    return _simplify(VPoly(W, R))


def _point_distance(x, S):
    """Euclidean distance from ``x`` to a bounded set."""
    from .qp import solve_qp

    if isinstance(S, Singleton):
        return float(np.linalg.norm(x - S.point))
    if isinstance(S, Box):
        return float(np.linalg.norm(x - np.clip(x, S.lo, S.hi)))
    V = S.vertices()
    k = len(V)
    # min |V^T th - x|^2, th in simplex
    H = 2 * V @ V.T
    c = -2 * V @ x
    res = solve_qp(H, c, np.ones((1, k)), [1.0], -np.eye(k), np.zeros(k),
                   x0=np.full(k, 1.0 / k))
    val = res.objective + float(x @ x)
    return float(np.sqrt(max(val, 0.0)))


def hausdorff_distance(A, B):
    """Hausdorff distance between two bounded sets (attained at vertices)."""
    if not (A.is_bounded() and B.is_bounded()):
        raise UnsupportedCombination("Hausdorff distance of unbounded sets")
    dA = max(_point_distance(v, B) for v in A.vertices())
    dB = max(_point_distance(v, A) for v in B.vertices())
    return max(dA, dB)


def contains_set(outer, inner, tol=1e-9):
    """Vertex-containment test ``inner`` subset of ``outer`` for bounded ``inner``."""
    return all(outer.contains(v, tol=tol) for v in inner.vertices())
