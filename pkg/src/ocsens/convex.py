"""Convex expressions with exact subdifferentials, normal cones and Farkas certificates.

Stage costs use the grammar

    1/2 z'Qz + q'z + c + sum_i weight_i * |a_i'z - b_i|

with ``Q`` positive semidefinite and ``weight_i >= 0``. The subdifferential of
such a function at ``z`` is the zonotope ``g0 + sum_j s_j c_j`` with
``s_j in [-1, 1]``, where the generators ``c_j`` come from the atoms sitting at
their kinks; everything else is smooth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NotDifferentiable, PointNotInSet
from .lp import LinearSystem
from .sets import Singleton, Zonotope

log = logging.getLogger(__name__)

PSD_FLOOR = -1e-10
ACTIVE_TOL = 1e-7
FEAS_TOL = 1e-7


def kink_tol(z):
    return 1e-9 * (1.0 + np.linalg.norm(z))


@dataclass(frozen=True)
class Atom:
    """``weight * |a'z - b|``."""

    a: np.ndarray
    b: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, float)))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True, eq=False)
class ConvexExpr:
    """Quadratic plus weighted absolute values of affine forms.

    ``blocks`` labels consecutive coordinate ranges, e.g.
    ``(("x", 2), ("u", 1), ("w", 1))`` for a stage cost over
    ``(x_k, u_k, w_k)``.
    """

    Q: np.ndarray
    q: np.ndarray
    c: float = 0.0
    atoms: tuple = ()
    blocks: tuple = None
    min_eigenvalue: float = field(init=False)

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, float))
        n = q.size
        Q = np.asarray(self.Q, float)
        Q = np.zeros((n, n)) if Q.size == 0 else np.atleast_2d(Q)
        if Q.shape != (n, n):
            raise ValueError(f"Q has shape {Q.shape}, expected {(n, n)}")
        Q = (Q + Q.T) / 2
        atoms = tuple(a if isinstance(a, Atom) else Atom(**a) for a in self.atoms)
        for atom in atoms:
            if atom.a.size != n:
                raise ValueError(f"atom vector has length {atom.a.size}, expected {n}")
        blocks = self.blocks if self.blocks is not None else (("z", n),)
        blocks = tuple((str(lbl), int(size)) for lbl, size in blocks)
        if sum(size for _, size in blocks) != n:
            raise ValueError("block sizes do not add up to the expression dimension")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "blocks", blocks)
        eig = float(np.linalg.eigvalsh(Q).min()) if n else 0.0
        object.__setattr__(self, "min_eigenvalue", eig)

    @classmethod
    def zero(cls, n, blocks=None):
        return cls(np.zeros((n, n)), np.zeros(n), 0.0, (), blocks)

    @property
    def dim(self):
        return self.q.size

    @property
    def is_convex(self):
        return self.min_eigenvalue >= PSD_FLOOR and all(a.weight >= 0 for a in self.atoms)

    def block_slice(self, label):
        start = 0
        for lbl, size in self.blocks:
            if lbl == label:
                return slice(start, start + size)
            start += size
        raise KeyError(label)

    def atom_matrix(self):
        if not self.atoms:
            return np.zeros((0, self.dim)), np.zeros(0), np.zeros(0)
        A = np.array([a.a for a in self.atoms])
        b = np.array([a.b for a in self.atoms])
        lam = np.array([a.weight for a in self.atoms])
        return A, b, lam

    def subgradient_affine(self, z):
        """Return ``(g0, C)`` with the subdifferential at ``z`` equal to
        ``{g0 + C.T @ s : s in [-1, 1]^k}``; ``C`` has one row per kinked atom."""
        z = np.asarray(z, float)
        g0 = self.Q @ z + self.q
        A, b, lam = self.atom_matrix()
        gens = []
        if len(b):
            r = A @ z - b
            tol = kink_tol(z)
            for i in range(len(b)):
                if lam[i] == 0 or not np.any(A[i]):
                    continue
                if abs(r[i]) > tol:
                    g0 = g0 + lam[i] * np.sign(r[i]) * A[i]
                else:
                    gens.append(lam[i] * A[i])
        C = np.array(gens).reshape(-1, self.dim)
        return g0, C

    def to_json(self):
        return {
            "quadratic": {"Q": self.Q.tolist(), "q": self.q.tolist(), "c": self.c},
            "abs_atoms": [{"a": a.a.tolist(), "b": a.b, "weight": a.weight} for a in self.atoms],
        }


def eval_expr(e, z):
    """Value of ``e`` at ``z``; a 2-D ``z`` evaluates row by row."""
    z = np.asarray(z, float)
    if z.ndim == 2:
        val = 0.5 * np.einsum("ij,jk,ik->i", z, e.Q, z) + z @ e.q + e.c
        A, b, lam = e.atom_matrix()
        if len(b):
            val = val + np.abs(z @ A.T - b) @ lam
        return val
    val = 0.5 * z @ e.Q @ z + e.q @ z + e.c
    for atom in e.atoms:
        val += atom.weight * abs(atom.a @ z - atom.b)
    return float(val)


def grad_expr(e, z):
    """Gradient of ``e`` at ``z``.

    Raises
    ------
    NotDifferentiable
        If some atom with nonzero weight sits at its kink.
    """
    g0, C = e.subgradient_affine(z)
    if len(C):
        raise NotDifferentiable(f"{len(C)} atom(s) at their kink")
    return g0


def subdiff_zonotope(e, z, block=None):
    """Subdifferential of ``e`` at ``z`` as a :class:`Zonotope`.

    With ``block`` given (a label from ``e.blocks``) the partial
    subdifferential in that block is returned, the other coordinates being
    held at their values in ``z``.
    """
    g0, C = e.subgradient_affine(z)
    if block is not None:
        sl = e.block_slice(block)
        g0, C = g0[sl], C[:, sl]
    return Zonotope(g0, C)


def subdiff_expr(e, z, block=None):
    """Exact (partial) subdifferential of ``e`` at ``z``.

    A Singleton when ``e`` is differentiable there, a Box when every kinked
    atom is axis-aligned, otherwise the vertex hull of the zonotope.
    """
    return subdiff_zonotope(e, z, block).simplified()


def singular_subdiff_expr(e, z, block=None):
    """Functions of the grammar are finite everywhere, so the normal cone to
    their domain is ``{0}``."""
    n = e.dim if block is None else e.block_slice(block).stop - e.block_slice(block).start
    return Singleton(np.zeros(n))


# --------------------------------------------------------------------------
# cones


@dataclass(frozen=True, eq=False)
class ConeRep:
    """``{G.T lam + L.T mu : lam >= 0}``."""

    generators: np.ndarray
    lineality: np.ndarray
    n: int

    def __post_init__(self):
        G = np.asarray(self.generators, float).reshape(-1, self.n)
        L = np.asarray(self.lineality, float).reshape(-1, self.n)
        G = G[np.linalg.norm(G, axis=1) > 0] if len(G) else G
        L = L[np.linalg.norm(L, axis=1) > 0] if len(L) else L
        object.__setattr__(self, "generators", G)
        object.__setattr__(self, "lineality", L)

    @property
    def dim(self):
        return self.n

    @property
    def is_trivial(self):
        return len(self.generators) == 0 and len(self.lineality) == 0

    def lp_block(self, system, name):
        terms = {}
        if len(self.generators):
            system.add(name + ".lam", len(self.generators), lb=0.0)
            terms[name + ".lam"] = self.generators.T
        if len(self.lineality):
            system.add(name + ".mu", len(self.lineality))
            terms[name + ".mu"] = self.lineality.T
        return terms, np.zeros(self.n)

    def to_json(self):
        return {"type": "cone", "n": self.n, "generators": self.generators.tolist(),
                "lineality": self.lineality.tolist()}


def normal_cone_at(S, x, tol=ACTIVE_TOL):
    """Normal cone of the polyhedron ``S`` at ``x``: active inequality normals
    as generators, equality normals as lineality."""
    x = np.atleast_1d(np.asarray(x, float))
    if S.b.size and np.any(S.A @ x - S.b > FEAS_TOL):
        raise PointNotInSet(f"inequality violated by {np.max(S.A @ x - S.b):.3g}")
    if S.e.size and np.any(np.abs(S.E @ x - S.e) > FEAS_TOL):
        raise PointNotInSet("equality violated")
    active = np.abs(S.A @ x - S.b) <= tol if S.b.size else np.zeros(0, bool)
    return ConeRep(S.A[active], S.E, S.n)


def active_rows(S, x, tol=ACTIVE_TOL):
    x = np.atleast_1d(np.asarray(x, float))
    return np.where(np.abs(S.A @ x - S.b) <= tol)[0] if S.b.size else np.zeros(0, int)


def cone_contains(cone, v, tol=1e-8):
    """Whether ``v`` is a conic combination of the generators plus a lineality
    element; decided by a minimum-residual LP."""
    v = np.atleast_1d(np.asarray(v, float))
    if cone.is_trivial:
        return bool(np.linalg.norm(v) <= tol)
    sys = LinearSystem()
    terms, _ = cone.lp_block(sys, "k")
    sys.add("r+", cone.n, lb=0.0)
    sys.add("r-", cone.n, lb=0.0)
    sys.eq({**terms, "r+": 1.0, "r-": -1.0}, v)
    sol = sys.solve({"r+": np.ones(cone.n), "r-": np.ones(cone.n)})
    if not sol.ok:
        return False
    resid = sol["r+"] - sol["r-"]
    return bool(np.linalg.norm(resid) <= tol * max(1.0, np.linalg.norm(v)))


# --------------------------------------------------------------------------
# Farkas / KKT certificates


@dataclass
class FarkasCertificate:
    """Multipliers proving ``0 in g + A'lam + E'mu`` for some ``g`` in the target set."""

    lam: np.ndarray
    mu: np.ndarray
    subgradient: np.ndarray
    residual: float
    active: np.ndarray

    def to_json(self):
        return {"lambda": self.lam.tolist(), "mu": self.mu.tolist(),
                "subgradient": self.subgradient.tolist(), "residual": self.residual,
                "active": self.active.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["lambda"], float), np.array(d["mu"], float),
                   np.array(d["subgradient"], float), float(d["residual"]),
                   np.array(d["active"], int))


CERT_TOL = 1e-7


def farkas_certificate(constraints, xbar, target, tol=CERT_TOL):
    """Optimality certificate for ``min phi`` over a polyhedron at ``xbar``.

    Finds ``lam >= 0`` on the active inequalities, free ``mu`` and
    ``g in target`` (the subdifferential of ``phi`` at ``xbar``) with
    ``|g + A_I' lam + E' mu| <= tol``. Complementarity holds by construction
    since inactive rows get zero multipliers. Returns ``None`` when no such
    multipliers exist, i.e. ``xbar`` is not a minimizer.
    """
    xbar = np.atleast_1d(np.asarray(xbar, float))
    n = constraints.n
    act = active_rows(constraints, xbar)
    sys = LinearSystem()
    terms, off = target.lp_block(sys, "g")
    if len(act):
        sys.add("lam", len(act), lb=0.0)
        terms["lam"] = constraints.A[act].T
    if constraints.e.size:
        sys.add("mu", constraints.e.size)
        terms["mu"] = constraints.E.T
    sys.add("r+", n, lb=0.0)
    sys.add("r-", n, lb=0.0)
    sys.eq({**terms, "r+": -1.0, "r-": 1.0}, -off)
    sol = sys.solve({"r+": np.ones(n), "r-": np.ones(n)})
    if not sol.ok:
        return None
    g = _recover(sol, terms, off, exclude=("lam", "mu"))
    lam_full = np.zeros(constraints.b.size)
    if len(act):
        lam_full[act] = np.maximum(sol["lam"], 0.0)
    mu = sol["mu"] if constraints.e.size else np.zeros(0)
    resid = g + constraints.A.T @ lam_full + (constraints.E.T @ mu if mu.size else 0.0)
    res = float(np.linalg.norm(resid))
    if res > tol:
        return None
    return FarkasCertificate(lam_full, mu, g, res, act)


def _recover(sol, terms, off, exclude=()):
    p = off.copy()
    for name, coef in terms.items():
        if name in exclude:
            continue
        p = p + np.atleast_2d(coef) @ sol[name]
    return p
