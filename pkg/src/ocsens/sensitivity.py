"""Subdifferential and singular subdifferential of the optimal value function.

All routines work at a parameter ``wbar`` and a solution ``sol`` of the
problem there. The adjoint (costate) recursion runs backwards:

    xt_N = dh_N(x_N)
    xt_k = d_x h_k + A_k' xt_{k+1}             k = N-1, ..., 1
    x0*  = -d_x h_0 - A_0' xt_1                in N(x_0; C)
    u_k* = -d_u h_k - B_k' xt_{k+1}            in N(u_k; Omega_k)
    w_k* =  d_w h_k + T_k' xt_{k+1}

With gradients this pins down ``dV(wbar)`` exactly. With subdifferentials it
becomes a system of inclusions whose ``w*`` part contains ``dV(wbar)``; the
interval mode relaxes it coordinate-wise, the polytope mode solves it exactly
as a lifted polyhedron projected onto ``w*``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .convex import (
    cone_contains,
    grad_expr,
    normal_cone_at,
    subdiff_zonotope,
)
from .errors import ConeCheckFailed, DimCapExceeded, NotDifferentiable, NotSmooth, \
    RegularityError, UnsupportedCombination
from .lp import LinearSystem, project
from .model import RANK_RTOL, Solution, check_parameter, kernel_basis
from .sets import OUTER_BOX, Box, HPoly, Singleton, affine_image, from_json, minkowski_sum, \
    _simplify

log = logging.getLogger(__name__)

SMOOTH_EXACT = "SMOOTH_EXACT"
OUTER_INTERVAL = "OUTER_INTERVAL"
OUTER_POLYTOPE = "OUTER_POLYTOPE"
MODES = (SMOOTH_EXACT, OUTER_INTERVAL, OUTER_POLYTOPE)

MEMBER_TOL = 1e-8


class Membership(str, Enum):
    MEMBER = "MEMBER"
    NOT_MEMBER = "NOT_MEMBER"
    UNDECIDED = "UNDECIDED"


# --------------------------------------------------------------------------
# report types


def _enc_item(v):
    if v is None:
        return None
    if hasattr(v, "to_json"):
        return v.to_json()
    return np.asarray(v, float).tolist()


def _dec_item(v):
    if v is None:
        return None
    if isinstance(v, dict):
        return from_json(v)
    return np.array(v, float)


@dataclass
class AdjointChain:
    """Adjoint variables; vectors in the smooth case, sets otherwise."""

    xtilde: list
    x0star: object
    ustar: list
    wstar: list

    def to_json(self):
        return {"xtilde": [_enc_item(v) for v in self.xtilde],
                "x0star": _enc_item(self.x0star),
                "ustar": [_enc_item(v) for v in self.ustar],
                "wstar": [_enc_item(v) for v in self.wstar]}

    @classmethod
    def from_json(cls, d):
        return cls([_dec_item(v) for v in d["xtilde"]], _dec_item(d["x0star"]),
                   [_dec_item(v) for v in d["ustar"]], [_dec_item(v) for v in d["wstar"]])


@dataclass
class RegularityReport:
    kernel_inclusion_holds: bool
    ker_T_star_basis: np.ndarray
    ker_M_star_basis: np.ndarray
    surjectivity_shortcut: list
    closed_range: bool = True
    closed_range_note: str = "automatic in finite dimensions"
    failing_vector: np.ndarray | None = None

    def to_json(self):
        return {
            "closed_range": self.closed_range,
            "closed_range_note": self.closed_range_note,
            "kernel_inclusion_holds": self.kernel_inclusion_holds,
            "ker_T_star_basis": np.asarray(self.ker_T_star_basis).tolist(),
            "ker_M_star_basis": np.asarray(self.ker_M_star_basis).tolist(),
            "surjectivity_shortcut": list(self.surjectivity_shortcut),
            "failing_vector": None if self.failing_vector is None else self.failing_vector.tolist(),
        }

    @classmethod
    def from_json(cls, d):
        fv = d["failing_vector"]
        return cls(bool(d["kernel_inclusion_holds"]), np.array(d["ker_T_star_basis"], float),
                   np.array(d["ker_M_star_basis"], float), [bool(v) for v in d["surjectivity_shortcut"]],
                   bool(d["closed_range"]), d["closed_range_note"],
                   None if fv is None else np.array(fv, float))


@dataclass
class SensitivityReport:
    mode: str
    subdiff_V: object
    singular_subdiff_V: object
    chain: AdjointChain | None
    cone_checks: list = field(default_factory=list)
    oracle_check: object = None
    regularity: RegularityReport | None = None
    status: str = "OK"
    warnings: list = field(default_factory=list)
    wbar: np.ndarray | None = None
    value: float | None = None

    def to_json(self):
        return {
            "mode": self.mode,
            "status": self.status,
            "wbar": None if self.wbar is None else np.asarray(self.wbar).tolist(),
            "value": self.value,
            "subdiff_V": _enc_item(self.subdiff_V),
            "singular_subdiff_V": _enc_item(self.singular_subdiff_V),
            "chain": None if self.chain is None else self.chain.to_json(),
            "cone_checks": [{"name": n, "passed": bool(ok)} for n, ok in self.cone_checks],
            "oracle_check": None if self.oracle_check is None else self.oracle_check.to_json(),
            "regularity": None if self.regularity is None else self.regularity.to_json(),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_json(cls, d):
        from .solver import CheckReport

        return cls(
            mode=d["mode"],
            subdiff_V=_dec_item(d["subdiff_V"]),
            singular_subdiff_V=_dec_item(d["singular_subdiff_V"]),
            chain=None if d["chain"] is None else AdjointChain.from_json(d["chain"]),
            cone_checks=[(c["name"], bool(c["passed"])) for c in d["cone_checks"]],
            oracle_check=None if d["oracle_check"] is None else CheckReport.from_json(d["oracle_check"]),
            regularity=None if d["regularity"] is None else RegularityReport.from_json(d["regularity"]),
            status=d["status"],
            warnings=list(d["warnings"]),
            wbar=None if d["wbar"] is None else np.array(d["wbar"], float),
            value=d["value"],
        )


# --------------------------------------------------------------------------
# regularity


def _stage_T_blocks(sys):
    xo, wo = sys.x_offsets, sys.w_offsets
    N = len(wo) - 1
    blocks = []
    for k in range(N):
        r0, r1 = xo[k + 1] - xo[1], xo[k + 2] - xo[1]
        blocks.append(sys.T[r0:r1, wo[k]:wo[k + 1]])
    return blocks


def check_regularity(sys):
    """Kernel inclusion ``ker T' in ker M'`` and per-stage surjectivity of ``T_k``."""
    kT = kernel_basis(sys.T.T)
    kM = kernel_basis(sys.M.T)
    smax = np.linalg.norm(sys.M, 2) if sys.M.size else 0.0
    thresh = RANK_RTOL * max(smax, 1.0)
    holds, failing = True, None
    for v in kT:
        if np.linalg.norm(sys.M.T @ v) > thresh:
            holds, failing = False, v
            break
    surj = []
    for Tk in _stage_T_blocks(sys):
        if Tk.shape[0] == 0:
            surj.append(True)
            continue
        s = np.linalg.svd(Tk, compute_uv=False)
        rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
        surj.append(rank == Tk.shape[0])
    return RegularityReport(holds, kT, kM, surj, failing_vector=failing)


def _require_regular(p):
    reg = check_regularity(p.system)
    if not reg.kernel_inclusion_holds:
        raise RegularityError("kernel inclusion ker T* c ker M* fails", reg.failing_vector)
    return reg


# --------------------------------------------------------------------------
# smooth case


def _stage_point(p, sol, w, k):
    return np.concatenate([sol.x[k], sol.u[k], w[k]])


def _as_solution(p, sol):
    return sol if isinstance(sol, Solution) else Solution.from_z(p, sol)


def subdiff_V_smooth(p, wbar, sol):
    """Exact ``dV(wbar)`` by the gradient recursion.

    Raises
    ------
    NotSmooth
        Some cost is not differentiable at the solution.
    ConeCheckFailed
        ``x0*`` or some ``u_k*`` is outside its normal cone.
    RegularityError
        The kernel inclusion fails.
    """
    wbar = check_parameter(p, wbar)
    sol = _as_solution(p, sol)
    reg = _require_regular(p)
    w = p.split_w(wbar)
    N = p.horizon
    try:
        grads = [grad_expr(p.stage_costs[k], _stage_point(p, sol, w, k)) for k in range(N)]
        gN = grad_expr(p.terminal_cost, sol.x[N])
    except NotDifferentiable as exc:
        raise NotSmooth(str(exc)) from None

    def part(k, label):
        return grads[k][p.stage_costs[k].block_slice(label)]

    xt = [None] * (N + 1)
    xt[N] = gN
    for k in range(N - 1, 0, -1):
        xt[k] = part(k, "x") + p.A[k].T @ xt[k + 1]
    x0s = -part(0, "x") - p.A[0].T @ xt[1]
    us = [-part(k, "u") - p.B[k].T @ xt[k + 1] for k in range(N)]
    ws = [part(k, "w") + p.T[k].T @ xt[k + 1] for k in range(N)]

    checks = [("x0*", cone_contains(normal_cone_at(p.initial_set, sol.x[0]), x0s))]
    for k in range(N):
        checks.append((f"u{k}*", cone_contains(normal_cone_at(p.control_sets[k], sol.u[k]), us[k])))
    chain = AdjointChain(xt[1:], x0s, us, ws)
    if not all(ok for _, ok in checks):
        bad = ", ".join(n for n, ok in checks if not ok)
        raise ConeCheckFailed(f"normal-cone check failed for {bad}", checks)
    wstar = np.concatenate(ws) if ws else np.zeros(0)
    return SensitivityReport(SMOOTH_EXACT, Singleton(wstar), Singleton(np.zeros(p.nw)), chain,
                             checks, regularity=reg, wbar=wbar, value=sol.objective)


# --------------------------------------------------------------------------
# nonsmooth case


def _partials(p, sol, w):
    """Partial subdifferential zonotopes of every stage cost and of ``h_N``."""
    N = p.horizon
    out = []
    for k in range(N):
        e, zk = p.stage_costs[k], _stage_point(p, sol, w, k)
        out.append({lbl: subdiff_zonotope(e, zk, lbl) for lbl in ("x", "u", "w")})
    terminal = subdiff_zonotope(p.terminal_cost, sol.x[N])
    return out, terminal


def _box_cone_bounds(box, cone):
    """Bounding box of ``box`` intersected with ``cone``; ``None`` if empty."""
    n = box.dim
    sys = LinearSystem()
    terms, _ = cone.lp_block(sys, "k")
    if not terms:
        return Box(np.zeros(n), np.zeros(n)) if box.contains(np.zeros(n)) else None
    sys.add("y", n, lb=box.lo, ub=box.hi)
    sys.eq({**terms, "y": -1.0}, np.zeros(n))
    if not sys.solve().ok:
        return None
    lo, hi = np.empty(n), np.empty(n)
    for i in range(n):
        e = np.eye(n)[i]
        r1 = sys.solve({"y": e})
        r2 = sys.solve({"y": -e})
        lo[i] = r1.fun if r1.ok else -np.inf
        hi[i] = -r2.fun if r2.ok else np.inf
    return Box(lo, np.maximum(lo, hi))


def _neg(S):
    return affine_image(-np.eye(S.dim), S, OUTER_BOX) if not isinstance(S, Singleton) \
        else Singleton(-S.point)


def _outer_interval(p, sol, w, parts, terminal):
    N = p.horizon
    box = lambda Z: Z.bounding_box()  # noqa: E731
    Xt = [None] * (N + 1)
    Xt[N] = box(terminal)
    for k in range(N - 1, 0, -1):
        Xt[k] = minkowski_sum(box(parts[k]["x"]), affine_image(p.A[k].T, Xt[k + 1], OUTER_BOX))
    x0_range = minkowski_sum(_neg(box(parts[0]["x"])),
                             _neg(affine_image(p.A[0].T, Xt[1], OUTER_BOX)))
    u_ranges = [minkowski_sum(_neg(box(parts[k]["u"])),
                              _neg(affine_image(p.B[k].T, Xt[k + 1], OUTER_BOX)))
                for k in range(N)]
    W = [minkowski_sum(box(parts[k]["w"]), affine_image(p.T[k].T, Xt[k + 1], OUTER_BOX))
         for k in range(N)]

    x0_cut = _box_cone_bounds(x0_range.bounding_box(), normal_cone_at(p.initial_set, sol.x[0]))
    u_cut = [_box_cone_bounds(u_ranges[k].bounding_box(),
                              normal_cone_at(p.control_sets[k], sol.u[k])) for k in range(N)]
    checks = [("x0*", x0_cut is not None)] + [(f"u{k}*", c is not None) for k, c in enumerate(u_cut)]
    chain = AdjointChain(Xt[1:], x0_cut if x0_cut is not None else x0_range,
                         [c if c is not None else r for c, r in zip(u_cut, u_ranges)], W)
    if not all(ok for _, ok in checks):
        return None, chain, checks
    boxes = [Wk.bounding_box() for Wk in W]
    lo = np.concatenate([b.lo for b in boxes])
    hi = np.concatenate([b.hi for b in boxes])
    result = Singleton(lo) if np.all(hi - lo == 0) else Box(lo, hi)
    return result, chain, checks


def _lifted_system(p, sol, w, parts, terminal, coupling="partials"):
    """Inclusion system over ``(xt, s, cone multipliers, w*)``.

    ``coupling="partials"`` gives each partial subdifferential its own
    multipliers; ``"joint"`` shares them between the blocks of a stage cost,
    so the stage subdifferential enters exactly rather than as the product
    of its partials.
    """
    N = p.horizon
    n = p.state_dims
    sys = LinearSystem()
    for k in range(1, N + 1):
        sys.add(f"xt{k}", n[k])
    joint = {}
    if coupling == "joint":
        for k in range(N):
            Z = subdiff_zonotope(p.stage_costs[k], _stage_point(p, sol, w, k))
            G = Z.generators
            if len(G):
                sys.add(f"s{k}", len(G), lb=-1.0, ub=1.0)
            joint[k] = (Z.center, G)
    elif coupling != "partials":
        raise ValueError(f"unknown coupling {coupling!r}")

    def sub(Z, name):
        if name == "sN" or int(name[2:]) not in joint:
            return Z.lp_block(sys, name)
        k, lbl = int(name[2:]), name[1]
        c, G = joint[k]
        sl = p.stage_costs[k].block_slice(lbl)
        return ({f"s{k}": G[:, sl].T} if len(G) else {}), c[sl].copy()

    # xt_N = dh_N
    terms, off = sub(terminal, "sN")
    sys.eq({**terms, f"xt{N}": -1.0}, -off)
    for k in range(N - 1, 0, -1):
        terms, off = sub(parts[k]["x"], f"sx{k}")
        sys.eq({**terms, f"xt{k+1}": p.A[k].T, f"xt{k}": -1.0}, -off)
    # x0* = -d_x h_0 - A_0' xt_1 in N(x_0; C)
    terms, off = sub(parts[0]["x"], "sx0")
    cterms, _ = normal_cone_at(p.initial_set, sol.x[0]).lp_block(sys, "nC")
    sys.eq({**{k: -np.atleast_2d(v) for k, v in terms.items()}, "xt1": -p.A[0].T,
            **{k: -np.atleast_2d(v) for k, v in cterms.items()}}, off)
    for k in range(N):
        terms, off = sub(parts[k]["u"], f"su{k}")
        cterms, _ = normal_cone_at(p.control_sets[k], sol.u[k]).lp_block(sys, f"nU{k}")
        sys.eq({**{a: -np.atleast_2d(v) for a, v in terms.items()}, f"xt{k+1}": -p.B[k].T,
                **{a: -np.atleast_2d(v) for a, v in cterms.items()}}, off)
    for k in range(N):
        sys.add(f"w{k}", p.param_dims[k])
    for k in range(N):
        terms, off = sub(parts[k]["w"], f"sw{k}")
        sys.eq({**terms, f"xt{k+1}": p.T[k].T, f"w{k}": -1.0}, -off)
    return sys


def _range_box(sys, names):
    cols = sys.columns(names)
    lo, hi = np.empty(len(cols)), np.empty(len(cols))
    for i, c in enumerate(cols):
        obj = np.zeros(sys.n)
        obj[c] = 1.0
        r1 = _solve_raw(sys, obj)
        r2 = _solve_raw(sys, -obj)
        lo[i] = r1 if r1 is not None else -np.inf
        hi[i] = -r2 if r2 is not None else np.inf
    return Box(lo, np.maximum(lo, hi))


def _solve_raw(sys, c):
    from .lp import run_lp

    A_eq, b_eq, A_ub, b_ub = sys.dense()
    res = run_lp(c, A_ub, b_ub, A_eq, b_eq, sys.bounds())
    return res.fun if res.status == 0 else None


def _outer_polytope(p, sol, w, parts, terminal, coupling="partials"):
    N = p.horizon
    sys = _lifted_system(p, sol, w, parts, terminal, coupling)
    wnames = [f"w{k}" for k in range(N)]
    E, e, G, h = sys.inequality_form()
    proj = project(E, e, G, h, sys.columns(wnames))
    if proj.empty:
        return None, None
    S = HPoly(proj.G, proj.h, proj.E, proj.e, n=p.nw)
    if S.is_bounded():
        try:
            S = _simplify(S.to_vpoly())
        except (DimCapExceeded, UnsupportedCombination):
            pass
    xt_sets = [_range_box(sys, [f"xt{k}"]) for k in range(1, N + 1)]
    chain = AdjointChain(xt_sets, None, [], [_range_box(sys, [f"w{k}"]) for k in range(N)])
    return S, chain


def subdiff_V_outer(p, wbar, sol, mode=OUTER_POLYTOPE, coupling="partials"):
    """Outer estimate of ``dV(wbar)`` from the inclusion system.

    ``OUTER_INTERVAL`` propagates boxes and intersects the ranges of ``x0*``
    and ``u*`` with their normal cones once, for an emptiness check only.
    ``OUTER_POLYTOPE`` keeps the inclusions as one lifted polyhedron and
    projects it onto ``w*``; on exceeding the size caps it falls back to the
    interval result and records a warning. ``coupling`` is passed to the
    lifted system; ``"joint"`` tightens the polytope when an atom couples
    the blocks of a stage cost.
    """
    wbar = check_parameter(p, wbar)
    sol = _as_solution(p, sol)
    reg = _require_regular(p)
    w = p.split_w(wbar)
    parts, terminal = _partials(p, sol, w)
    warnings = []
    singular = Singleton(np.zeros(p.nw))
    if mode == OUTER_POLYTOPE:
        try:
            S, chain = _outer_polytope(p, sol, w, parts, terminal, coupling)
            status = "OK" if S is not None else "EMPTY"
            return SensitivityReport(OUTER_POLYTOPE, S, singular, chain, [], regularity=reg,
                                     status=status, wbar=wbar, value=sol.objective)
        except DimCapExceeded as exc:
            warnings.append(f"polytope mode exceeded caps ({exc}); interval fallback")
            log.warning(warnings[-1])
    elif mode != OUTER_INTERVAL:
        raise ValueError(f"unknown outer mode {mode!r}")
    S, chain, checks = _outer_interval(p, sol, w, parts, terminal)
    return SensitivityReport(OUTER_INTERVAL, S, singular, chain, checks, regularity=reg,
                             status="OK" if S is not None else "EMPTY", warnings=warnings,
                             wbar=wbar, value=sol.objective)


# --------------------------------------------------------------------------
# singular subdifferential


def singular_subdiff_V(p, wbar, sol):
    """``{0}``: the zero-initialised recursion, confirmed by an LP over the
    singular inclusion system."""
    wbar = check_parameter(p, wbar)
    sol = _as_solution(p, sol)
    _require_regular(p)
    N = p.horizon
    xt = [None] * (N + 1)
    xt[N] = np.zeros(p.state_dims[N])
    for k in range(N - 1, 0, -1):
        xt[k] = p.A[k].T @ xt[k + 1]
    ws = np.concatenate([p.T[k].T @ xt[k + 1] for k in range(N)])
    assert np.all(ws == 0)

    sysA = p.system
    cone = normal_cone_at(sysA.K, sol.z)
    lsys = LinearSystem()
    lsys.add("x", sysA.M.shape[0])
    terms, _ = cone.lp_block(lsys, "nK")
    lsys.eq({"x": sysA.M.T, **{a: -v for a, v in terms.items()}}, np.zeros(p.nz))
    TT = sysA.T.T
    for i in range(p.nw):
        for sgn in (1.0, -1.0):
            res = lsys.solve({"x": -sgn * TT[i]})
            assert res.ok and abs(res.fun) <= 1e-9, "singular inclusion system has a nonzero w*"
    return Singleton(np.zeros(p.nw))


# --------------------------------------------------------------------------
# general membership test


def membership_general(sys, f, zbar, wbar, cand, subdiff="joint", tol=MEMBER_TOL):
    """Decide ``cand in dV(wbar)`` from the marginal-function formula.

    Looks for ``x``, ``(z*, w*)`` in the subdifferential of ``f`` at
    ``(zbar, wbar)`` and ``v`` in ``N(zbar; K)`` with ``M'x = z* + v`` and
    ``cand = w* + T'x``. ``subdiff="joint"`` uses the exact subdifferential
    of ``f``; ``"product"`` uses the product of its two partial
    subdifferentials, which can be larger when an atom couples ``z`` and ``w``.
    """
    zbar = np.asarray(zbar, float)
    wbar = np.asarray(wbar, float)
    cand = np.atleast_1d(np.asarray(cand, float))
    nz, nw = zbar.size, wbar.size
    g0, C = f.subgradient_affine(np.concatenate([zbar, wbar]))
    lsys = LinearSystem()
    lsys.add("x", sys.M.shape[0])
    zterms, wterms = {}, {}
    if subdiff == "joint":
        if len(C):
            lsys.add("s", len(C), lb=-1.0, ub=1.0)
            zterms["s"], wterms["s"] = C[:, :nz].T, C[:, nz:].T
    elif subdiff == "product":
        Cz = C[:, :nz][np.any(C[:, :nz] != 0, axis=1)]
        Cw = C[:, nz:][np.any(C[:, nz:] != 0, axis=1)]
        if len(Cz):
            lsys.add("sz", len(Cz), lb=-1.0, ub=1.0)
            zterms["sz"] = Cz.T
        if len(Cw):
            lsys.add("sw", len(Cw), lb=-1.0, ub=1.0)
            wterms["sw"] = Cw.T
    else:
        raise ValueError(f"unknown subdifferential rule {subdiff!r}")
    cone = normal_cone_at(sys.K, zbar)
    cterms, _ = cone.lp_block(lsys, "nK")
    lsys.add("rz+", nz, lb=0.0)
    lsys.add("rz-", nz, lb=0.0)
    lsys.add("rw+", nw, lb=0.0)
    lsys.add("rw-", nw, lb=0.0)
    # M'x - z* - v = 0
    lsys.eq({"x": sys.M.T, **{a: -v for a, v in zterms.items()},
             **{a: -v for a, v in cterms.items()}, "rz+": 1.0, "rz-": -1.0}, g0[:nz])
    # w* + T'x = cand
    lsys.eq({"x": sys.T.T, **wterms, "rw+": 1.0, "rw-": -1.0}, cand - g0[nz:])
    ones = {name: np.ones(lsys.blocks[name][1]) for name in ("rz+", "rz-", "rw+", "rw-")}
    sol = lsys.solve(ones)
    if not sol.ok:
        return Membership.UNDECIDED
    resid = np.concatenate([sol["rz+"] - sol["rz-"], sol["rw+"] - sol["rw-"]])
    if np.linalg.norm(resid) <= tol * (1.0 + np.linalg.norm(cand)):
        return Membership.MEMBER
    return Membership.NOT_MEMBER


def is_member(p, wbar, sol, cand, subdiff="joint"):
    """:func:`membership_general` on the assembled data of ``p``."""
    wbar = check_parameter(p, wbar)
    sol = _as_solution(p, sol)
    _require_regular(p)
    return membership_general(p.system, p.cost, sol.z, wbar, cand, subdiff)


# --------------------------------------------------------------------------
# driver


def sensitivity_report(p, wbar=None, sol=None, mode="auto", coupling="partials"):
    """Solve (if needed) and compute the report in the requested mode.

    ``mode="auto"`` picks the exact smooth recursion when every cost is
    differentiable at the solution and the polytope mode otherwise.
    ``coupling`` applies to the polytope mode (see :func:`subdiff_V_outer`).
    """
    from .qp import OPTIMAL
    from .solver import solve

    wbar = p.default_w() if wbar is None else check_parameter(p, wbar)
    if sol is None:
        res = solve(p, wbar)
        if res.status != OPTIMAL:
            raise ValueError(f"no solution at wbar: solver status {res.status}")
        sol = res.solution
    mode = {"smooth": SMOOTH_EXACT, "interval": OUTER_INTERVAL,
            "polytope": OUTER_POLYTOPE}.get(mode, mode)
    if mode == "auto":
        try:
            rep = subdiff_V_smooth(p, wbar, sol)
        except NotSmooth:
            rep = subdiff_V_outer(p, wbar, sol, OUTER_POLYTOPE, coupling)
    elif mode == SMOOTH_EXACT:
        rep = subdiff_V_smooth(p, wbar, sol)
    elif mode in (OUTER_INTERVAL, OUTER_POLYTOPE):
        rep = subdiff_V_outer(p, wbar, sol, mode, coupling)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    rep.singular_subdiff_V = singular_subdiff_V(p, wbar, sol)
    return rep


def candidate_points(S, max_points=64):
    """Points of a reported set to test against the subgradient inequality."""
    if S is None:
        return np.zeros((0, 0))
    if isinstance(S, Singleton):
        return S.point[None, :]
    if not S.is_bounded():
        return np.zeros((0, S.dim))
    V = S.vertices()
    return V[:max_points]
