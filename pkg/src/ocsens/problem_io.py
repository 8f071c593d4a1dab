"""Reading and writing problem files (JSON)."""

from __future__ import annotations

import json

import numpy as np

from .convex import Atom, ConvexExpr
from .errors import ProblemFormatError
from .model import ControlProblem, stage_blocks
from .sets import HPoly


def _get(d, key, where):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise ProblemFormatError(f"missing field {key!r} in {where}") from None


def _array(v, where):
    try:
        return np.asarray(v, dtype=float)
    except (ValueError, TypeError):
        raise ProblemFormatError(f"{where}: ragged or non-numeric array") from None


def _expr(d, n, blocks, where):
    d = d or {}
    quad = d.get("quadratic") or {}
    Q = _array(quad.get("Q", np.zeros((n, n))), f"{where}.quadratic.Q")
    q = _array(quad.get("q", np.zeros(n)), f"{where}.quadratic.q")
    Q = Q.reshape(n, n) if Q.size == n * n else Q
    q = q.ravel()
    if Q.shape != (n, n) or q.shape != (n,):
        raise ProblemFormatError(f"{where}: quadratic part does not match dimension {n}")
    atoms = []
    for i, a in enumerate(d.get("abs_atoms") or []):
        vec = _array(_get(a, "a", f"{where}.abs_atoms[{i}]"), f"{where}.abs_atoms[{i}].a").ravel()
        if vec.size != n:
            raise ProblemFormatError(f"{where}.abs_atoms[{i}]: length {vec.size}, expected {n}")
        atoms.append(Atom(vec, float(a.get("b", 0.0)), float(a.get("weight", 1.0))))
    return ConvexExpr(Q, q, float(quad.get("c", 0.0)), tuple(atoms), blocks)


def _polyhedron(d, n, where):
    d = d or {}
    ineq = d.get("ineq") or []
    eq = d.get("eq") or []
    A = [_array(_get(r, "a", where), where).ravel() for r in ineq]
    b = [float(_get(r, "alpha", where)) for r in ineq]
    E = [_array(_get(r, "b", where), where).ravel() for r in eq]
    e = [float(_get(r, "beta", where)) for r in eq]
    for row in A + E:
        if row.size != n:
            raise ProblemFormatError(f"{where}: row of length {row.size}, expected {n}")
    return HPoly(np.array(A).reshape(-1, n), b, np.array(E).reshape(-1, n), e, n=n)


def problem_from_dict(d):
    N = int(_get(d, "horizon", "problem"))
    dims = _get(d, "dims", "problem")
    n = [int(v) for v in _get(dims, "state", "dims")]
    m = [int(v) for v in _get(dims, "control", "dims")]
    p = [int(v) for v in _get(dims, "param", "dims")]
    if len(n) != N + 1 or len(m) != N or len(p) != N:
        raise ProblemFormatError("dims do not match the horizon")
    dyn = _get(d, "dynamics", "problem")
    costs = _get(d, "costs", "problem")
    csets = d.get("control_sets") or [{}] * N
    if len(dyn) != N or len(costs) != N or len(csets) != N:
        raise ProblemFormatError(f"dynamics, costs and control_sets need {N} entries")
    A = [_array(_get(s, "A", f"dynamics[{k}]"), f"dynamics[{k}].A") for k, s in enumerate(dyn)]
    B = [_array(_get(s, "B", f"dynamics[{k}]"), f"dynamics[{k}].B") for k, s in enumerate(dyn)]
    T = [_array(_get(s, "T", f"dynamics[{k}]"), f"dynamics[{k}].T") for k, s in enumerate(dyn)]
    h = [_expr(costs[k], n[k] + m[k] + p[k], stage_blocks(n[k], m[k], p[k]), f"costs[{k}]")
         for k in range(N)]
    hN = _expr(d.get("terminal_cost"), n[N], (("x", n[N]),), "terminal_cost")
    C = _polyhedron(d.get("initial_set"), n[0], "initial_set")
    Om = [_polyhedron(csets[k], m[k], f"control_sets[{k}]") for k in range(N)]
    wbar = d.get("wbar")
    wbar = None if wbar is None else _array(wbar, "wbar").ravel()
    return ControlProblem(N, n, m, p, A, B, T, h, hN, C, Om, wbar)


def loads(text):
    """Parse a problem from a JSON string.

    Raises
    ------
    ProblemFormatError
        Invalid JSON (with line and column) or missing/malformed fields.
    """
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: "
                                 f"{exc.msg}") from None
    return problem_from_dict(d)


def load_problem(path):
    with open(path) as fh:
        return loads(fh.read())


def _set_dict(S):
    return {"ineq": [{"a": a.tolist(), "alpha": float(al)} for a, al in zip(S.A, S.b)],
            "eq": [{"b": r.tolist(), "beta": float(be)} for r, be in zip(S.E, S.e)]}


def problem_to_dict(p):
    d = {
        "horizon": p.horizon,
        "dims": {"state": list(p.state_dims), "control": list(p.control_dims),
                 "param": list(p.param_dims)},
        "dynamics": [{"A": p.A[k].tolist(), "B": p.B[k].tolist(), "T": p.T[k].tolist()}
                     for k in range(p.horizon)],
        "costs": [e.to_json() for e in p.stage_costs],
        "terminal_cost": p.terminal_cost.to_json(),
        "initial_set": _set_dict(p.initial_set),
        "control_sets": [_set_dict(S) for S in p.control_sets],
    }
    if p.wbar is not None:
        d["wbar"] = p.wbar.tolist()
    return d


def dumps(p, indent=2):
    return json.dumps(problem_to_dict(p), indent=indent)


def save_problem(p, path):
    with open(path, "w") as fh:
        fh.write(dumps(p) + "\n")
