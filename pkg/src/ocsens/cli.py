"""Command-line interface: ``ocsens solve|sens|verify|sweep PROBLEM``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from .errors import ConeCheckFailed, NotSmooth, OcsensError, ProblemFormatError, RegularityError
from .problem_io import load_problem
from .qp import OPTIMAL
from .sensitivity import candidate_points, sensitivity_report
from .solver import (
    OracleGrid,
    fd_subgradient_samples,
    grid_oracle,
    kkt_verify,
    solve,
    subgradient_inequality_check,
)

log = logging.getLogger("ocsens")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2
EXIT_REGULARITY = 3
EXIT_VERIFY = 4
EXIT_CONE = 5


def _num(v):
    """Round floats to 12 significant digits; encode non-finite values as strings."""
    if isinstance(v, dict):
        return {k: _num(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_num(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(f"{v:.12g}") + 0.0
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _num(v.tolist())
    return v


def dump_json(obj):
    return json.dumps(_num(obj), indent=2, sort_keys=False)


def _parse_vector(text):
    if text is None:
        return None
    return np.array([float(t) for t in text.replace(";", ",").split(",") if t.strip()])


def _emit(text, out):
    if out:
        with open(out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load(args):
    p = load_problem(args.problem)
    if not p.report.ok:
        bad = "; ".join(f"{c.name}: {c.detail}" for c in p.report.checks if not c.passed)
        raise ProblemFormatError(f"problem failed validation: {bad}")
    w = _parse_vector(args.wbar)
    w = p.default_w() if w is None else w
    if w.size != p.nw:
        raise ProblemFormatError(f"--wbar has {w.size} entries, expected {p.nw}")
    return p, w


def _grid(p, w, args):
    return OracleGrid(w, args.grid_radius, args.grid_points)


# --------------------------------------------------------------------------


def cmd_solve(args):
    p, w = _load(args)
    res = solve(p, w)
    _emit(dump_json(res.to_json()), args.out)
    return EXIT_OK if res.status == OPTIMAL else EXIT_SOLVER


def _report(p, w, args):
    res = solve(p, w)
    if res.status != OPTIMAL:
        return res, None
    return res, sensitivity_report(p, w, res.solution, args.mode, args.coupling)


def cmd_sens(args):
    p, w = _load(args)
    try:
        res, rep = _report(p, w, args)
    except RegularityError as exc:
        vec = np.asarray(exc.kernel_vector).tolist() if exc.kernel_vector is not None else None
        sys.stderr.write(f"regularity failure: {exc}\nkernel vector: {_num(vec)}\n")
        return EXIT_REGULARITY
    except NotSmooth as exc:
        sys.stderr.write(f"not smooth at the solution ({exc}); use --mode interval|polytope\n")
        return EXIT_INPUT
    except ConeCheckFailed as exc:
        sys.stderr.write(f"{exc}: {exc.checks}\n")
        return EXIT_CONE
    if rep is None:
        sys.stderr.write(f"solver status {res.status}\n")
        return EXIT_SOLVER
    if args.grid_points > 0:
        g = grid_oracle(p, _grid(p, w, args))
        worst = None
        for c in candidate_points(rep.subdiff_V):
            chk = subgradient_inequality_check(p, w, res.value, c, g, args.tol)
            if worst is None or chk.worst_margin < worst.worst_margin:
                worst = chk
        rep.oracle_check = worst
    _emit(dump_json(rep.to_json()), args.out)
    return EXIT_OK


def cmd_verify(args):
    p, w = _load(args)
    lines = []
    ok_all = True

    def record(name, ok, detail=""):
        nonlocal ok_all
        ok_all &= bool(ok)
        lines.append({"check": name, "passed": bool(ok), "detail": detail})

    res = solve(p, w)
    record("solve", res.status == OPTIMAL, res.status)
    if res.status != OPTIMAL:
        _emit(dump_json({"passed": False, "checks": lines}), args.out)
        return EXIT_VERIFY
    record("kkt", kkt_verify(p, w, res.solution) is not None)
    g = grid_oracle(p, _grid(p, w, args))
    if args.candidate is not None:
        cands = [_parse_vector(args.candidate)]
        rep = None
    else:
        try:
            rep = sensitivity_report(p, w, res.solution, args.mode, args.coupling)
        except RegularityError as exc:
            record("regularity", False, str(exc))
            _emit(dump_json({"passed": False, "checks": lines}), args.out)
            return EXIT_VERIFY
        cands = list(candidate_points(rep.subdiff_V))
        record("singular_subdiff_zero", np.all(rep.singular_subdiff_V.point == 0))
    for c in cands:
        chk = subgradient_inequality_check(p, w, res.value, c, g, args.tol)
        detail = {"candidate": c, "worst_margin": chk.worst_margin,
                  "worst_point": chk.worst_point}
        record("subgradient_inequality", chk.passed, detail)
    if rep is not None and rep.subdiff_V is not None and rep.mode != "SMOOTH_EXACT":
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(8, p.nw))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        S = rep.subdiff_V
        for gs in fd_subgradient_samples(p, w, dirs):
            inside = S.contains(gs, tol=1e-5)
            record("fd_subgradient_contained", inside, {"sample": gs})
    _emit(dump_json({"passed": ok_all, "checks": lines}), args.out)
    return EXIT_OK if ok_all else EXIT_VERIFY


def cmd_sweep(args):
    p, w = _load(args)
    if p.nw > 2:
        sys.stderr.write(f"sweep supports at most 2 parameters, problem has {p.nw}\n")
        return EXIT_INPUT
    points = args.grid_points if args.grid_radius > 0 else 1
    g = OracleGrid(w, args.grid_radius, max(points, 1))
    rows = []
    for wv in g.parameters():
        res = solve(p, wv)
        wstar = [math.nan] * p.nw
        if res.status == OPTIMAL:
            try:
                rep = sensitivity_report(p, wv, res.solution, "smooth")
                wstar = list(rep.subdiff_V.point)
            except (NotSmooth, ConeCheckFailed, RegularityError):
                pass
        V = res.value if res.status == OPTIMAL else (math.inf if res.status == "INFEASIBLE"
                                                     else -math.inf)
        rows.append((tuple(wv), V, wstar))
    rows.sort(key=lambda r: r[0])
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow([f"w_{i}" for i in range(p.nw)] + ["V"] + [f"wstar_{i}" for i in range(p.nw)])
    for wv, V, ws in rows:
        wr.writerow([f"{x:.12g}" for x in wv] + [f"{V:.12g}"]
                    + ["" if math.isnan(x) else f"{x:.12g}" for x in ws])
    text = buf.getvalue()
    if args.format == "json":
        text = dump_json([{"w": list(wv), "V": V, "wstar": ws} for wv, V, ws in rows])
    _emit(text, args.out)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="ocsens", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, fmt="json"):
        sp.add_argument("problem", help="problem file (JSON)")
        sp.add_argument("--wbar", help="parameter value, comma separated (default: file's wbar)")
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default=fmt)
        sp.add_argument("--tol", type=float, default=1e-6,
                        help="tolerance of the subgradient inequality checks")

    def modes(sp):
        sp.add_argument("--mode", choices=("auto", "smooth", "interval", "polytope"),
                        default="auto")
        sp.add_argument("--coupling", choices=("partials", "joint"), default="partials",
                        help="polytope mode: separate or shared multipliers per stage cost")

    def grid(sp, radius, points):
        sp.add_argument("--grid-radius", type=float, default=radius)
        sp.add_argument("--grid-points", type=int, default=points)

    sp = sub.add_parser("solve", help="solve at wbar and print the solution")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sens", help="subdifferential report at wbar")
    common(sp)
    modes(sp)
    grid(sp, 0.1, 0)
    sp.set_defaults(func=cmd_sens)

    sp = sub.add_parser("verify", help="check reported subgradients against the grid oracle")
    common(sp)
    modes(sp)
    grid(sp, 0.1, 5)
    sp.add_argument("--candidate", help="check this subgradient instead of the report")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("sweep", help="V (and w* when smooth) over a parameter grid")
    common(sp, fmt="csv")
    grid(sp, 0.5, 11)
    sp.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None):
    level = os.environ.get("OCSENS_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except (ProblemFormatError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except OcsensError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
