import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocsens.convex import ConvexExpr
from ocsens.instances import example1, random_polyhedral, random_smooth
from ocsens.model import ControlProblem, stage_blocks
from ocsens.qp import INFEASIBLE, OPTIMAL, UNBOUNDED
from ocsens.sets import HPoly
from ocsens.solver import (
    OracleGrid,
    SolveResult,
    brute_force_minimize,
    central_difference,
    directional_derivative,
    grid_oracle,
    kkt_verify,
    optimal_value,
    solve,
    subgradient_inequality_check,
)


def _scalar(h0, hN, C=None, Om=None, A=1.0, B=1.0, T=1.0):
    return ControlProblem(1, (1, 1), (1,), (1,), ([[A]],), ([[B]],), ([[T]],), (h0,), hN,
                          C or HPoly.whole_space(1), (Om or HPoly.whole_space(1),))


class TestSolve:
    def test_example1(self, p1):
        r = solve(p1)
        assert r.status == OPTIMAL
        np.testing.assert_allclose(r.z, [-0.4, -0.8, 0.4], atol=1e-9)
        assert r.value == pytest.approx(0.2, abs=1e-12)
        assert r.kkt is not None and np.all(r.kkt.lam == 0)

    def test_example2(self, p2):
        r = solve(p2)
        assert r.status == OPTIMAL
        np.testing.assert_allclose(r.z, [-1, 1, 0, 1, 1], atol=1e-9)
        assert r.value == pytest.approx(0.0, abs=1e-12)

    def test_zero_objective(self):
        p = _scalar(ConvexExpr.zero(3, stage_blocks(1, 1, 1)), ConvexExpr.zero(1),
                    C=HPoly([[1.0], [-1.0]], [1.0, 1.0]))
        r = solve(p, [0.3])
        assert r.status == OPTIMAL and r.value == 0.0
        assert r.solution.is_feasible(p, [0.3])

    def test_infeasible(self):
        p = _scalar(ConvexExpr.zero(3, stage_blocks(1, 1, 1)), ConvexExpr.zero(1),
                    C=HPoly([[1.0], [-1.0]], [0.0, -1.0]))
        assert solve(p, [0.0]).status == INFEASIBLE
        assert optimal_value(p, [0.0]) == np.inf

    def test_unbounded(self):
        h0 = ConvexExpr(np.zeros((3, 3)), [0.0, 1.0, 0.0], 0.0, (), stage_blocks(1, 1, 1))
        p = _scalar(h0, ConvexExpr.zero(1))
        assert solve(p, [0.0]).status == UNBOUNDED
        assert optimal_value(p, [0.0]) == -np.inf

    def test_result_json_round_trip(self, p1):
        r = solve(p1)
        back = SolveResult.from_json(json.loads(json.dumps(r.to_json())))
        assert back.status == r.status and back.value == r.value
        np.testing.assert_array_equal(back.z, r.z)
        np.testing.assert_array_equal(back.kkt.lam, r.kkt.lam)

    def test_optimal_value_example2(self, p2):
        assert optimal_value(p2, [0.1, 0.2]) == pytest.approx(0.205, abs=1e-12)
        assert optimal_value(p2, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=30)
    @given(st.integers(0, 100_000))
    def test_optimal_implies_certificate_and_monotone_trace(self, seed):
        rng = np.random.default_rng(seed)
        p = random_polyhedral(rng) if seed % 2 else random_smooth(rng)
        r = solve(p)
        assert r.status == OPTIMAL
        assert r.kkt is not None and r.kkt.residual <= 1e-7
        assert kkt_verify(p, p.default_w(), r.solution) is not None
        tr = np.asarray(r.trace)
        assert np.all(np.diff(tr) <= 1e-12 * (1 + np.abs(tr[:-1])))

    @settings(max_examples=15)
    @given(st.integers(0, 100_000))
    def test_matches_brute_force(self, seed):
        p = random_polyhedral(np.random.default_rng(seed), max_nz=4)
        w = p.default_w()
        bf = brute_force_minimize(p, w, radius=2.0)
        assert solve(p, w).value == pytest.approx(bf.value, abs=1e-4)


class TestKKT:
    def test_suboptimal_feasible_point(self, p1):
        assert kkt_verify(p1, [0.0], np.zeros(3)) is None

    def test_infeasible_point(self, p1):
        assert kkt_verify(p1, [0.0], np.array([-0.4, 0.0, 0.4])) is None

    def test_unconstrained_quadratic(self):
        h0 = ConvexExpr(np.eye(3), [1.0, 0.0, 0.0], 0.0, (), stage_blocks(1, 1, 1))
        p = _scalar(h0, ConvexExpr(np.eye(1), [0.0]))
        r = solve(p, [0.0])
        cert = kkt_verify(p, [0.0], r.z)
        assert cert is not None and cert.residual <= 1e-12


class TestOracle:
    def test_example1_slope(self, p1):
        g = grid_oracle(p1, OracleGrid([0.0], 0.1, 5))
        assert all(s == OPTIMAL for s in g.status)
        V = g.values
        assert (V[3] - V[1]) / 0.1 == pytest.approx(1.3, abs=0.05)

    def test_single_point(self, p1):
        g = grid_oracle(p1, OracleGrid([0.0], 0.1, 1))
        assert g.values.shape == (1,) and g.center_value() == pytest.approx(0.2)

    def test_even_points_rejected(self):
        with pytest.raises(ValueError):
            OracleGrid([0.0], 0.1, 4)

    def test_csv(self, p1):
        g = grid_oracle(p1, OracleGrid([0.0], 0.1, 3))
        buf = io.StringIO()
        g.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "w_0,V" and len(lines) == 4

    def test_infeasible_points_are_inf(self):
        # x1 = x0 + w with x0 = 0 and x1 <= 0 through the terminal... use C and Omega
        p = _scalar(ConvexExpr.zero(3, stage_blocks(1, 1, 1)), ConvexExpr.zero(1),
                    C=HPoly([[1.0], [-1.0]], [0.0, 0.0]), Om=HPoly([[1.0], [-1.0]], [1.0, 1.0]),
                    A=1.0, B=0.0)
        g = grid_oracle(p, OracleGrid([0.0], 1.0, 3))
        assert np.all(g.values == 0.0)

    def test_subgradient_checks(self, p1):
        g = grid_oracle(p1, OracleGrid([0.0], 0.1, 5))
        V0 = g.center_value()
        assert subgradient_inequality_check(p1, [0.0], V0, [1.3], g).passed
        bad = subgradient_inequality_check(p1, [0.0], V0, [2.0], g)
        assert not bad.passed
        # V grows with slope about 1.3, so a slope-2 plane overtakes it for w > 0
        assert bad.worst_point[0] > 0 and bad.worst_margin < -1e-3

    def test_constant_value(self):
        p = _scalar(ConvexExpr.zero(3, stage_blocks(1, 1, 1)), ConvexExpr.zero(1))
        g = grid_oracle(p, OracleGrid([0.0], 1.0, 5))
        assert subgradient_inequality_check(p, [0.0], 0.0, [0.0], g).passed

    @settings(max_examples=10)
    @given(st.integers(0, 100_000))
    def test_value_function_is_convex(self, seed):
        rng = np.random.default_rng(seed)
        p = random_polyhedral(rng)
        if p.nw > 2:
            return
        g = grid_oracle(p, OracleGrid(p.default_w(), 0.4, 5))
        P, V = g.parameters(), g.values
        index = {tuple(np.round(w, 12)): v for w, v in zip(P, V)}
        for i in range(len(P)):
            for j in range(i + 1, len(P)):
                m = tuple(np.round((P[i] + P[j]) / 2, 12))
                if m in index and np.isfinite(V[i]) and np.isfinite(V[j]):
                    assert index[m] <= 0.5 * (V[i] + V[j]) + 1e-6


class TestFiniteDifferences:
    def test_example1(self, p1):
        assert central_difference(p1, np.zeros(1), np.ones(1), 1e-3) == pytest.approx(1.3, abs=1e-6)

    def test_directional_derivative_at_kink(self, p2):
        w = np.zeros(2)
        # V = w0^2 / 2 + |w1| near 0
        assert directional_derivative(p2, w, np.array([0.0, 1.0])) == pytest.approx(1.0, abs=1e-6)
        assert directional_derivative(p2, w, np.array([0.0, -1.0])) == pytest.approx(1.0, abs=1e-6)
        assert directional_derivative(p2, w, np.array([1.0, 0.0])) == pytest.approx(0.0, abs=1e-6)


def test_example1_alternative_parameter_map():
    p = example1(T0=1.0)
    assert central_difference(p, np.zeros(1), np.ones(1), 1e-4) == pytest.approx(0.9, abs=1e-6)
