import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import ocsens.sensitivity as sens_mod
from ocsens.convex import Atom, ConvexExpr
from ocsens.errors import ConeCheckFailed, DimCapExceeded, NotSmooth, RegularityError
from ocsens.instances import example1, random_polyhedral, random_smooth
from ocsens.model import Solution, stage_blocks
from ocsens.sensitivity import (
    OUTER_INTERVAL,
    OUTER_POLYTOPE,
    SMOOTH_EXACT,
    Membership,
    RegularityReport,
    SensitivityReport,
    candidate_points,
    check_regularity,
    is_member,
    membership_general,
    sensitivity_report,
    singular_subdiff_V,
    subdiff_V_outer,
    subdiff_V_smooth,
)
from ocsens.sets import Box, Singleton, contains_set, hausdorff_distance
from ocsens.solver import (
    OracleGrid,
    central_difference,
    fd_subgradient_samples,
    grid_oracle,
    solve,
    subgradient_inequality_check,
)


def _solved(p, w=None):
    w = p.default_w() if w is None else w
    r = solve(p, w)
    assert r.status == "OPTIMAL"
    return w, r


def _separable(p, rng):
    """Copy of ``p`` whose stage atoms each act on one of the x, u, w blocks."""
    costs = []
    for k, e in enumerate(p.stage_costs):
        atoms = []
        for a in e.atoms:
            lbl = ("x", "u", "w")[int(rng.integers(0, 3))]
            v = np.zeros_like(a.a)
            v[e.block_slice(lbl)] = a.a[e.block_slice(lbl)]
            atoms.append(Atom(v, a.b, a.weight))
        costs.append(ConvexExpr(e.Q, e.q, e.c, tuple(atoms), e.blocks))
    return dataclasses.replace(p, stage_costs=tuple(costs))


def _kinked_in_w(p, rng):
    """Add ``|c'(w_k - wbar_k)|`` to every stage cost so V has a kink at wbar.

    Returns the new problem and the kink normals as vectors in parameter space.
    """
    costs, normals = [], []
    w = p.split_w(p.default_w())
    for k, e in enumerate(p.stage_costs):
        v = np.zeros(e.dim)
        sl = e.block_slice("w")
        v[sl] = rng.normal(size=sl.stop - sl.start)
        nrm = np.zeros(p.nw)
        nrm[p.w_offsets[k]:p.w_offsets[k + 1]] = v[sl]
        normals.append(nrm)
        costs.append(ConvexExpr(e.Q, e.q, e.c, e.atoms + (Atom(v, v[sl] @ w[k], 0.5),),
                                e.blocks))
    return dataclasses.replace(p, stage_costs=tuple(costs)), np.array(normals)


def _transversal(rng, normals, count):
    """Random directions at least ~3 degrees away from every kink hyperplane.

    Nearly tangent directions put the difference stencil across the kink.
    """
    out = []
    while len(out) < count:
        d = rng.normal(size=normals.shape[1])
        cos = np.abs(normals @ d) / (np.linalg.norm(normals, axis=1) * np.linalg.norm(d))
        if np.all(cos > 0.05):
            out.append(d)
    return np.array(out)


def _oracle(p, w, radius=0.1):
    return grid_oracle(p, OracleGrid(w, radius, 5 if p.nw <= 2 else 3))


class TestRegularity:
    def test_examples(self, p1, p2):
        for p in (p1, p2):
            r = check_regularity(p.system)
            assert r.kernel_inclusion_holds and r.closed_range
            assert len(r.ker_T_star_basis) == 0 and len(r.ker_M_star_basis) == 0
        assert check_regularity(p1.system).surjectivity_shortcut == [True]

    def test_zero_parameter_map(self):
        r = check_regularity(example1(T0=0.0).system)
        assert not r.kernel_inclusion_holds
        assert r.failing_vector is not None
        assert r.surjectivity_shortcut == [False]

    def test_json_round_trip(self, p1):
        r = check_regularity(p1.system)
        back = RegularityReport.from_json(json.loads(json.dumps(r.to_json())))
        assert back.to_json() == r.to_json()

    @given(st.integers(0, 100_000))
    def test_surjectivity_implies_inclusion(self, seed):
        p = random_smooth(np.random.default_rng(seed))
        r = check_regularity(p.system)
        assert all(r.surjectivity_shortcut)
        assert r.kernel_inclusion_holds


class TestSmooth:
    def test_example1_chain(self, p1):
        w, r = _solved(p1)
        rep = subdiff_V_smooth(p1, w, r.solution)
        assert rep.mode == SMOOTH_EXACT
        assert rep.chain.xtilde[0][0] == pytest.approx(0.4, abs=1e-12)
        assert rep.chain.x0star[0] == pytest.approx(0.0, abs=1e-12)
        assert rep.chain.ustar[0][0] == pytest.approx(0.0, abs=1e-12)
        assert rep.chain.wstar[0][0] == pytest.approx(1.3, abs=1e-12)
        assert all(ok for _, ok in rep.cone_checks)

    def test_zero_costs(self):
        p = random_smooth(np.random.default_rng(1))
        zero = tuple(ConvexExpr.zero(e.dim, e.blocks) for e in p.stage_costs)
        p = dataclasses.replace(p, stage_costs=zero,
                                terminal_cost=ConvexExpr.zero(p.state_dims[-1]))
        w, r = _solved(p)
        rep = subdiff_V_smooth(p, w, r.solution)
        np.testing.assert_array_equal(rep.subdiff_V.point, np.zeros(p.nw))
        for v in rep.chain.xtilde:
            np.testing.assert_array_equal(v, 0.0)

    def test_unit_parameter_map(self):
        p = example1(T0=1.0)
        w, r = _solved(p)
        ws = subdiff_V_smooth(p, w, r.solution).subdiff_V.point[0]
        assert ws == pytest.approx(0.9, abs=1e-12)
        g = grid_oracle(p, OracleGrid([0.0], 1e-3, 3))
        assert (g.values[2] - g.values[0]) / 2e-3 == pytest.approx(0.9, abs=1e-6)

    def test_not_smooth(self, p2):
        w, r = _solved(p2)
        with pytest.raises(NotSmooth):
            subdiff_V_smooth(p2, w, r.solution)

    def test_regularity_failure(self):
        p = example1(T0=0.0)
        w, r = _solved(p)
        with pytest.raises(RegularityError) as exc:
            subdiff_V_smooth(p, w, r.solution)
        assert exc.value.kernel_vector is not None

    def test_cone_check_failure_on_non_optimal_point(self, p1):
        sol = Solution([np.array([0.0]), np.array([0.0])], [np.array([0.0])])
        with pytest.raises(ConeCheckFailed) as exc:
            subdiff_V_smooth(p1, np.zeros(1), sol)
        assert any(not ok for _, ok in exc.value.checks)

    @settings(max_examples=20)
    @given(st.integers(0, 100_000))
    def test_outer_modes_agree(self, seed):
        p = random_smooth(np.random.default_rng(seed))
        w, r = _solved(p)
        ws = subdiff_V_smooth(p, w, r.solution).subdiff_V.point
        for mode in (OUTER_INTERVAL, OUTER_POLYTOPE):
            S = subdiff_V_outer(p, w, r.solution, mode).subdiff_V
            assert isinstance(S, Singleton)
            np.testing.assert_allclose(S.point, ws, atol=1e-9)

    @settings(max_examples=20)
    @given(st.integers(0, 100_000), st.floats(0.1, 5.0))
    def test_parameter_map_scaling(self, seed, c):
        rng = np.random.default_rng(seed)
        p = random_smooth(rng)
        costs = []
        for e in p.stage_costs:
            sl = e.block_slice("w")
            Q, q = e.Q.copy(), e.q.copy()
            Q[sl, :] = 0.0
            Q[:, sl] = 0.0
            q[sl] = 0.0
            costs.append(ConvexExpr(Q, q, e.c, (), e.blocks))
        p = dataclasses.replace(p, stage_costs=tuple(costs), wbar=np.zeros(p.nw))
        pc = p.with_T([c * T for T in p.T])
        w, r = _solved(p)
        _, rc = _solved(pc)
        a = subdiff_V_smooth(p, w, r.solution).subdiff_V.point
        b = subdiff_V_smooth(pc, w, rc.solution).subdiff_V.point
        np.testing.assert_allclose(b, c * a, atol=1e-9 * (1 + np.abs(a).max()))


class TestOuter:
    def test_example2_interval(self, p2):
        w, r = _solved(p2)
        S = subdiff_V_outer(p2, w, r.solution, OUTER_INTERVAL).subdiff_V
        assert isinstance(S, Box)
        np.testing.assert_array_equal(S.lo, [-2, -2])
        np.testing.assert_array_equal(S.hi, [2, 2])

    def test_example2_polytope(self, p2):
        w, r = _solved(p2)
        rep = subdiff_V_outer(p2, w, r.solution, OUTER_POLYTOPE)
        assert rep.status == "OK"
        assert hausdorff_distance(rep.subdiff_V, Box([0, -1], [0, 1])) <= 1e-12

    def test_example2_joint_coupling_same(self, p2):
        w, r = _solved(p2)
        S = subdiff_V_outer(p2, w, r.solution, OUTER_POLYTOPE, coupling="joint").subdiff_V
        assert hausdorff_distance(S, Box([0, -1], [0, 1])) <= 1e-12

    @pytest.mark.parametrize("mode", [OUTER_INTERVAL, OUTER_POLYTOPE])
    def test_example1_either_mode(self, p1, mode):
        w, r = _solved(p1)
        S = subdiff_V_outer(p1, w, r.solution, mode).subdiff_V
        assert isinstance(S, Singleton)
        assert S.point[0] == pytest.approx(1.3, abs=1e-12)

    def test_cap_falls_back_to_interval(self, p2, monkeypatch):
        def boom(*args, **kwargs):
            raise DimCapExceeded("forced")

        monkeypatch.setattr(sens_mod, "project", boom)
        w, r = _solved(p2)
        rep = subdiff_V_outer(p2, w, r.solution, OUTER_POLYTOPE)
        assert rep.mode == OUTER_INTERVAL and rep.warnings
        np.testing.assert_array_equal(rep.subdiff_V.hi, [2, 2])

    def test_unknown_coupling(self, p2):
        w, r = _solved(p2)
        with pytest.raises(ValueError):
            subdiff_V_outer(p2, w, r.solution, OUTER_POLYTOPE, coupling="bogus")

    @settings(max_examples=15)
    @given(st.integers(0, 100_000))
    def test_containment_chain(self, seed):
        rng = np.random.default_rng(seed)
        p, normals = _kinked_in_w(random_polyhedral(rng), rng)
        w, r = _solved(p)
        box = subdiff_V_outer(p, w, r.solution, OUTER_INTERVAL).subdiff_V
        poly = subdiff_V_outer(p, w, r.solution, OUTER_POLYTOPE).subdiff_V
        joint = subdiff_V_outer(p, w, r.solution, OUTER_POLYTOPE, coupling="joint").subdiff_V
        assert contains_set(box, poly, tol=1e-7)
        assert contains_set(poly, joint, tol=1e-7)
        dirs = _transversal(rng, normals, 6)
        for g in fd_subgradient_samples(p, w, dirs):
            assert joint.contains(g, tol=1e-5)
            assert poly.contains(g, tol=1e-5)

    @settings(max_examples=15)
    @given(st.integers(0, 100_000))
    def test_joint_polytope_points_are_subgradients(self, seed):
        rng = np.random.default_rng(seed)
        p, _ = _kinked_in_w(random_polyhedral(rng), rng)
        w, r = _solved(p)
        S = subdiff_V_outer(p, w, r.solution, OUTER_POLYTOPE, coupling="joint").subdiff_V
        g = _oracle(p, w)
        for c in candidate_points(S):
            assert subgradient_inequality_check(p, w, r.value, c, g).passed
            assert is_member(p, w, r.solution, c) == Membership.MEMBER

    @settings(max_examples=15)
    @given(st.integers(0, 100_000))
    def test_separable_polytope_points_are_subgradients(self, seed):
        rng = np.random.default_rng(seed)
        p, _ = _kinked_in_w(_separable(random_polyhedral(rng), rng), rng)
        w, r = _solved(p)
        S = subdiff_V_outer(p, w, r.solution, OUTER_POLYTOPE).subdiff_V
        g = _oracle(p, w)
        for c in candidate_points(S):
            assert subgradient_inequality_check(p, w, r.value, c, g).passed


class TestSingular:
    def test_examples(self, p1, p2):
        for p in (p1, p2):
            w, r = _solved(p)
            S = singular_subdiff_V(p, w, r.solution)
            assert isinstance(S, Singleton) and np.all(S.point == 0) and S.dim == p.nw

    @settings(max_examples=20)
    @given(st.integers(0, 100_000))
    def test_random(self, seed):
        rng = np.random.default_rng(seed)
        p = random_polyhedral(rng) if seed % 2 else random_smooth(rng)
        w, r = _solved(p)
        S = singular_subdiff_V(p, w, r.solution)
        np.testing.assert_array_equal(S.point, np.zeros(p.nw))


class TestMembership:
    def test_example1(self, p1):
        w, r = _solved(p1)
        assert is_member(p1, w, r.solution, [1.3]) == Membership.MEMBER
        assert is_member(p1, w, r.solution, [0.0]) == Membership.NOT_MEMBER

    def test_example2(self, p2):
        w, r = _solved(p2)
        assert is_member(p2, w, r.solution, [0.0, 0.5]) == Membership.MEMBER
        assert is_member(p2, w, r.solution, [0.0, 1.0]) == Membership.MEMBER
        assert is_member(p2, w, r.solution, [0.1, 0.0]) == Membership.NOT_MEMBER
        assert is_member(p2, w, r.solution, [0.0, 1.01]) == Membership.NOT_MEMBER

    def test_product_is_larger_for_coupled_atom(self):
        # h0 = |x0 - w0| with x0 free and x1 = x0 + u0: V(w) = 0, dV = {0}
        h0 = ConvexExpr(np.zeros((3, 3)), np.zeros(3), 0.0, (Atom([1.0, 0.0, -1.0]),),
                        stage_blocks(1, 1, 1))
        from ocsens.model import ControlProblem
        from ocsens.sets import HPoly

        p = ControlProblem(1, (1, 1), (1,), (1,), ([[1.0]],), ([[1.0]],), ([[1.0]],), (h0,),
                           ConvexExpr.zero(1), HPoly.whole_space(1), (HPoly.whole_space(1),))
        w, r = _solved(p, np.zeros(1))
        sys = p.system
        args = (sys, p.cost, r.z, w, [0.5])
        assert membership_general(*args, subdiff="joint") == Membership.NOT_MEMBER
        assert membership_general(*args, subdiff="product") == Membership.MEMBER
        g = grid_oracle(p, OracleGrid(w, 0.1, 5))
        assert not subgradient_inequality_check(p, w, r.value, [0.5], g).passed

    @settings(max_examples=20)
    @given(st.integers(0, 100_000))
    def test_agrees_with_smooth_recursion(self, seed):
        rng = np.random.default_rng(seed)
        p = random_smooth(rng)
        w, r = _solved(p)
        ws = subdiff_V_smooth(p, w, r.solution).subdiff_V.point
        assert is_member(p, w, r.solution, ws) == Membership.MEMBER
        u = rng.normal(size=p.nw)
        u /= np.linalg.norm(u)
        far = ws + 1e-5 * (1 + np.linalg.norm(ws)) * u
        assert is_member(p, w, r.solution, far) == Membership.NOT_MEMBER


class TestReports:
    def test_auto_mode(self, p1, p2):
        assert sensitivity_report(p1).mode == SMOOTH_EXACT
        assert sensitivity_report(p2).mode == OUTER_POLYTOPE

    @pytest.mark.parametrize("mode", ["smooth", "interval", "polytope"])
    def test_json_round_trip(self, p1, mode):
        rep = sensitivity_report(p1, mode=mode)
        text = json.dumps(rep.to_json())
        back = SensitivityReport.from_json(json.loads(text))
        assert json.dumps(back.to_json()) == text

    def test_json_round_trip_nonsmooth(self, p2):
        for mode in ("interval", "polytope"):
            rep = sensitivity_report(p2, mode=mode)
            text = json.dumps(rep.to_json())
            assert json.dumps(SensitivityReport.from_json(json.loads(text)).to_json()) == text

    def test_unknown_mode(self, p1):
        with pytest.raises(ValueError):
            sensitivity_report(p1, mode="bogus")
