import csv
import io
import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hjbioc import bench
from hjbioc.iocp import (CertificateError, IocpSolution, LagrangianClass, assemble, bundle_solution,
                         compare_lagrangians, csv_row, dumps_bundle, hierarchy, is_monotone,
                         required_half_degree, resolve_weighting, result_bundle, sample_weights,
                         scale_to, set_grid, solve_iocp, verify_certificate)
from hjbioc.polynomial import Polynomial, VariableSpace
from hjbioc.semialgebraic import ball, sphere


@pytest.fixture(scope="module")
def small_exitnorm():
    return bench.gen_exitnorm(60, 1, s=10)


@pytest.fixture(scope="module")
def exact_solution(small_exitnorm):
    db = small_exitnorm
    return solve_iocp(db.system, db, LagrangianClass(1, 1), 2)


def truth(db, scale=0.25):
    """The generating pair (L, phi) scaled to trace one, as a solution object."""
    space = db.system.space
    x1, x2 = Polynomial.variables(space, ["x1", "x2"])
    L = bench.target_lagrangian("exitnorm", space) * scale
    phi = (1 - x1 * x1 - x2 * x2) * scale
    eye = np.eye(2) * scale
    return IocpSolution(L, phi, 0.0, eye, eye, None, 1, 2, LagrangianClass(1, 1), "optimal",
                        weighting="time")


class TestLagrangianClass:
    def test_parse(self):
        c = LagrangianClass.parse("2,1")
        assert (c.a, c.b, c.C) == (2, 1, 1.0) and str(c) == "L_{2,1}"

    @pytest.mark.parametrize("args", [(-1, 1), (1, 1, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            LagrangianClass(*args)

    def test_constants_excluded_for_fixed_time(self):
        assert LagrangianClass(1, 1).min_degree(bench.lq_system()) == 1
        assert LagrangianClass(1, 1).min_degree(bench.exitnorm_system()) == 0
        assert LagrangianClass(1, 1, constant=True).min_degree(bench.lq_system()) == 0


@pytest.mark.parametrize("system,cls,d,expected", [
    (bench.exitnorm_system(), (1, 1), 2, 1),
    (bench.exitnorm_system(), (2, 2), 4, 2),
    (bench.exittime_system(), (0, 1), 12, 6),
    (bench.lq_system(), (1, 1), 10, 5),
    (bench.brockett_system(), (0, 2), 4, 3),   # f has degree 2: deg H = 4 - 1 + 2 = 5
])
def test_required_half_degree(system, cls, d, expected):
    assert required_half_degree(system, LagrangianClass(*cls), d) == expected


class TestAssembly:
    def test_structure(self, small_exitnorm):
        db = small_exitnorm
        asm = assemble(db.system, db, LagrangianClass(1, 1), 2)
        p = asm.problem
        assert asm.gram_x.size == 3 and asm.gram_u.size == 3     # [1, x1, x2], [1, u1, u2]
        assert p.eq_names[asm.trace_row] == "trace" and p.eq_rhs[asm.trace_row] == 1.0
        assert p.ineq_names[asm.integral_row] == "integral"
        assert len(asm.terminal_rows) == len(db)
        assert p.objective == {("f", asm.eps_id): 1.0}

    def test_point_database_bounds_phi_everywhere(self):
        db = bench.gen_exittime(30, 0, s=0)
        asm = assemble(db.system, db, LagrangianClass(0, 1), 2)
        assert asm.weighting == "samples"
        assert len(asm.terminal_rows) == 30

    def test_row_cap(self, small_exitnorm):
        db = small_exitnorm
        with pytest.raises(ValueError, match="max_terminal_rows"):
            assemble(db.system, db, LagrangianClass(1, 1), 2, terminal_at_all_samples=True,
                     max_terminal_rows=10)

    def test_degree_too_low(self, small_exitnorm):
        db = small_exitnorm
        with pytest.raises(CertificateError, match="degree too low"):
            assemble(db.system, db, LagrangianClass(2, 2), 2, half_degree=1)

    def test_empty_class(self):
        db = bench.gen_lq(3, 0, s=4)
        with pytest.raises(ValueError, match="no monomials"):
            assemble(db.system, db, LagrangianClass(0, 0), 2)

    def test_weighting(self, small_exitnorm):
        assert resolve_weighting(small_exitnorm, "auto") == "time"
        Z, w = sample_weights(small_exitnorm, "samples")
        assert np.all(w == 1.0) and len(Z) == small_exitnorm.n_samples
        with pytest.raises(ValueError):
            sample_weights(small_exitnorm, "bogus")


class TestSolve:
    def test_exact_recovery(self, small_exitnorm, exact_solution):
        sol = exact_solution
        assert sol.optimal and abs(sol.epsilon) <= 1e-6
        target = bench.target_lagrangian("exitnorm", small_exitnorm.system.space)
        assert compare_lagrangians(sol.L, target).similarity >= 0.999
        assert np.trace(sol.gram_x) + np.trace(sol.gram_u) == pytest.approx(1.0, abs=1e-12)
        # phi recovers the value function 1 - |x|^2 up to the same scale
        x = np.array([0.3, -0.2, 0.0, 0.0])
        k = sol.phi.evaluate(np.zeros(4))
        assert sol.phi.evaluate(x) == pytest.approx(k * (1 - 0.13), abs=1e-5)

    def test_reported_eps_is_certified(self, small_exitnorm, exact_solution):
        assert exact_solution.epsilon >= float(np.sum(exact_solution.trajectory_sums)) - 1e-15
        assert verify_certificate(small_exitnorm.system, small_exitnorm, exact_solution).passed

    def test_underpowered_class_has_positive_gap(self, small_exitnorm):
        db = small_exitnorm
        sol = solve_iocp(db.system, db, LagrangianClass(0, 1), 2)
        assert sol.optimal and sol.epsilon > 1e-2

    def test_lq_constant_free_class(self):
        db = bench.gen_lq(40, 0, s=10)
        sol = solve_iocp(db.system, db, LagrangianClass(1, 0), 4)
        assert sol.optimal and sol.epsilon > 0.1
        assert sol.L.coefficient((0, 0, 0, 0)) == 0.0

    def test_hierarchy_records_failures(self, small_exitnorm):
        db = small_exitnorm
        levels = hierarchy(db.system, db, LagrangianClass(0, 1), [2, 4], half_degree=1)
        assert levels[0].optimal and levels[1].status == "error"
        assert "degree too low" in levels[1].notes[0]


class TestVerification:
    def test_truth_passes(self, small_exitnorm):
        rep = verify_certificate(small_exitnorm.system, small_exitnorm, truth(small_exitnorm))
        assert rep.passed, rep.violations
        assert rep.grid_points >= 10_000
        assert rep.max_phi_XT == pytest.approx(0.0, abs=1e-9)

    def test_negative_lagrangian_fails(self, small_exitnorm):
        bad = truth(small_exitnorm)
        bad.L = bad.L - 0.5
        rep = verify_certificate(small_exitnorm.system, small_exitnorm, bad)
        assert not rep.checks["positivity"] and rep.checks["integral"]
        assert any("H =" in v for v in rep.violations)

    def test_data_integral_above_eps_fails(self, small_exitnorm):
        bad = truth(small_exitnorm)
        bad.L = bad.L + 0.5
        rep = verify_certificate(small_exitnorm.system, small_exitnorm, bad)
        assert rep.checks["positivity"] and not rep.checks["integral"]
        # each trajectory contributes 0.5 * duration
        expected = 0.5 * sum(tr.duration for tr in small_exitnorm.trajectories)
        assert rep.integral == pytest.approx(expected, rel=1e-9)

    def test_phi_above_zero_on_boundary_fails(self, small_exitnorm):
        bad = truth(small_exitnorm)
        bad.phi = bad.phi + 0.1
        rep = verify_certificate(small_exitnorm.system, small_exitnorm, bad)
        assert not rep.checks["boundary_upper"]

    def test_trace_violation(self, small_exitnorm):
        bad = truth(small_exitnorm, scale=0.3)
        rep = verify_certificate(small_exitnorm.system, small_exitnorm, bad)
        assert not rep.checks["normalization"] and rep.trace == pytest.approx(1.2)

    def test_sphere_grid_on_sphere(self):
        space = VariableSpace.standard(2, 1)
        pts = set_grid(sphere(space, ["x1", "x2"]), 500)
        assert len(pts) >= 500
        assert np.allclose(np.linalg.norm(pts, axis=1), 1.0, atol=1e-9)

    def test_ball_grid_count(self):
        space = VariableSpace.standard(2, 1)
        pts = set_grid(ball(space, ["x1", "x2", "u1"]), 2000)
        assert len(pts) >= 2000 and np.all(np.linalg.norm(pts, axis=1) <= 1 + 1e-12)


class TestComparison:
    SPACE = VariableSpace.standard(1, 1)

    def poly(self, c):
        return Polynomial(self.SPACE, {(2, 0): c[0], (0, 2): c[1], (1, 1): c[2], (0, 0): c[3]})

    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4).filter(lambda c: max(map(abs, c)) > 1e-2),
           st.floats(0.01, 100))
    def test_scale_invariant_and_self_similar(self, c, k):
        p = self.poly(c)
        assert compare_lagrangians(p, p * k).similarity == pytest.approx(1.0, abs=1e-12)
        assert compare_lagrangians(p, p * -k).similarity == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(st.floats(-5, 5), min_size=4, max_size=4).filter(lambda c: max(map(abs, c)) > 1e-2),
           st.lists(st.floats(-5, 5), min_size=4, max_size=4).filter(lambda c: max(map(abs, c)) > 1e-2))
    def test_symmetric_and_bounded(self, a, b):
        s1 = compare_lagrangians(self.poly(a), self.poly(b)).similarity
        s2 = compare_lagrangians(self.poly(b), self.poly(a)).similarity
        assert s1 == pytest.approx(s2, abs=1e-12) and -1 - 1e-12 <= s1 <= 1 + 1e-12

    def test_frozen_value(self):
        # unit vectors (1,0,0,0) and (1,1,0,0)/sqrt 2
        s = compare_lagrangians(self.poly([1, 0, 0, 0]), self.poly([1, 1, 0, 0])).similarity
        assert s == pytest.approx(1 / np.sqrt(2))

    def test_zero_rejected(self):
        with pytest.raises(ValueError):
            compare_lagrangians(Polynomial.zero(self.SPACE), self.poly([1, 0, 0, 0]))

    def test_scale_to(self):
        p = self.poly([1, 2, 0, 0])
        assert scale_to(p, p * 3.5).allclose(p * 3.5)


class TestBundles:
    def test_round_trip_and_verify(self, small_exitnorm, exact_solution):
        db = small_exitnorm
        b = json.loads(dumps_bundle(result_bundle(exact_solution, db.system, "exitnorm")))
        system, sol = bundle_solution(b)
        assert sol.L.allclose(exact_solution.L, atol=0) and sol.phi.allclose(exact_solution.phi, atol=0)
        assert sol.epsilon == exact_solution.epsilon and sol.cls == exact_solution.cls
        assert verify_certificate(system, db, sol).passed

    def test_csv_row(self, small_exitnorm, exact_solution):
        b = result_bundle(exact_solution, small_exitnorm.system, "exitnorm")
        (row,) = csv.reader(io.StringIO(csv_row(b, 0.5)))
        assert row[:3] == ["exitnorm", "1,1", "2"] and row[4] == "optimal"
        assert float(row[3]) == exact_solution.epsilon and float(row[5]) == 0.5


def test_is_monotone():
    mk = lambda e, ok=True: SimpleNamespace(epsilon=e, optimal=ok)
    assert is_monotone([mk(1.0), mk(0.5), mk(0.5 + 1e-9)])
    assert not is_monotone([mk(1.0), mk(1.1)])
    assert is_monotone([mk(1.0), mk(9.0, ok=False), mk(0.2)])
