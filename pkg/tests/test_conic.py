from __future__ import annotations

import numpy as np
import pytest

from hullsense.conic import (
    Affine,
    ConeSpec,
    ConicProgram,
    ConicSolver,
    NonNeg,
    ProgramBuilder,
    SecondOrder,
    SolverSettings,
    SolveStatus,
    WarmStart,
    Zero,
    cone_distance,
    project_cone,
    solve,
)
from hullsense.errors import ConeError

from oracles import cone_violation


def test_project_nonneg():
    cones = ConeSpec((NonNeg(2),))
    assert np.allclose(project_cone(np.array([-1.0, 2.0]), cones), [0.0, 2.0])


def test_project_soc_cases():
    inside = ConeSpec((SecondOrder(3),))
    assert np.allclose(project_cone(np.array([1.0, 0.5, 0.0]), inside), [1.0, 0.5, 0.0])
    polar = ConeSpec((SecondOrder(2),))
    assert np.allclose(project_cone(np.array([-2.0, 1.0]), polar), [0.0, 0.0])
    outside = project_cone(np.array([0.0, 2.0]), polar)
    assert np.allclose(outside, [1.0, 1.0])


def test_project_mixed_blocks():
    cones = ConeSpec((Zero(1), NonNeg(1), SecondOrder(3), SecondOrder(3)))
    v = np.array([5.0, -3.0, 1.0, 0.5, 0.0, 0.0, 3.0, 4.0])
    out = project_cone(v, cones)
    assert out[0] == 0.0 and out[1] == 0.0
    assert np.allclose(out[2:5], [1.0, 0.5, 0.0])
    assert np.allclose(out[5:], [2.5, 1.5, 2.0])
    assert cone_distance(out, cones) == pytest.approx(0.0, abs=1e-12)


def test_project_is_idempotent():
    rng = np.random.default_rng(5)
    cones = ConeSpec((Zero(2), NonNeg(3), SecondOrder(4), SecondOrder(2)))
    for _ in range(100):
        v = rng.normal(size=cones.size)
        once = project_cone(v, cones)
        assert np.allclose(project_cone(once, cones), once)


def test_cone_spec_validation():
    with pytest.raises(ConeError):
        ConeSpec((NonNeg(0),))
    with pytest.raises(ConeError):
        project_cone(np.zeros(3), ConeSpec((NonNeg(2),)))


def test_program_dimension_mismatch():
    with pytest.raises(ConeError):
        ConicProgram(c=np.zeros(2), A=np.zeros((1, 3)), b=np.zeros(1), cones=ConeSpec((NonNeg(1),)))
    with pytest.raises(ConeError):
        ConicProgram(c=np.zeros(1), A=np.zeros((1, 1)), b=np.array([np.nan]), cones=ConeSpec((NonNeg(1),)))


def test_lp_corner():
    # min y  s.t.  y - 1 >= 0
    prog = ConicProgram(c=np.array([1.0]), A=np.array([[-1.0]]), b=np.array([-1.0]), cones=ConeSpec((NonNeg(1),)))
    sol = solve(prog)
    assert sol.status is SolveStatus.OPTIMAL
    assert sol.y[0] == pytest.approx(1.0, abs=1e-5)
    assert cone_violation(prog, sol.y) <= 1e-6


def test_ball_projection_epigraph():
    # min e  s.t.  ||x - c|| <= e, ||x|| <= 1, c = (2, 0)
    b = ProgramBuilder()
    x = b.add_variable("x", 2)
    e = b.add_variable("e", 1)
    b.add_cone("soc", Affine.vstack([e, x - np.array([2.0, 0.0])]))
    b.add_cone("soc", Affine.vstack([Affine.constant([1.0]), x]))
    prog = b.build({"e": [1.0]})

    sol = ConicSolver(SolverSettings(eps_abs=1e-8, eps_rel=1e-8)).solve(prog)
    assert sol.status is SolveStatus.OPTIMAL
    assert np.allclose(prog.value(sol.y, "x"), [1.0, 0.0], atol=1e-4)
    assert sol.objective == pytest.approx(1.0, abs=1e-4)
    assert cone_violation(prog, sol.y) <= 1e-6


def test_equality_rows():
    # min x0 + x1  s.t.  x0 + 2 x1 = 4, x >= 0
    b = ProgramBuilder()
    x = b.add_variable("x", 2)
    b.add_cone("zero", np.array([[1.0, 2.0]]) @ x - 4.0)
    b.add_cone("nonneg", x)
    prog = b.build({"x": [1.0, 1.0]})
    sol = solve(prog, SolverSettings(eps_abs=1e-8, eps_rel=1e-8))
    assert sol.status is SolveStatus.OPTIMAL
    assert np.allclose(sol.y, [0.0, 2.0], atol=1e-4)
    assert prog.problem_size == (2, 1, 2)


def test_builder_rejects_unknown_cone_and_variable():
    b = ProgramBuilder()
    x = b.add_variable("x", 1)
    with pytest.raises(ConeError):
        b.add_cone("psd", x)
    with pytest.raises(ConeError):
        b.add_variable("x", 2)
    other = ProgramBuilder().add_variable("z", 1)
    with pytest.raises(ConeError):
        b.add_cone("nonneg", other)


def test_infeasible_program_is_not_optimal():
    # x >= 1 and x <= -1
    b = ProgramBuilder()
    x = b.add_variable("x", 1)
    b.add_cone("nonneg", x - 1.0)
    b.add_cone("nonneg", -1.0 - x)
    prog = b.build({"x": [0.0]})
    sol = solve(prog, SolverSettings(max_iter=3000))
    assert sol.status is not SolveStatus.OPTIMAL


def test_max_iters_returns_best_iterate():
    prog = ConicProgram(c=np.array([1.0]), A=np.array([[-1.0]]), b=np.array([-1.0]), cones=ConeSpec((NonNeg(1),)))
    sol = solve(prog, SolverSettings(max_iter=3, check_every=1))
    assert sol.status is SolveStatus.MAX_ITERS
    assert sol.iterations == 3
    assert np.all(np.isfinite(sol.y))


def test_factorization_is_cached_per_solver():
    prog = ConicProgram(c=np.array([1.0]), A=np.array([[-1.0]]), b=np.array([-1.0]), cones=ConeSpec((NonNeg(1),)))
    solver = ConicSolver()
    solver.solve(prog)
    cached = len(solver._factors)
    assert cached >= 1
    solver.solve(prog)
    assert len(solver._factors) == cached


def test_settings_from_env(monkeypatch):
    monkeypatch.setenv("HULLSENSE_SOLVER_MAX_ITER", "123")
    monkeypatch.setenv("HULLSENSE_SOLVER_RHO", "0.5")
    st = SolverSettings.from_env(eps_abs=1e-4)
    assert st.max_iter == 123 and st.rho == 0.5 and st.eps_abs == 1e-4


def test_adapted_rho_rebalances_residuals():
    solver = ConicSolver()
    assert solver._adapted_rho(1.0, 100.0, 1.0, 1.0, 1.0) == pytest.approx(10.0)
    assert solver._adapted_rho(1.0, 1.0, 100.0, 1.0, 1.0) == pytest.approx(0.1)
    # small imbalance keeps the current factorization
    assert solver._adapted_rho(1.0, 4.0, 1.0, 1.0, 1.0) is None
    assert solver._adapted_rho(1.0, 1e30, 1.0, 1.0, 1.0) == pytest.approx(1e6)
    assert solver._adapted_rho(1.0, 0.0, 1.0, 1.0, 1.0) is None


def ball_projection() -> ConicProgram:
    b = ProgramBuilder()
    x = b.add_variable("x", 2)
    e = b.add_variable("e", 1)
    b.add_cone("soc", Affine.vstack([e, x - np.array([2.0, 0.0])]))
    b.add_cone("soc", Affine.vstack([Affine.constant([1.0]), x]))
    return b.build({"e": [1.0]})


def test_ill_scaled_program_converges():
    # min e  s.t.  ||x - c|| <= e, ||x|| <= 1e-4 with c = (2e3, 0)
    b = ProgramBuilder()
    x = b.add_variable("x", 2)
    e = b.add_variable("e", 1)
    b.add_cone("soc", Affine.vstack([e, x - np.array([2e3, 0.0])]))
    b.add_cone("soc", Affine.vstack([Affine.constant([1e-4]), x]))
    prog = b.build({"e": [1.0]})
    settings = SolverSettings()
    sol = ConicSolver(settings).solve(prog)
    assert sol.status is SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(2e3 - 1e-4, abs=1e-3)
    assert settings.rho_min <= sol.rho <= settings.rho_max


def test_fixed_rho_is_reported_back():
    sol = ConicSolver(SolverSettings(adaptive_rho=False, rho=0.3)).solve(ball_projection())
    assert sol.status is SolveStatus.OPTIMAL
    assert sol.rho == 0.3


def test_warm_start_resumes_from_solution():
    prog = ball_projection()
    solver = ConicSolver(SolverSettings(eps_abs=1e-8, eps_rel=1e-8))
    cold = solver.solve(prog)
    warm = solver.solve(prog, warm=cold.warm_start())
    assert warm.status is SolveStatus.OPTIMAL
    assert warm.iterations <= cold.iterations
    assert np.allclose(warm.y, cold.y, atol=1e-6)


def test_mismatched_warm_start_is_ignored():
    prog = ball_projection()
    solver = ConicSolver(SolverSettings(eps_abs=1e-8, eps_rel=1e-8))
    cold = solver.solve(prog)
    stale = WarmStart(y=np.ones(5), dual=np.ones(2), rho=1e3)
    again = solver.solve(prog, warm=stale)
    assert again.iterations == cold.iterations
    assert np.array_equal(again.y, cold.y)
