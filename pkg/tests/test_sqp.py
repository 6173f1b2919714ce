import numpy as np
import pytest

from conftest import make_matrix_problem, make_vector_problem
from momt import (
    MatrixProblem,
    SolverConfig,
    initialize,
    solve,
    sqp_step,
)
from momt import blocks as bk
from oracles import dense_newton_kkt

TIGHT = SolverConfig(tol_outer=1e-7, tol_inner=1e-9, max_outer=200)


class TestInitialize:
    def test_density_is_time_linear_interpolation(self):
        prob = make_matrix_problem(seed=1, space=(4,), nt=4, n=2)
        st = initialize(prob)
        for f in range(prob.grid.nt - 1):
            w = (f + 1) / prob.grid.nt
            expected = (1 - w) * prob.rho0 + w * prob.rho1
            assert np.allclose(st.rho[f], expected, atol=1e-15)
        assert bk.cholesky_ok(bk.unpack(st.rho))

    def test_equal_marginals_start_feasible(self):
        prob = make_matrix_problem(seed=2, space=(4,), nt=3, n=2)
        same = MatrixProblem(prob.basis, prob.grid, prob.gamma, prob.rho0, prob.rho0,
                             validate=False)
        st = initialize(same)
        gw, glam = same.residual_vecs(st)
        assert np.abs(glam).max() <= 1e-12
        assert np.abs(gw).max() <= 1e-12
        assert same.cost(st.ps, st.rho, st.u) == 0.0

    def test_nt_two_has_single_interior_face(self):
        prob = make_matrix_problem(seed=3, space=(4,), nt=2, n=2)
        st = initialize(prob)
        assert st.rho.shape[0] == 1

    def test_rejects_single_time_cell(self):
        prob = make_matrix_problem(seed=4, space=(4,), nt=1, n=2)
        with pytest.raises(ValueError):
            initialize(prob)


class TestSqpStep:
    def test_merit_strictly_decreases(self, rng):
        prob = make_matrix_problem(seed=5, space=(4,), nt=3, n=2)
        st = initialize(prob)
        cfg = SolverConfig()
        merits = []
        for _ in range(4):
            st, report, _ = sqp_step(prob, st, cfg)
            merits.append(report.merit)
        assert all(b < a for a, b in zip(merits, merits[1:]))
        assert st.merit_history == merits

    def test_positivity_maintained(self):
        prob = make_matrix_problem(seed=6, space=(5,), nt=4, n=3)
        st = initialize(prob)
        cfg = SolverConfig()
        for _ in range(5):
            st, _, _ = sqp_step(prob, st, cfg)
            assert prob.positivity_ok(st.rho)


class TestSolve:
    def test_zero_transport_immediate(self):
        prob = make_matrix_problem(seed=7, space=(4,), nt=3, n=2)
        same = MatrixProblem(prob.basis, prob.grid, prob.gamma, prob.rho0, prob.rho0,
                             validate=False)
        res = solve(same)
        assert res.converged
        assert res.iterations <= 2
        assert res.distance2 <= 1e-10

    @pytest.mark.parametrize("maker,seed", [(make_matrix_problem, 8),
                                            (make_vector_problem, 9)])
    def test_small_instances_converge(self, maker, seed):
        prob = maker(seed=seed, space=(4, 3), nt=3)
        res = solve(prob, SolverConfig(tol_outer=1e-5))
        assert res.converged
        assert res.distance2 > 0.0
        assert res.final_residual <= 1e-5

    def test_feasibility_at_solution(self):
        prob = make_matrix_problem(seed=10, space=(5,), nt=4, n=2)
        cfg = SolverConfig(tol_outer=1e-5)
        res = solve(prob, cfg)
        st = res.state
        con = prob.lam_to_vec(prob.constraint_residual(st.ps, st.rho, st.u))
        assert np.linalg.norm(con) <= cfg.tol_outer * prob.b_norm

    def test_mass_conserved_per_time_slice(self):
        prob = make_matrix_problem(seed=11, space=(5,), nt=5, n=2)
        cfg = SolverConfig(tol_outer=1e-5)
        res = solve(prob, cfg)
        full = bk.unpack(res.state.rho)
        masses = np.trace(full, axis1=-2, axis2=-1).sum(axis=1) * prob.grid.h_vol
        assert np.abs(masses - 1.0).max() <= cfg.tol_outer

    def test_deterministic_traces(self):
        prob = make_matrix_problem(seed=12, space=(4,), nt=3, n=2)
        runs = [solve(prob, SolverConfig(tol_outer=1e-5)) for _ in range(2)]
        t0, t1 = (r.trace for r in runs)
        assert len(t0) == len(t1)
        for a, b in zip(t0, t1):
            assert a == b
        assert runs[0].distance2 == runs[1].distance2

    def test_gamma_override(self):
        prob = make_matrix_problem(seed=13, space=(4,), nt=3, n=2, gamma=0.05)
        res_a = solve(prob, SolverConfig(tol_outer=1e-4, gamma=0.5))
        res_b = solve(prob.with_gamma(0.5), SolverConfig(tol_outer=1e-4))
        assert res_a.distance2 == pytest.approx(res_b.distance2, rel=1e-12)

    def test_unconverged_is_flagged_not_raised(self):
        prob = make_matrix_problem(seed=14, space=(4,), nt=3, n=2)
        res = solve(prob, SolverConfig(tol_outer=1e-6, max_outer=1))
        assert not res.converged
        assert res.iterations == 1

    def test_consecutive_unconverged_inners_relax_tolerance(self, caplog):
        import logging

        prob = make_matrix_problem(seed=15, space=(5,), nt=4, n=2)
        cfg = SolverConfig(tol_outer=1e-4, tol_inner=1e-12, max_inner=3,
                           max_outer=12)
        with caplog.at_level(logging.WARNING, logger="momt.sqp"):
            solve(prob, cfg)
        messages = [r.message for r in caplog.records]
        assert any("relaxing inner tolerance" in m for m in messages)

    def test_line_search_failure_carries_diagnostics(self):
        from momt.errors import LineSearchFailed

        # a zero-iteration inner solve produces a null step at the first
        # iteration, so no backtrack can achieve sufficient decrease
        prob = make_matrix_problem(seed=16, space=(4,), nt=3, n=2)
        st = initialize(prob)
        cfg = SolverConfig(max_inner=0)
        with pytest.raises(LineSearchFailed, match="backtracks"):
            sqp_step(prob, st, cfg)


class TestDenseNewtonOracle:
    def test_scalar_instance_matches(self):
        prob = make_matrix_problem(seed=11, space=(4,), nt=3, n=1, gamma=0.05)
        _, _, cost_opt = dense_newton_kkt(prob)
        res = solve(prob, TIGHT)
        assert res.converged
        assert res.distance2 == pytest.approx(cost_opt, rel=1e-4)

    def test_matrix_instance_matches(self):
        prob = make_matrix_problem(seed=13, space=(4,), nt=3, n=2, gamma=0.05)
        _, _, cost_opt = dense_newton_kkt(prob)
        res = solve(prob, TIGHT)
        assert res.converged
        assert res.distance2 == pytest.approx(cost_opt, rel=1e-4)
