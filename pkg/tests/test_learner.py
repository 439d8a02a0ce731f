import numpy as np
import pytest

from ctqlearn.basis import (GainMatrix, G_to_theta, QApprox, eval_basis, example2_basis,
                            quadratic_basis)
from ctqlearn.learner import (LearnerConfig, bellman_residual, evaluate_policy,
                              orthogonality_residual, piql_regression_matrices, piql_update,
                              run_piql, run_viql, trace_csv, viql_regression_matrices,
                              viql_update)
from ctqlearn.lqr_oracle import optimal_q_matrix, sampled_data_value_matrix, solve_care
from ctqlearn.sampling import SampleSet, collect_samples

from conftest import F16_BOX, PAPER_DT, exact_linear_samples, stable_policy_start


class TestRegressionMatrices:
    def test_shapes(self, ex2_data):
        b = example2_basis()
        W, Z, eta = piql_regression_matrices(ex2_data, b, GainMatrix.zero(2, 1))
        assert W.shape == Z.shape == (100, 18) and eta.shape == (100,)
        W, Z, rhs = viql_regression_matrices(ex2_data, b, np.full(18, 0.01))
        assert W.shape == Z.shape == (100, 18) and rhs.shape == (100,)

    def test_galerkin_weights_are_basis_rows(self, f16_data):
        b = quadratic_basis(3, 1)
        W, _, eta = piql_regression_matrices(f16_data, b, GainMatrix.zero(3, 1))
        np.testing.assert_array_equal(W, eval_basis(b, f16_data.X, f16_data.U))
        np.testing.assert_array_equal(eta, f16_data.pi)

    def test_fixed_point_sample_has_zero_row(self):
        x, mu = np.array([[0.3, -0.2]]), np.array([[0.5]])
        s = SampleSet(x, mu, x, [0.1], 0.1, ([-1, -1], [1, 1]), ([-1], [1]))
        policy = lambda X: np.full((len(X), 1), 0.5)  # noqa: E731
        _, Z, _ = piql_regression_matrices(s, example2_basis(), policy)
        np.testing.assert_array_equal(Z, 0)

    def test_zero_theta_has_no_carry(self, ex2_data):
        _, Z, rhs = viql_regression_matrices(ex2_data, example2_basis(), np.zeros(18))
        np.testing.assert_array_equal(rhs, ex2_data.pi)
        np.testing.assert_array_equal(Z, eval_basis(example2_basis(), ex2_data.X, ex2_data.U))


class TestUpdates:
    def test_identity_system(self):
        e = np.arange(1.0, 6.0)
        np.testing.assert_allclose(piql_update(np.eye(5), np.eye(5), e), e, rtol=1e-15)
        np.testing.assert_allclose(viql_update(np.eye(5), np.eye(5), e), e, rtol=1e-15)

    def test_singular_system(self):
        from ctqlearn.errors import SingularSystemError
        W = np.ones((4, 2))
        with pytest.raises(SingularSystemError, match="more samples"):
            piql_update(W, W, np.ones(4))

    def test_first_viql_step_is_least_squares_fit_of_cost(self, ex2_data):
        b = example2_basis()
        W, Z, rhs = viql_regression_matrices(ex2_data, b, np.zeros(18))
        theta = viql_update(W, Z, rhs)
        lstsq = np.linalg.lstsq(W, ex2_data.pi, rcond=None)[0]
        np.testing.assert_allclose(theta, lstsq, rtol=1e-6, atol=1e-9)

    def test_orthogonality_after_every_update(self, f16_piql, ex2_piql, f16_viql, ex2_viql):
        for trace in (f16_piql, ex2_piql, f16_viql, ex2_viql):
            orth = [r.orthogonality for r in trace.records if not np.isnan(r.orthogonality)]
            assert orth and max(orth) <= 1e-8

    def test_exact_basis_has_no_residual(self, f16_data):
        """Policy evaluation of a linear gain with the quadratic basis is exact per sample."""
        b = quadratic_basis(3, 1)
        policy = GainMatrix.linear([[0.1, 0.1, -0.3]])
        theta = evaluate_policy(f16_data, b, policy)
        _, Z, eta = piql_regression_matrices(f16_data, b, policy)
        assert np.max(np.abs(Z @ theta - eta) / eta) <= 1e-8


class TestBellmanResidual:
    def test_zero_theta_gives_rms_of_cost(self, ex2_data):
        rms = bellman_residual(ex2_data, example2_basis(), np.zeros(18), GainMatrix.zero(2, 1))
        assert rms == pytest.approx(np.sqrt(np.mean(ex2_data.pi ** 2)), rel=1e-14)

    def test_f16_exact(self, f16, f16_cost, f16_piql):
        held = collect_samples(f16, f16_cost, *F16_BOX, M=50, delta_t=PAPER_DT, seed=77)
        rms = bellman_residual(held, f16_piql.basis, f16_piql.theta, f16_piql.records[-2].gain)
        assert rms <= 1e-6 * np.sqrt(np.mean(held.pi ** 2))

    def test_example2_truncated_but_small(self, ex2, ex2_cost, ex2_piql):
        from conftest import EX2_BOX
        held = collect_samples(ex2, ex2_cost, *EX2_BOX, M=200, delta_t=PAPER_DT, seed=77)
        rms = bellman_residual(held, ex2_piql.basis, ex2_piql.theta, ex2_piql.records[-2].gain)
        ref = np.sqrt(np.mean(held.pi ** 2))
        assert 1e-8 * ref < rms < 0.05 * ref


class TestRunPiql:
    def test_f16(self, f16, f16_piql):
        assert f16_piql.converged and f16_piql.iterations <= 10
        assert f16_piql.records[-1].theta_delta <= 1e-5
        K = f16_piql.gain.K
        np.testing.assert_allclose(np.abs(K[0]), [0.1352, 0.1501, 0.4329], atol=2e-2)
        np.testing.assert_allclose(K[0], [0.1343, 0.1488, -0.4256], atol=2e-3)

    def test_f16_fixed_point_is_sampled_data_solution(self, f16, f16_piql):
        P, _ = sampled_data_value_matrix(f16.A, f16.B, np.eye(3), np.eye(1), PAPER_DT)
        G = optimal_q_matrix(f16.A, f16.B, np.eye(3), np.eye(1), P, PAPER_DT).G
        np.testing.assert_allclose(f16_piql.theta, G_to_theta(G, 1), atol=1e-6)

    def test_seed_robustness(self, f16, f16_cost, f16_piql):
        other = collect_samples(f16, f16_cost, *F16_BOX, M=100, delta_t=PAPER_DT, seed=2)
        trace = run_piql(other, quadratic_basis(3, 1))
        assert np.max(np.abs(trace.theta - f16_piql.theta)) <= 1e-3

    def test_example2(self, ex2_piql):
        assert ex2_piql.converged and ex2_piql.iterations <= 15
        np.testing.assert_allclose(ex2_piql.gain.K[0], [0, 0, 0, -1, 0], atol=5e-2)

    def test_scalar_oracle(self):
        s = exact_linear_samples(-1.0, 1.0, 1.0, 1.0, M=40, delta_t=0.1, seed=5)
        trace = run_piql(s, quadratic_basis(1, 1))
        P, _ = sampled_data_value_matrix(-1.0, 1.0, 1.0, 1.0, 0.1)
        G = optimal_q_matrix(-1.0, 1.0, 1.0, 1.0, P, 0.1).G
        assert trace.converged
        np.testing.assert_allclose(trace.theta, G_to_theta(G, 1), atol=1e-9)

    def test_error_recorded_with_iteration(self, f16_data):
        trace = run_piql(f16_data.subset(range(5)), quadratic_basis(3, 1))
        assert trace.status == "error"
        assert trace.message.startswith("iteration 0:")
        assert not trace.records

    def test_max_iterations(self, f16_data):
        trace = run_piql(f16_data, quadratic_basis(3, 1), LearnerConfig(max_iterations=1))
        assert trace.status == "max_iterations"
        assert trace.iterations == 1

    def test_piql_monotone_on_linear_example(self, f16_piql):
        from ctqlearn.learner import monotonicity_gaps
        from conftest import domain_points
        X, U = domain_points(3, 1)
        gaps = monotonicity_gaps(f16_piql, X, U)
        assert np.all(gaps <= 1e-6)


class TestRunViql:
    def test_f16(self, f16_viql, f16_piql):
        assert f16_viql.converged
        assert 200 <= f16_viql.iterations <= 3000
        assert f16_viql.iterations >= 20 * f16_piql.iterations
        assert np.max(np.abs(f16_viql.theta - f16_piql.theta)) <= 1e-3

    def test_default_start_warns(self, f16_viql):
        assert "Q increased" in f16_viql.message

    def test_fixed_point(self, f16_data, f16_piql):
        b = quadratic_basis(3, 1)
        theta = viql_update(*viql_regression_matrices(f16_data, b, f16_piql.theta))
        np.testing.assert_allclose(theta, f16_piql.theta, atol=1e-9)

    def test_record_zero_is_initial_theta(self, f16_viql):
        r0 = f16_viql.records[0]
        assert r0.index == 0 and np.isnan(r0.theta_delta)
        np.testing.assert_array_equal(r0.theta, np.diag([1, 0, 0, 0, 1, 0, 0, 1, 0, 1])[
            [0, 4, 7, 9]].sum(axis=0) * 0.01)

    def test_stable_policy_start_is_monotone(self, f16_data):
        from ctqlearn.learner import monotonicity_gaps
        from conftest import domain_points
        b = quadratic_basis(3, 1)
        trace = run_viql(f16_data, b, LearnerConfig(initial_theta=stable_policy_start(f16_data, b)))
        assert trace.converged and not trace.message
        X, U = domain_points(3, 1)
        assert np.all(monotonicity_gaps(trace, X, U) <= 1e-6)

    def test_example2(self, ex2_viql):
        assert ex2_viql.converged and 100 <= ex2_viql.iterations <= 2000
        np.testing.assert_allclose(ex2_viql.gain.K[0], [0, 0, 0, -1, 0], atol=5e-2)

    def test_bad_initial_theta(self, f16_data):
        with pytest.raises(ValueError):
            run_viql(f16_data, quadratic_basis(3, 1), LearnerConfig(initial_theta=np.ones(3)))

    def test_noncoercive_start_recorded(self, f16_data):
        trace = run_viql(f16_data, quadratic_basis(3, 1), LearnerConfig(initial_theta=-np.ones(10)))
        assert trace.status == "error" and trace.message.startswith("iteration 0:")


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(xi=0), dict(max_iterations=0), dict(svd_tolerance=2)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LearnerConfig(**kwargs)


class TestTraceCsv:
    def test_layout(self, f16_piql):
        text = trace_csv(f16_piql, {"config_hash": "abc"})
        lines = text.splitlines()
        assert "# config_hash=abc" in lines and "# status=converged" in lines
        header = next(ln for ln in lines if not ln.startswith("#"))
        cols = header.split(",")
        assert cols[:3] == ["iter", "theta_delta", "bellman_rms"]
        assert cols[3:6] == ["K_x1", "K_x2", "K_x3"]
        assert cols[-1] == "theta_u1^2" and len(cols) == 3 + 3 + 10
        rows = lines[lines.index(header) + 1:]
        assert len(rows) == len(f16_piql.records)
        last = rows[-1].split(",")
        assert float(last[-1]) == f16_piql.theta[-1]

    def test_deterministic(self, f16_data):
        b = quadratic_basis(3, 1)
        assert trace_csv(run_piql(f16_data, b)) == trace_csv(run_piql(f16_data, b))
