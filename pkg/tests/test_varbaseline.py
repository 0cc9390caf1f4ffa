import numpy as np
import pytest
from scipy.optimize import minimize

from fnp.varbaseline import (
    VarProblem,
    VarProblemError,
    analytic_analysis,
    cost,
    cost_gradient,
    problem_from_fields,
)
from fnp.grids import ObservationSet, make_equiangular_grid

from conftest import random_field, random_obs


def random_problem(n, m, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    b_mat = a @ a.T + n * np.eye(n)
    c = rng.standard_normal((m, m))
    r_mat = c @ c.T + m * np.eye(m)
    return VarProblem(
        rng.standard_normal(n), rng.standard_normal(m), b_mat, r_mat,
        rng.standard_normal((m, n)),
    )


class TestCost:
    def test_zero_at_consistent_state(self):
        p = random_problem(4, 2, 0)
        x = p.x_b
        p2 = VarProblem(p.x_b, p.H_op @ p.x_b, p.B, p.R, p.H_op)
        assert cost(x, p2) == pytest.approx(0.0, abs=1e-14)

    def test_scalar_case(self):
        p = VarProblem([0.0], [1.0], [[1.0]], [[1.0]], [[1.0]])
        assert cost([0.0], p) == pytest.approx(0.5)

    def test_matches_quadratic_form_loop_oracle(self):
        p = random_problem(3, 2, 1)
        rng = np.random.default_rng(2)
        x = rng.standard_normal(3)
        b_inv = np.linalg.inv(p.B)
        r_inv = np.linalg.inv(p.R)
        db = x - p.x_b
        do = p.y - p.H_op @ x
        expected = 0.0
        for i in range(3):
            for j in range(3):
                expected += 0.5 * db[i] * b_inv[i, j] * db[j]
        for i in range(2):
            for j in range(2):
                expected += 0.5 * do[i] * r_inv[i, j] * do[j]
        assert cost(x, p) == pytest.approx(expected, rel=1e-12)

    def test_non_spd_rejected(self):
        with pytest.raises(VarProblemError):
            VarProblem([0.0, 0.0], [1.0], np.diag([1.0, -1.0]), [[1.0]], [[1.0, 0.0]])
        with pytest.raises(VarProblemError):
            VarProblem([0.0, 0.0], [1.0], [[1.0, 0.5], [0.4, 1.0]], [[1.0]], [[1.0, 0.0]])


class TestAnalyticAnalysis:
    def test_scalar_equal_weight_average(self):
        p = VarProblem([0.0], [1.0], [[1.0]], [[1.0]], [[1.0]])
        assert analytic_analysis(p)[0] == pytest.approx(0.5)

    def test_uninformative_observations_limit(self):
        p = random_problem(4, 2, 3)
        p_big_r = VarProblem(p.x_b, p.y, p.B, 1e9 * p.R, p.H_op)
        x_a = analytic_analysis(p_big_r)
        assert np.abs(x_a - p.x_b).max() <= 1e-6 * max(np.abs(p.x_b).max(), 1.0)

    def test_matches_iterative_minimizer(self):
        p = random_problem(4, 2, 4)
        x_a = analytic_analysis(p)
        res = minimize(lambda x: cost(x, p), p.x_b, jac=lambda x: cost_gradient(x, p),
                       method="CG", options={"gtol": 1e-10, "maxiter": 2000})
        np.testing.assert_allclose(x_a, res.x, atol=1e-6)

    def test_first_order_optimality(self):
        for seed in range(5):
            p = random_problem(6, 3, seed)
            g = cost_gradient(analytic_analysis(p), p)
            assert np.linalg.norm(g) <= 1e-8

    def test_cost_not_above_background(self):
        for seed in range(5):
            p = random_problem(5, 3, seed + 10)
            x_a = analytic_analysis(p)
            assert cost(x_a, p) <= cost(p.x_b, p) + 1e-12

    def test_observation_permutation_invariance(self):
        p = random_problem(5, 4, 11)
        perm = np.random.default_rng(0).permutation(4)
        p_perm = VarProblem(p.x_b, p.y[perm], p.B, p.R[np.ix_(perm, perm)], p.H_op[perm])
        np.testing.assert_allclose(analytic_analysis(p), analytic_analysis(p_perm), atol=1e-12)

    def test_empty_observations_return_background(self):
        p = VarProblem(np.ones(3), np.zeros(0), np.eye(3), np.zeros((0, 0)), np.zeros((0, 3)))
        np.testing.assert_array_equal(analytic_analysis(p), np.ones(3))


class TestProblemFromFields:
    def test_assembly_and_skill(self, channels):
        # twin experiment with a correlated truth, so the Gaussian B is apt
        from fnp.grids import sample_observations
        from fnp.synthetic import BackgroundSpec, FieldSpec, generate_background, generate_truth

        grid = make_equiangular_grid(4, 8)
        truth = generate_truth(FieldSpec(channels, spectral_slope=-2.0), grid, seed=0)
        background = generate_background(
            truth, BackgroundSpec(lead_time=24.0, smoothing_scale=1.0, noise_amplitude=0.4),
            seed=1,
        )
        obs = sample_observations(truth, grid, 0.5, seed=2)
        p = problem_from_fields(background, obs, corr_length_cells=1.5, sigma_r=0.05)
        assert p.n == 3 * 4 * 8
        x_a = analytic_analysis(p)
        err_a = np.linalg.norm(x_a - truth.values.reshape(-1))
        err_b = np.linalg.norm(background.values.reshape(-1) - truth.values.reshape(-1))
        assert err_a < err_b  # analysis improves on the background

    def test_dimension_cap(self, channels):
        grid = make_equiangular_grid(64, 128)
        field = random_field(grid, channels)
        obs = ObservationSet.empty(3)
        with pytest.raises(VarProblemError, match="cap"):
            problem_from_fields(field, obs)
