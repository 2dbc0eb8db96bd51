import numpy as np
import pytest

from localmahal._accel import AVAILABLE_BACKENDS, get_kernels
from localmahal.errors import DimensionMismatch, Infeasible, ScaleExceeded
from localmahal.model import ExemplarProblem
from localmahal.solver import (
    SolverConfig,
    dual_objective,
    oracle_solve,
    quadratic_kernel,
    solve_dual,
)

TWO_AXES = ExemplarProblem(query=[0, 0], negatives=[[1, 0], [0, 1]])
ONE_NEGATIVE = ExemplarProblem(query=[0, 0], negatives=[[1, 0]])


def random_problem(rng, max_n=20, max_d=5):
    n = int(rng.integers(2, max_n + 1))
    d = int(rng.integers(2, max_d + 1))
    return ExemplarProblem(
        query=rng.uniform(-1, 1, size=d), negatives=rng.uniform(-1, 1, size=(n, d))
    )


class TestQuadraticKernel:
    def test_unit_self_product(self):
        assert quadratic_kernel([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert quadratic_kernel([1, 0], [0, 1]) == 0.0

    def test_hand_value(self):
        assert quadratic_kernel([1, 2], [3, 1]) == 25.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            quadratic_kernel([1, 0], [1, 0, 0])

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b = rng.standard_normal((2, 7))
            assert quadratic_kernel(a, b) >= 0.0

    def test_matches_outer_product_inner_product(self):
        # The explicit feature map is x -> outer(x, x); its flat inner
        # product must equal the kernel.
        rng = np.random.default_rng(7)
        for _ in range(100):
            d = int(rng.integers(1, 51))
            x, y = rng.standard_normal((2, d))
            explicit = float(np.sum(np.outer(x, x) * np.outer(y, y)))
            k = quadratic_kernel(x, y)
            assert abs(explicit - k) <= 1e-10 * max(1.0, abs(k))


class TestSolveDual:
    def test_two_axes_fixture(self):
        sol = solve_dual(TWO_AXES)
        np.testing.assert_allclose(sol.alphas, [2.0, 2.0], atol=1e-6)
        assert abs(sol.objective_value - 4.0) < 1e-6
        assert sol.converged and sol.kkt_violation <= 1e-6

    def test_single_negative_closed_form(self):
        sol = solve_dual(ONE_NEGATIVE)
        np.testing.assert_allclose(sol.alphas, [2.0], atol=1e-6)

    def test_all_degenerate_is_infeasible(self):
        p = ExemplarProblem(query=[1, 1], negatives=[[1, 1], [1, 1]])
        with pytest.raises(Infeasible):
            solve_dual(p)

    def test_degenerate_rows_get_zero_alpha(self):
        p = ExemplarProblem(query=[0, 0], negatives=[[0, 0], [1, 0]])
        sol = solve_dual(p)
        assert sol.alphas[0] == 0.0
        assert abs(sol.alphas[1] - 2.0) < 1e-6

    def test_optimum_is_a_fixed_point(self):
        # One sweep started at the optimal coefficients makes no update.
        for backend in AVAILABLE_BACKENDS:
            sweep = get_kernels(backend)["sweep_cached"]
            K = np.eye(2)
            alphas = np.array([2.0, 2.0])
            f = K @ alphas
            updates = sweep(K, alphas, f, np.array([0, 1], dtype=np.int64),
                            np.full(2, 2.0), 1e12)
            assert updates == 0

    def test_soft_margin_caps_alphas(self):
        p = ExemplarProblem(query=[0, 0], negatives=[[1, 0], [0, 1]], soft_margin_c=0.5)
        sol = solve_dual(p)
        assert np.all(sol.alphas <= 0.5 + 1e-12)

    def test_backends_agree(self):
        rng = np.random.default_rng(11)
        p = random_problem(rng)
        values = {
            b: solve_dual(p, backend=b).objective_value for b in AVAILABLE_BACKENDS
        }
        vals = list(values.values())
        assert max(vals) - min(vals) <= 1e-6 * (1 + abs(vals[0]))

    def test_ondemand_path_matches_cached(self):
        rng = np.random.default_rng(13)
        p = random_problem(rng, max_n=20)
        cached = solve_dual(p, SolverConfig(kernel_cache_limit=8192))
        ondemand = solve_dual(p, SolverConfig(kernel_cache_limit=1))
        assert abs(cached.objective_value - ondemand.objective_value) <= 1e-6 * (
            1 + abs(cached.objective_value)
        )


class TestDualObjective:
    def test_zero_alphas(self):
        assert dual_objective(TWO_AXES, [0.0, 0.0]) == 0.0

    def test_optimal_value(self):
        assert abs(dual_objective(TWO_AXES, [2.0, 2.0]) - 4.0) < 1e-12

    def test_suboptimal_value(self):
        assert abs(dual_objective(TWO_AXES, [1.0, 1.0]) - 3.0) < 1e-12

    def test_monotone_over_sweeps(self):
        rng = np.random.default_rng(5)
        p = random_problem(rng)
        diffs = p.differences()
        G = diffs @ diffs.T
        K = G * G
        sweep = get_kernels()["sweep_cached"]
        alphas = np.zeros(p.n_negatives)
        f = np.zeros(p.n_negatives)
        margins = np.full(p.n_negatives, 2.0)
        prev = 0.0
        for sweep_no in range(20):
            order = rng.permutation(p.n_negatives).astype(np.int64)
            sweep(K, alphas, f, order, margins, 1e12)
            value = dual_objective(p, alphas)
            assert value >= prev - 1e-9
            prev = value


class TestComplementarySlackness:
    def test_active_constraints_at_margin(self):
        rng = np.random.default_rng(17)
        tol = 1e-6
        for _ in range(20):
            p = random_problem(rng)
            sol = solve_dual(p, SolverConfig(tolerance=tol))
            diffs = p.differences()
            G = diffs @ diffs.T
            f = (G * G) @ sol.alphas
            active = sol.alphas > tol
            assert np.all(np.abs(f[active] - p.margin) <= 10 * tol)


class TestOracle:
    def test_two_axes(self):
        sol = oracle_solve(TWO_AXES)
        np.testing.assert_allclose(sol.alphas, [2.0, 2.0], atol=1e-6)

    def test_single_negative(self):
        sol = oracle_solve(ONE_NEGATIVE)
        np.testing.assert_allclose(sol.alphas, [2.0], atol=1e-6)

    def test_scale_guard(self):
        p = ExemplarProblem(query=[0.0], negatives=np.ones((1000, 1)))
        with pytest.raises(ScaleExceeded):
            oracle_solve(p)

    def test_agrees_with_coordinate_ascent(self):
        rng = np.random.default_rng(23)
        for trial in range(25):
            p = random_problem(rng)
            ours = solve_dual(p, SolverConfig(shuffle_seed=trial))
            ref = oracle_solve(p)
            assert abs(ours.objective_value - ref.objective_value) <= 1e-4 * (
                1 + abs(ref.objective_value)
            ), f"trial {trial}"
