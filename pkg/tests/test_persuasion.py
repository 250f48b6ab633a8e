import numpy as np
import pytest

from relcomm.core import DomainError, GridFunction, PoolingSet, Prior, QuadraticModel, UnsupportedError
from relcomm.equilibrium import QuadraticUstar, persuasion_problem
from relcomm.oracle import DiscretizedProblem, dp_optimal_partition
from relcomm.persuasion import (
    PersuasionProblem,
    concavify,
    detect_shape,
    objective,
    solve,
    solve_one_inflection,
    solve_two_inflection,
    split_indifference,
    tangency_high,
    tangency_low,
)
from tests.conftest import random_pooling


def half_square(m):
    return 0.5 * np.asarray(m) ** 2


def quadratic_problem(a, b, ell, prior=None):
    return persuasion_problem(QuadraticModel(a, b, 1.0, prior=prior or Prior.uniform()), ell)


class TestObjective:
    def test_examples(self):
        problem = PersuasionProblem(Prior.uniform(), half_square)
        assert objective(problem, PoolingSet.empty()) == pytest.approx(1 / 6, abs=1e-12)
        assert objective(problem, PoolingSet.full()) == pytest.approx(0.125, abs=1e-15)
        assert objective(problem, PoolingSet(((0.0, 0.5),))) == pytest.approx(0.015625 + 7 / 48, abs=1e-12)

    def test_grid_function_input(self):
        grid = GridFunction.from_callable(half_square, 200)
        problem = PersuasionProblem(Prior.uniform(), grid)
        assert objective(problem, PoolingSet(((0.2, 0.9),))) == pytest.approx(
            objective(PersuasionProblem(Prior.uniform(), half_square), PoolingSet(((0.2, 0.9),))), abs=1e-10
        )


class TestShape:
    def test_detects_two_inflections(self):
        pattern, infl = detect_shape(QuadraticUstar(3.0, -1.2, 0.35))
        assert pattern == "concave-convex-concave"
        assert infl == pytest.approx((0.425, 0.775), abs=1e-3)

    def test_declared_inflections_win(self):
        problem = PersuasionProblem(Prior.uniform(), lambda m: np.sin(3 * np.pi * np.asarray(m)),
                                    inflections=(1 / 3, 2 / 3), pattern="concave-convex-concave")
        assert problem.shape == ("concave-convex-concave", (1 / 3, 2 / 3))

    def test_three_inflections_unsupported(self):
        problem = PersuasionProblem(Prior.uniform(), lambda m: np.sin(4 * np.pi * np.asarray(m)))
        with pytest.raises(UnsupportedError):
            solve(problem)


class TestOneInflection:
    def test_quadratic_lower_censorship(self):
        sol = solve_one_inflection(quadratic_problem(3.0, -1.2, 1.0))
        assert sol.regime == "lower-censorship"
        assert sol.theta_L_star == pytest.approx(0.1763708, abs=1e-6)
        assert sol.m_L_star == pytest.approx(0.0881854, abs=1e-6)
        # over-pooling: the pool reaches past the last extreme state
        assert sol.theta_L_star > 0.1 > sol.m_L_star

    def test_convex_and_concave(self):
        assert solve(PersuasionProblem(Prior.uniform(), half_square)).regime == "full-separation"
        sol = solve(PersuasionProblem(Prior.uniform(), lambda m: -np.asarray(m) ** 2))
        assert sol.regime == "complete-pooling"
        assert sol.pooling == PoolingSet.full()

    def test_pattern_mismatch(self):
        with pytest.raises(DomainError):
            solve_one_inflection(quadratic_problem(3.0, -1.2, 0.35))
        with pytest.raises(DomainError):
            solve_two_inflection(quadratic_problem(3.0, -1.2, 1.0))

    def test_convex_concave_reflects(self):
        problem = quadratic_problem(3.0, -0.8, 1.0)
        sol = solve(problem)
        assert sol.regime == "upper-censorship"
        mirrored = solve(quadratic_problem(3.0, -1.2, 1.0))
        assert sol.theta_H_star == pytest.approx(1 - mirrored.theta_L_star, abs=1e-9)
        assert sol.value == pytest.approx(objective(problem, sol.pooling), abs=1e-12)


class TestTwoInflection:
    def test_two_sided(self):
        problem = quadratic_problem(3.0, -1.2, 0.6)
        sol = solve_two_inflection(problem)
        assert sol.regime == "two-sided-censorship"
        assert sol.theta_L_star == pytest.approx(0.5291, abs=1e-4)
        assert sol.theta_H_star == pytest.approx(0.8236, abs=1e-4)
        theta_l, theta_h = problem.shape[1]
        assert sol.m_L_star < theta_l < sol.theta_L_star < sol.theta_H_star < theta_h < sol.m_H_star

    def test_binary_split(self):
        sol = solve_two_inflection(quadratic_problem(3.0, -1.2, 0.35))
        assert sol.regime == "binary-split"
        assert sol.theta_M_star == pytest.approx(0.71538, abs=1e-4)
        assert abs(sol.residuals["split_indifference"]) < 1e-10

    def test_symmetric_split_at_half(self):
        # agreement state θ₀ = −b/(a − 1) = 1/2
        sol = solve_two_inflection(quadratic_problem(3.0, -1.0, 0.3))
        assert sol.regime == "binary-split"
        assert sol.theta_M_star == pytest.approx(0.5, abs=1e-9)

    def test_complete_pooling(self):
        assert solve(quadratic_problem(3.0, -1.2, 0.1)).regime == "complete-pooling"


class TestOptimality:
    @pytest.mark.parametrize("ell", [0.1, 0.3, 0.35, 0.6, 1.0, 1.3])
    def test_beats_random_pooling_sets(self, rng, ell):
        problem = quadratic_problem(3.0, -1.2, ell)
        sol = solve(problem)
        for _ in range(170):
            assert sol.value >= objective(problem, random_pooling(rng)) - 1e-6

    @pytest.mark.parametrize("ell", [0.1, 0.35, 0.6, 1.0])
    def test_concavification_bound(self, ell):
        problem = quadratic_problem(3.0, -1.2, ell)
        hull = concavify(GridFunction.from_callable(problem.value, 2000))
        assert solve(problem).value <= float(hull(0.5)) + 1e-9

    @pytest.mark.parametrize("ell", [0.2, 0.5, 0.9])
    def test_tabulated_prior_matches_dp(self, ell):
        prior = Prior.tabulated([0.6, 1.4, 1.0, 0.8, 1.2])
        problem = quadratic_problem(3.0, -1.2, ell, prior)
        sol = solve(problem)
        dp = dp_optimal_partition(DiscretizedProblem.from_prior(prior, problem.value, 2000))
        assert sol.value == pytest.approx(dp.value, abs=1e-5)
        assert sol.value == pytest.approx(objective(problem, sol.pooling), abs=1e-9)

    @pytest.mark.parametrize("ell", [0.1, 1.4])
    def test_extreme_regime_values(self, ell):
        problem = quadratic_problem(3.0, -1.2, ell)
        sol = solve(problem)
        if sol.regime == "complete-pooling":
            assert sol.value == pytest.approx(float(problem.value(0.5)), abs=1e-12)
        else:
            assert sol.regime == "full-separation"
            assert sol.value == pytest.approx(objective(problem, PoolingSet.empty()), abs=1e-12)

    @pytest.mark.parametrize("ell", [0.6, 1.0])
    def test_foc_functions_vanish(self, ell):
        problem = quadratic_problem(3.0, -1.2, ell)
        sol = solve(problem)
        assert abs(tangency_low(problem, sol.theta_L_star)) < 1e-10
        if sol.theta_H_star is not None:
            assert abs(tangency_high(problem, sol.theta_H_star)) < 1e-10


def chord_hull(x, y):
    """O(n²) least concave majorant: best chord value above each node."""
    out = y.copy()
    for i in range(len(x)):
        j = np.arange(i + 1, len(x))
        if j.size == 0:
            continue
        # chord from i to each j, evaluated at every node between them
        for jj in j:
            k = np.arange(i, jj + 1)
            chord = y[i] + (y[jj] - y[i]) * (x[k] - x[i]) / (x[jj] - x[i])
            out[k] = np.maximum(out[k], chord)
    return out


class TestConcavify:
    def test_concave_unchanged(self):
        grid = GridFunction.from_callable(lambda x: -(x - 0.3) ** 2, 100)
        assert np.allclose(concavify(grid).array, grid.array, atol=1e-15)

    def test_convex_becomes_chord(self):
        grid = GridFunction.from_callable(lambda x: x * x, 100)
        assert np.allclose(concavify(grid).array, grid.nodes, atol=1e-15)

    def test_tent_is_its_own_hull(self):
        grid = GridFunction.from_callable(lambda x: np.minimum(x, 1 - x), 1000)
        hull = concavify(grid)
        assert np.allclose(hull.array, grid.array, atol=1e-15)
        assert hull(0.5) == pytest.approx(0.5)

    def test_matches_chord_brute_force(self, rng):
        for _ in range(5):
            grid = GridFunction(tuple(rng.normal(size=61)))
            hull = concavify(grid)
            assert np.allclose(hull.array, chord_hull(grid.nodes, grid.array), atol=1e-12)
            assert np.all(hull.array >= grid.array - 1e-15)
            assert np.all(np.diff(hull.array, 2) <= 1e-12)
