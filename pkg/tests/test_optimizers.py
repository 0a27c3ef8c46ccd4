# GraphicalMTPOptimizer/tests/test_optimizers.py

import unittest
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from src import config
from src.errors import ConfigError, InfeasibleError
from src.graph import validate_graph
from src.graph_space import ConstraintSet, build_space, fully_free_family
from src.optimizers.augmented_lagrangian import ALConfig, AugmentedLagrangian, augmented_lagrangian
from src.optimizers.base import FunctionObjective, OptProblem, OptResult, SurrogateObjective
from src.optimizers.brute_force import brute_force_baseline
from src.optimizers.isres import ISRESConfig, isres_baseline, stochastic_rank
from src.optimizers.local_refine import LocalRefiner, RefineConfig, local_refine
from src.surrogate import Dataset, Network, NetworkSpec

AL_SETTINGS = ALConfig(multi_start=4, seed=1)


def box(d: int, extra_A=None, extra_b=None) -> ConstraintSet:
    """Unit box ``0 <= x <= 1`` plus optional extra rows."""
    A = np.vstack([-np.eye(d), np.eye(d)])
    b = np.concatenate([np.zeros(d), -np.ones(d)])
    if extra_A is not None:
        A = np.vstack([A, extra_A])
        b = np.concatenate([b, extra_b])
    return ConstraintSet(A, b)


def unit_bounds(d: int):
    return np.zeros(d), np.ones(d)


def random_network(d: int, seed: int) -> Network:
    rng = np.random.default_rng(seed)
    spec = NetworkSpec((6, 4))
    sizes = spec.layer_sizes(d)
    weights = [rng.normal(size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(size=b) for b in sizes[1:]]
    return Network(spec, weights, biases, np.full(d, 0.1), np.full(d, 0.2))


def quadratic_optimum(a, c, upper, total) -> np.ndarray:
    """Maximizer of ``-sum a_i (x_i - c_i)^2`` on ``0 <= x <= upper, sum x <= total`` (KKT bisection)."""
    at = lambda lam: np.clip(c - lam / (2 * a), 0.0, upper)
    if at(0.0).sum() <= total:
        return at(0.0)
    lo, hi = 0.0, float(np.max(2 * a * c)) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if at(mid).sum() > total else (lo, mid)
    return at(hi)


class TestAugmentedLagrangian(unittest.TestCase):
    def test_random_concave_quadratics(self):
        """Surrogate ascent followed by refinement lands on the known optimum of 20 random problems."""
        rng = np.random.default_rng(31)
        for k in range(20):
            d = int(rng.integers(1, 11))
            a = rng.uniform(0.5, 3.0, size=d)
            upper = rng.uniform(0.2, 1.0, size=d)
            c = rng.uniform(-0.2, 1.2, size=d) * upper
            total = rng.uniform(0.3, 0.9) * upper.sum()
            A = np.vstack([-np.eye(d), np.eye(d), np.ones((1, d))])
            b = np.concatenate([np.zeros(d), -upper, [-total]])
            problem = OptProblem(
                FunctionObjective(lambda x, a=a, c=c: -np.sum(a * (x - c) ** 2), lambda x, a=a, c=c: -2 * a * (x - c)),
                ConstraintSet(A, b),
                bounds=(np.zeros(d), upper),
            )
            x0 = upper * min(0.5, 0.5 * total / upper.sum())
            ascent = augmented_lagrangian(problem, AL_SETTINGS, starts=[x0])
            refined = local_refine(problem, ascent.x_star, RefineConfig(xtol_rel=1e-6, initial_radius=0.01))
            np.testing.assert_allclose(
                refined.x_star, quadratic_optimum(a, c, upper, total), rtol=0, atol=1e-3,
                err_msg=f"Problem {k} (d={d}) missed its optimum.",
            )
            self.assertGreaterEqual(refined.value, ascent.value)

    def test_active_bound(self):
        """Unconstrained maximum at 0.7 lies outside ``x <= 0.5``; the bound becomes active."""
        objective = FunctionObjective(lambda x: -(x[0] - 0.7) ** 2, lambda x: np.array([-2.0 * (x[0] - 0.7)]))
        problem = OptProblem(objective, ConstraintSet([[1.0], [-1.0]], [-0.5, 0.0]), bounds=unit_bounds(1))
        result = augmented_lagrangian(problem, AL_SETTINGS, starts=[np.array([0.1])])
        self.assertAlmostEqual(result.x_star[0], 0.5, delta=1e-4)
        self.assertLessEqual(problem.constraints.max_violation(result.x_star), 1e-9)

    def test_active_sum_constraint(self):
        objective = FunctionObjective(
            lambda x: -np.sum((x - 1.0) ** 2),
            lambda x: -2.0 * (x - 1.0),
        )
        problem = OptProblem(objective, box(2, [[1.0, 1.0]], [-1.0]), bounds=unit_bounds(2))
        result = augmented_lagrangian(problem, AL_SETTINGS, starts=[np.array([0.1, 0.2]), np.array([0.0, 0.9])])
        np.testing.assert_allclose(result.x_star, [0.5, 0.5], atol=1e-4)
        self.assertEqual(len(result.start_values), 2)

    def test_best_start_wins(self):
        net = random_network(5, seed=4)
        space, _ = build_space(fully_free_family(3, config.ALPHA_TOTAL))
        problem = OptProblem.for_space(SurrogateObjective(net), space)
        starts = space.sample_uniform(5, seed=2)
        result = AugmentedLagrangian(settings=AL_SETTINGS).optimize(problem, starts=starts)
        self.assertAlmostEqual(result.value, max(result.start_values), places=12)
        self.assertLessEqual(space.constraints.max_violation(result.x_star), 1e-9)
        self.assertTrue(validate_graph(result.graph).feasible)

    def test_threads_do_not_change_result(self):
        net = random_network(5, seed=6)
        space, _ = build_space(fully_free_family(3, config.ALPHA_TOTAL))
        problem = OptProblem.for_space(SurrogateObjective(net), space)
        one = AugmentedLagrangian(settings=AL_SETTINGS).optimize(problem, threads=1)
        many = AugmentedLagrangian(settings=AL_SETTINGS).optimize(problem, threads=3)
        np.testing.assert_array_equal(one.x_star, many.x_star)

    def test_affine_rescaling_keeps_argmax(self):
        grad = lambda x: -2.0 * (x - 1.0)
        cs = box(2, [[1.0, 1.0]], [-1.0])
        starts = [np.array([0.2, 0.1])]
        plain = augmented_lagrangian(
            OptProblem(FunctionObjective(lambda x: -np.sum((x - 1.0) ** 2), grad), cs, bounds=unit_bounds(2)),
            AL_SETTINGS, starts=starts,
        )
        scaled = augmented_lagrangian(
            OptProblem(
                FunctionObjective(lambda x: 3.0 * -np.sum((x - 1.0) ** 2) + 0.1, lambda x: 3.0 * grad(x)),
                cs, bounds=unit_bounds(2),
            ),
            AL_SETTINGS, starts=starts,
        )
        np.testing.assert_allclose(plain.x_star, scaled.x_star, atol=1e-4)

    def test_evaluations_are_objective_calls(self):
        objective = FunctionObjective(lambda x: -np.sum((x - 1.0) ** 2), lambda x: -2.0 * (x - 1.0))
        problem = OptProblem(objective, box(2, [[1.0, 1.0]], [-1.0]), bounds=unit_bounds(2))
        result = augmented_lagrangian(
            problem, AL_SETTINGS, starts=[np.array([0.1, 0.2]), np.array([0.0, 0.9])], threads=2
        )
        # one more call recomputes the value at the end point
        self.assertEqual(result.evaluations, objective.evaluations - 1)
        self.assertGreater(result.evaluations, 2)

    def test_requires_gradient(self):
        problem = OptProblem(FunctionObjective(lambda x: 0.0), box(1), bounds=unit_bounds(1))
        with self.assertRaises(ConfigError):
            augmented_lagrangian(problem, AL_SETTINGS, starts=[np.array([0.5])])

    def test_no_feasible_start(self):
        problem = OptProblem(FunctionObjective(lambda x: 0.0, lambda x: np.zeros(1)), box(1), bounds=unit_bounds(1))
        with self.assertRaises(InfeasibleError):
            augmented_lagrangian(problem, AL_SETTINGS, starts=[np.array([2.0])])


class TestLocalRefine(unittest.TestCase):
    def setUp(self):
        self.objective = FunctionObjective(lambda x: -((x[0] - 0.3) ** 2 + (x[1] - 0.5) ** 2))
        self.problem = OptProblem(self.objective, box(2), bounds=unit_bounds(2))

    def test_finds_interior_maximum(self):
        result = local_refine(self.problem, np.array([0.8, 0.1]), RefineConfig(xtol_rel=1e-6, initial_radius=0.1))
        np.testing.assert_allclose(result.x_star, [0.3, 0.5], atol=1e-3)
        self.assertGreater(result.value, self.objective.value(np.array([0.8, 0.1])))

    def test_start_at_optimum(self):
        x0 = np.array([0.3, 0.5])
        result = local_refine(self.problem, x0)
        np.testing.assert_array_equal(result.x_star, x0)
        self.assertEqual(result.value, 0.0)

    def test_infeasible_start(self):
        with self.assertRaises(InfeasibleError):
            local_refine(self.problem, np.array([1.5, 0.5]))

    def test_several_starts(self):
        starts = [np.array([0.8, 0.1]), np.array([0.3, 0.5]), np.array([0.0, 1.0])]
        refiner = LocalRefiner(settings=RefineConfig(xtol_rel=1e-6, initial_radius=0.1))
        result = refiner.optimize(self.problem, starts=starts, threads=2)
        self.assertEqual(len(result.start_values), 3)
        self.assertEqual(result.value, max(result.start_values))
        self.assertEqual(result.value, 0.0)
        self.assertEqual(result.evaluations, self.objective.evaluations - 1)

    def test_several_starts_one_infeasible(self):
        with self.assertRaises(InfeasibleError):
            LocalRefiner().optimize(self.problem, starts=[np.array([0.5, 0.5]), np.array([1.5, 0.5])])
        with self.assertRaises(ConfigError):
            LocalRefiner().optimize(self.problem, starts=[])


class TestCountingObjective(unittest.TestCase):
    def test_counts_calls_from_worker_threads(self):
        objective = FunctionObjective(lambda x: float(np.sum(x)))
        with ThreadPoolExecutor(max_workers=8) as pool:
            list(pool.map(objective.value, [np.ones(2)] * 1000))
        self.assertEqual(objective.evaluations, 1000)


class TestISRES(unittest.TestCase):
    def test_sphere(self):
        center = np.array([0.3, 0.6, 0.2])
        problem = OptProblem(FunctionObjective(lambda x: -np.sum((x - center) ** 2)), box(3), bounds=unit_bounds(3))
        result = isres_baseline(problem, 30.0 * config.ureg.second, cfg=ISRESConfig(max_generations=300, seed=3))
        np.testing.assert_allclose(result.x_star, center, atol=0.05)
        self.assertLessEqual(problem.constraints.max_violation(result.x_star), 1e-9)

    def test_zero_budget_returns_initial_best(self):
        space, _ = build_space(fully_free_family(3, config.ALPHA_TOTAL))
        problem = OptProblem.for_space(FunctionObjective(lambda x: float(x.sum())), space)
        result = isres_baseline(problem, 0.0, cfg=ISRESConfig(seed=1))
        self.assertEqual(result.evaluations, min(20 * space.d, 400))
        self.assertLessEqual(space.constraints.max_violation(result.x_star), 1e-9)
        self.assertFalse(result.converged)

    def test_deterministic_with_generation_cap(self):
        problem = OptProblem(FunctionObjective(lambda x: -np.sum(x ** 2)), box(2), bounds=unit_bounds(2))
        cfg = ISRESConfig(max_generations=20, seed=5)
        a = isres_baseline(problem, 60.0, cfg=cfg)
        b = isres_baseline(problem, 60.0, cfg=cfg)
        np.testing.assert_array_equal(a.x_star, b.x_star)

    def test_stochastic_rank_feasible_population(self):
        fitness = np.array([0.4, 0.1, 0.3, 0.2])
        order = stochastic_rank(fitness, np.zeros(4), 0.45, np.random.default_rng(0))
        np.testing.assert_array_equal(order, [1, 3, 2, 0])

    def test_stochastic_rank_by_violation(self):
        order = stochastic_rank(np.array([0.0, 1.0, 2.0]), np.array([3.0, 0.0, 1.0]), 0.0, np.random.default_rng(0))
        self.assertEqual(order[-1], 0)

    def test_invalid_settings(self):
        with self.assertRaises(ConfigError):
            ISRESConfig(p_f=1.5)


class TestBruteForce(unittest.TestCase):
    def test_ties_go_to_first_row(self):
        ds = Dataset(np.arange(6.0).reshape(3, 2) / 10, [0.1, 0.5, 0.5])
        result = brute_force_baseline(ds)
        np.testing.assert_array_equal(result.x_star, [0.2, 0.3])
        self.assertEqual(result.value, 0.5)
        self.assertEqual(result.evaluations, 0)

    def test_argmax_invariant_under_affine_rescaling(self):
        rng = np.random.default_rng(1)
        X, Y = rng.uniform(size=(50, 3)), rng.uniform(0.1, 0.3, size=50)
        a = brute_force_baseline(Dataset(X, Y))
        b = brute_force_baseline(Dataset(X, 3.0 * Y + 0.05))
        np.testing.assert_array_equal(a.x_star, b.x_star)

    def test_decodes_through_space(self):
        space, _ = build_space(fully_free_family(3, config.ALPHA_TOTAL))
        X = space.sample_uniform(10, seed=1)
        result = brute_force_baseline(Dataset(X, np.linspace(0.0, 0.9, 10)), space)
        self.assertEqual(result.graph, space.decode(X[-1]))

    def test_empty_dataset(self):
        with self.assertRaises(ConfigError):
            brute_force_baseline(Dataset(np.zeros((0, 2)), np.zeros(0)))


class TestOptResult(unittest.TestCase):
    def test_dict_round_trip(self):
        space, _ = build_space(fully_free_family(3, config.ALPHA_TOTAL))
        x = space.sample_uniform(1, seed=1)[0]
        result = OptResult("fnn", x, space.decode(x), 0.7, 12, 1.5 * config.ureg.minute, True, [(0.6, 0.0)], [0.7])
        again = OptResult.from_dict(result.to_dict())
        np.testing.assert_array_equal(again.x_star, x)
        self.assertEqual(again.graph, result.graph)
        self.assertAlmostEqual(again.elapsed.to("second").magnitude, 90.0)
        self.assertEqual(again.trace, [(0.6, 0.0)])


if __name__ == '__main__':
    unittest.main()
