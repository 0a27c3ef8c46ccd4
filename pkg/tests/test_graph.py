# GraphicalMTPOptimizer/tests/test_graph.py

import itertools
import os
import unittest

import numpy as np

from src.errors import GraphError
from src.graph import (
    Graph,
    closure_holm_oracle,
    fixed_sequence_graph,
    holm_graph,
    remove_hypothesis,
    run_procedure,
    validate_graph,
)

ALPHA = 0.025

# Full-size random draws only when slow tests are requested.
DRAWS = 10000 if os.environ.get("GRAPHOPT_SLOW") else 3000


def figure_graph() -> Graph:
    return Graph(
        alphas=[0.0125, 0.0, 0.0125, 0.0],
        transitions=[
            [0.0, 0.8, 0.2, 0.0],
            [0.0, 0.0, 0.6, 0.4],
            [0.2, 0.0, 0.0, 0.8],
            [0.6, 0.4, 0.0, 0.0],
        ],
    )


def random_graph(m: int, rng: np.random.Generator) -> Graph:
    alphas = rng.dirichlet(np.ones(m + 1))[:m] * ALPHA
    transitions = np.zeros((m, m))
    for i in range(m):
        others = [k for k in range(m) if k != i]
        transitions[i, others] = rng.dirichlet(np.ones(m))[: m - 1]
    return Graph(alphas, transitions)


def all_order_outcomes(g: Graph, p: np.ndarray, active: np.ndarray, rejected: frozenset) -> set:
    """Final rejection sets reached by rejecting any eligible hypothesis first, recursively."""
    eligible = [j for j in range(g.m) if active[j] and g.alphas[j] > 0 and p[j] <= g.alphas[j]]
    if not eligible:
        return {rejected}
    outcomes = set()
    for j in eligible:
        following = active.copy()
        following[j] = False
        outcomes |= all_order_outcomes(remove_hypothesis(g, j, active), p, following, rejected | {j})
    return outcomes


class TestValidateGraph(unittest.TestCase):
    def test_figure_graph_is_feasible(self):
        self.assertTrue(validate_graph(figure_graph(), ALPHA).feasible)

    def test_zero_graph_is_feasible(self):
        self.assertTrue(validate_graph(Graph(np.zeros(3), np.zeros((3, 3))), ALPHA).feasible)

    def test_total_alpha_violation(self):
        g = Graph([0.02, 0.02, 0.0, 0.0], np.zeros((4, 4)))
        report = validate_graph(g, ALPHA)
        self.assertFalse(report.feasible)
        magnitudes = dict(report.violations)
        self.assertAlmostEqual(magnitudes["alpha_total"], 0.015, places=12)

    def test_diagonal_and_row_sum_violations(self):
        g = Graph([0.01, 0.01], [[0.5, 0.7], [0.0, 0.0]])
        ids = {name for name, _ in validate_graph(g, ALPHA).violations}
        self.assertIn("diagonal[0]", ids)
        self.assertIn("row_sum[0]", ids)

    def test_dimension_mismatch(self):
        with self.assertRaises(GraphError):
            Graph([0.01, 0.01, 0.0], np.zeros((2, 2)))

    def test_json_round_trip(self):
        g = random_graph(5, np.random.default_rng(3))
        self.assertEqual(Graph.from_json(g.to_json()), g)


class TestRemoveHypothesis(unittest.TestCase):
    def test_figure_graph_update(self):
        """
        Removing the first hypothesis of the four-endpoint graph passes 0.8 and
        0.2 of its level on and redirects the transitions that pointed at it.
        """
        g = remove_hypothesis(figure_graph(), 0)
        np.testing.assert_allclose(g.alphas, [0.0, 0.01, 0.015, 0.0], atol=1e-15)
        self.assertAlmostEqual(g.transitions[1, 2], 0.6, places=12)
        self.assertAlmostEqual(g.transitions[1, 3], 0.4, places=12)
        self.assertAlmostEqual(g.transitions[2, 1], 1.0 / 6.0, places=12)
        self.assertAlmostEqual(g.transitions[2, 3], 5.0 / 6.0, places=12)
        self.assertTrue(np.all(g.transitions[0] == 0) and np.all(g.transitions[:, 0] == 0))

    def test_holm_update(self):
        g = remove_hypothesis(holm_graph(3, ALPHA), 0)
        np.testing.assert_allclose(g.alphas, [0.0, ALPHA / 2, ALPHA / 2], atol=1e-15)
        self.assertAlmostEqual(g.transitions[1, 2], 1.0, places=12)
        self.assertAlmostEqual(g.transitions[2, 1], 1.0, places=12)

    def test_no_mass_passed(self):
        g = Graph([0.01, 0.005, 0.01], [[0.0, 0.0, 0.0], [0.5, 0.0, 0.5], [1.0, 0.0, 0.0]])
        updated = remove_hypothesis(g, 0)
        np.testing.assert_array_equal(updated.alphas, [0.0, 0.005, 0.01])

    def test_degenerate_denominator_zeroes_row(self):
        g = Graph([0.01, 0.01, 0.005], [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]])
        updated = remove_hypothesis(g, 0)
        np.testing.assert_array_equal(updated.transitions[1], np.zeros(3))
        self.assertAlmostEqual(updated.alphas[1], 0.02, places=15)

    def test_conservation(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            m = int(rng.integers(2, 6))
            g = random_graph(m, rng)
            j = int(rng.integers(m))
            updated = remove_hypothesis(g, j)
            survivors = [k for k in range(m) if k != j]
            self.assertTrue(np.all(updated.transitions.sum(axis=1) <= 1.0 + 1e-9))
            expected = g.alphas[survivors].sum() + g.alphas[j] * g.transitions[j, survivors].sum()
            self.assertAlmostEqual(updated.alphas.sum(), expected, delta=1e-12)

    def test_index_out_of_range(self):
        with self.assertRaises(GraphError):
            remove_hypothesis(holm_graph(2), 2)


class TestRunProcedure(unittest.TestCase):
    def test_figure_graph_trace(self):
        decisions = run_procedure(figure_graph(), [0.001, 0.05, 0.03, 0.1], ALPHA)
        np.testing.assert_array_equal(decisions, [True, False, False, False])

    def test_nothing_rejected_at_one(self):
        self.assertFalse(run_procedure(figure_graph(), np.ones(4), ALPHA).any())

    def test_holm_rejects_all(self):
        decisions = run_procedure(holm_graph(3, ALPHA), [0.001, 0.02, 0.011], ALPHA)
        np.testing.assert_array_equal(decisions, [True, True, True])

    def test_input_not_mutated(self):
        g = figure_graph()
        before = g.to_json()
        run_procedure(g, [0.001, 0.001, 0.001, 0.001], ALPHA)
        self.assertEqual(g.to_json(), before)

    def test_rejects_infeasible_graph_and_nan(self):
        with self.assertRaises(GraphError):
            run_procedure(Graph([0.02, 0.02], np.zeros((2, 2))), [0.1, 0.1], ALPHA)
        with self.assertRaises(GraphError):
            run_procedure(holm_graph(2), [np.nan, 0.1], ALPHA)

    def test_zero_pvalue_at_zero_level_is_rejected(self):
        g = Graph([0.025, 0.0], [[0.0, 0.0], [0.0, 0.0]])
        np.testing.assert_array_equal(run_procedure(g, [0.5, 0.0], ALPHA), [False, True])

    def test_holm_matches_closure(self):
        rng = np.random.default_rng(2024)
        for m in (2, 3, 4):
            g = holm_graph(m, ALPHA)
            for _ in range(DRAWS):
                p = rng.uniform(0.0, 0.05, size=m)
                np.testing.assert_array_equal(
                    run_procedure(g, p, ALPHA),
                    closure_holm_oracle(p, ALPHA),
                    err_msg=f"Holm graph and closure disagree on p={p.tolist()}",
                )

    def test_fixed_sequence_matches_direct_loop(self):
        rng = np.random.default_rng(5)
        for _ in range(DRAWS):
            m = int(rng.integers(2, 7))
            order = rng.permutation(m)
            p = rng.uniform(0.0, 0.06, size=m)
            expected = np.zeros(m, dtype=bool)
            for i in order:
                if p[i] > ALPHA:
                    break
                expected[i] = True
            np.testing.assert_array_equal(run_procedure(fixed_sequence_graph(order, ALPHA), p, ALPHA), expected)

    def test_order_invariance(self):
        """Every order of rejecting eligible hypotheses reaches the same final set."""
        rng = np.random.default_rng(17)
        for _ in range(DRAWS // 10):
            m = int(rng.integers(2, 5))
            g = random_graph(m, rng)
            p = rng.uniform(0.0, 0.03, size=m)
            outcomes = all_order_outcomes(g, p, np.ones(m, dtype=bool), frozenset())
            self.assertEqual(len(outcomes), 1, f"Orders disagree for p={p.tolist()}: {outcomes}")
            expected = np.zeros(m, dtype=bool)
            expected[list(next(iter(outcomes)))] = True
            np.testing.assert_array_equal(run_procedure(g, p, ALPHA), expected)

    def test_p_monotonicity(self):
        rng = np.random.default_rng(23)
        for _ in range(2000):
            m = int(rng.integers(2, 5))
            g = random_graph(m, rng)
            p = rng.uniform(0.0, 0.04, size=m)
            before = run_procedure(g, p, ALPHA)
            lowered = p.copy()
            i = int(rng.integers(m))
            lowered[i] *= rng.uniform()
            after = run_procedure(g, lowered, ALPHA)
            self.assertTrue(np.all(after[before]), "Lowering a p-value removed a rejection.")

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(29)
        for _ in range(500):
            m = int(rng.integers(2, 6))
            g = random_graph(m, rng)
            p = rng.uniform(0.0, 0.04, size=m)
            perm = rng.permutation(m)
            relabeled = Graph(g.alphas[perm], g.transitions[np.ix_(perm, perm)])
            np.testing.assert_array_equal(run_procedure(relabeled, p[perm], ALPHA), run_procedure(g, p, ALPHA)[perm])


class TestConstructors(unittest.TestCase):
    def test_holm_graph(self):
        g = holm_graph(2, ALPHA)
        np.testing.assert_allclose(g.alphas, [0.0125, 0.0125])
        self.assertEqual(g.transitions[0, 1], 1.0)
        g4 = holm_graph(4, ALPHA)
        np.testing.assert_allclose(g4.transitions.sum(axis=1), np.ones(4), atol=1e-15)
        with self.assertRaises(GraphError):
            holm_graph(1)

    def test_fixed_sequence_graph(self):
        g = fixed_sequence_graph([2, 0, 1], ALPHA)
        np.testing.assert_array_equal(g.alphas, [0.0, 0.0, ALPHA])
        self.assertEqual(g.transitions[2, 0], 1.0)
        self.assertEqual(g.transitions[0, 1], 1.0)
        self.assertEqual(g.transitions.sum(), 2.0)
        with self.assertRaises(GraphError):
            fixed_sequence_graph([0, 0, 1])

    def test_closure_oracle(self):
        np.testing.assert_array_equal(closure_holm_oracle([0.001, 0.02, 0.011], ALPHA), [True, True, True])
        np.testing.assert_array_equal(closure_holm_oracle([1.0, 1.0], ALPHA), [False, False])
        np.testing.assert_array_equal(closure_holm_oracle([0.0001, 0.9], ALPHA), [True, False])
        with self.assertRaises(GraphError):
            closure_holm_oracle(np.full(13, 0.5))


if __name__ == '__main__':
    unittest.main()
