# GraphicalMTPOptimizer/tests/test_trial_sim.py

import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from src.errors import ConfigError, GraphError, NumericalError
from src.trial_sim import (
    Scenario,
    cholesky_psd,
    empirical_powers,
    exchangeable_correlation,
    load_panel,
    mean_to_power,
    power_to_mean,
    sample_pvalues,
    save_panel,
    standard_normal_cdf,
    standard_normal_quantile,
)

SLOW = os.environ.get("GRAPHOPT_SLOW") == "1"


class TestNormalHelpers(unittest.TestCase):
    def test_known_values(self):
        self.assertEqual(standard_normal_cdf(0.0), 0.5)
        self.assertAlmostEqual(standard_normal_quantile(0.975), 1.959964, delta=1e-5)

    def test_cdf_symmetry_and_inverse(self):
        x = np.linspace(-8.0, 8.0, 33)
        np.testing.assert_allclose(standard_normal_cdf(x) + standard_normal_cdf(-x), 1.0, atol=1e-15)
        q = np.array([1e-10, 1e-6, 0.01, 0.3, 0.5, 0.9, 0.999999, 1 - 1e-10])
        np.testing.assert_allclose(standard_normal_cdf(standard_normal_quantile(q)), q, rtol=0, atol=1e-12)

    def test_quantile_boundaries(self):
        for q in (0.0, 1.0):
            with self.assertRaises(GraphError):
                standard_normal_quantile(q)

    def test_power_to_mean(self):
        """Powers used in the four-endpoint example correspond to published means."""
        self.assertAlmostEqual(power_to_mean(0.95, 0.025), 3.60, delta=0.005)
        self.assertAlmostEqual(power_to_mean(0.88, 0.025), 3.13, delta=0.005)
        self.assertAlmostEqual(power_to_mean(0.50, 0.025), 1.95996, delta=1e-4)
        for power in (0.1, 0.5, 0.8, 0.99):
            self.assertAlmostEqual(mean_to_power(power_to_mean(power)), power, delta=1e-10)

    def test_power_boundaries(self):
        for power in (0.0, 1.0):
            with self.assertRaises(GraphError):
                power_to_mean(power)


class TestCholesky(unittest.TestCase):
    def test_positive_definite(self):
        corr = exchangeable_correlation(4, 0.3)
        lower = cholesky_psd(corr)
        np.testing.assert_allclose(lower @ lower.T, corr, atol=1e-14)
        np.testing.assert_allclose(lower, np.linalg.cholesky(corr), atol=1e-14)

    def test_singular_is_accepted(self):
        lower = cholesky_psd(np.ones((3, 3)))
        np.testing.assert_allclose(lower @ lower.T, np.ones((3, 3)), atol=1e-14)

    def test_not_psd_names_pivot(self):
        corr = np.array([[1.0, 0.9, 0.9], [0.9, 1.0, -0.9], [0.9, -0.9, 1.0]])
        with self.assertRaisesRegex(NumericalError, "pivot 2"):
            cholesky_psd(corr)


class TestScenario(unittest.TestCase):
    def test_from_dict(self):
        s = Scenario.from_dict({"m": 3, "marginal_powers": [0.9, 0.8, 0.7], "correlation": "exchangeable:0.5"})
        np.testing.assert_allclose(s.marginal_powers(), [0.9, 0.8, 0.7], atol=1e-10)
        self.assertEqual(s.correlation[0, 1], 0.5)

    def test_invalid_scenarios(self):
        with self.assertRaises(ConfigError):
            Scenario.from_dict({"m": 2, "means": [1.0, 2.0, 3.0]})
        with self.assertRaises(ConfigError):
            Scenario.from_dict({"m": 2})
        with self.assertRaises(ConfigError):
            Scenario([0.0, 0.0], [[1.0, 0.5], [0.4, 1.0]])

    def test_digest_depends_on_content(self):
        a = Scenario.from_powers([0.9, 0.8], exchangeable_correlation(2, 0.0))
        b = Scenario.from_powers([0.9, 0.8], exchangeable_correlation(2, 0.5))
        self.assertNotEqual(a.digest(), b.digest())
        self.assertEqual(a.digest(), Scenario.from_dict(a.to_dict()).digest())


class TestSampling(unittest.TestCase):
    def setUp(self):
        self.scenario = Scenario.from_powers([0.95, 0.88, 0.92, 0.85], exchangeable_correlation(4, 0.5))

    def test_deterministic_and_thread_independent(self):
        n = 3 * 65536 + 17
        one = sample_pvalues(self.scenario, n, seed=42, threads=1)
        many = sample_pvalues(self.scenario, n, seed=42, threads=4)
        np.testing.assert_array_equal(one.values, many.values)
        self.assertEqual(one.n, n)
        other = sample_pvalues(self.scenario, 1000, seed=43)
        self.assertFalse(np.array_equal(one.values[:1000], other.values))

    def test_null_is_uniform(self):
        null = Scenario(np.zeros(3), np.eye(3))
        panel = sample_pvalues(null, 100000, seed=1)
        np.testing.assert_allclose(panel.values.mean(axis=0), 0.5, atol=0.005)

    def test_perfect_correlation_gives_identical_columns(self):
        s = Scenario([2.0, 2.0], np.ones((2, 2)))
        panel = sample_pvalues(s, 5000, seed=3)
        np.testing.assert_array_equal(panel.values[:, 0], panel.values[:, 1])

    def test_marginal_calibration(self):
        n = 1000000 if SLOW else 200000
        panel = sample_pvalues(self.scenario, n, seed=7, threads=2)
        target = self.scenario.marginal_powers()
        se = np.sqrt(target * (1 - target) / n)
        self.assertTrue(np.all(np.abs(empirical_powers(panel) - target) <= 4 * se))

    def test_correlation_recovery(self):
        n = 1000000 if SLOW else 200000
        panel = sample_pvalues(self.scenario, n, seed=8)
        z = -standard_normal_quantile(np.clip(panel.values, 1e-300, 1 - 1e-16))
        np.testing.assert_allclose(np.corrcoef(z, rowvar=False), self.scenario.correlation, atol=0.01)

    def test_invalid_size(self):
        with self.assertRaises(GraphError):
            sample_pvalues(self.scenario, 0, seed=1)

    def test_save_and_load(self):
        panel = sample_pvalues(self.scenario, 1234, seed=9)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_panel(panel, Path(tmp) / "panel.bin")
            self.assertEqual(path.read_bytes()[:8], b"PVPANEL1")
            loaded = load_panel(path)
        np.testing.assert_array_equal(loaded.values, panel.values)
        self.assertEqual(loaded.seed, 9)
        self.assertEqual(loaded.scenario_digest, self.scenario.digest())

    def test_split(self):
        panel = sample_pvalues(self.scenario, 100, seed=9)
        head, tail = panel.split(60)
        self.assertEqual((head.n, tail.n), (60, 40))
        np.testing.assert_array_equal(np.vstack([head.values, tail.values]), panel.values)


if __name__ == '__main__':
    unittest.main()
