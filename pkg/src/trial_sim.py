# GraphicalMTPOptimizer/src/trial_sim.py
"""
Monte Carlo panels of one-sided unadjusted p-values.

Test statistics follow a multivariate normal distribution with unit
variances; each endpoint's mean is derived from its marginal power at the
one-sided level. Panels are drawn in fixed-size blocks, each with its own
Philox stream keyed by ``(seed, block)``, so the result does not depend on
how many threads draw them.
"""
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from scipy import stats

from src import config
from src.errors import ConfigError, GraphError, NumericalError
from src.rng import make_rng

BLOCK_ROWS = 1 << 16
PANEL_MAGIC = b"PVPANEL1"


def standard_normal_cdf(x):
    """Standard normal CDF (SciPy's ``ndtr``-based implementation, accurate in both tails)."""
    return stats.norm.cdf(x)


def standard_normal_quantile(q):
    """
    Standard normal quantile.

    Raises:
        GraphError: If any ``q`` lies outside the open interval (0, 1).
    """
    q_arr = np.asarray(q, dtype=float)
    if np.any(q_arr <= 0.0) or np.any(q_arr >= 1.0) or np.isnan(q_arr).any():
        raise GraphError("Normal quantile is only finite for 0 < q < 1.")
    return stats.norm.ppf(q)


def power_to_mean(power: float, alpha_one_sided: float = config.ALPHA_TOTAL) -> float:
    """
    Test-statistic mean giving the requested marginal power at a one-sided level.

    Args:
        power (float): Marginal power, strictly between 0 and 1.
        alpha_one_sided (float): One-sided level, strictly between 0 and 0.5.

    Returns:
        float: ``z_{1 - alpha} + z_{power}``.
    """
    if not 0.0 < power < 1.0:
        raise GraphError(f"Power must lie strictly between 0 and 1, got {power}.")
    if not 0.0 < alpha_one_sided < 0.5:
        raise GraphError(f"One-sided alpha must lie strictly between 0 and 0.5, got {alpha_one_sided}.")
    return float(standard_normal_quantile(1.0 - alpha_one_sided) + standard_normal_quantile(power))


def mean_to_power(mean: float, alpha_one_sided: float = config.ALPHA_TOTAL) -> float:
    """Inverse of ``power_to_mean``: ``Phi(mean - z_{1 - alpha})``."""
    return float(standard_normal_cdf(mean - standard_normal_quantile(1.0 - alpha_one_sided)))


def exchangeable_correlation(m: int, rho: float) -> np.ndarray:
    matrix = np.full((m, m), float(rho))
    np.fill_diagonal(matrix, 1.0)
    return matrix


def cholesky_psd(matrix: np.ndarray, tol: float = config.TOLERANCES["cholesky"]) -> np.ndarray:
    """
    Lower Cholesky factor of a positive semi-definite matrix, without pivoting.

    Zero pivots are accepted (the column below them must then vanish), so
    singular correlation structures such as perfectly correlated endpoints
    are supported.

    Raises:
        NumericalError: Naming the first pivot at which the matrix is not PSD.
    """
    a = np.asarray(matrix, dtype=float)
    m = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(m):
        pivot = a[j, j] - np.dot(lower[j, :j], lower[j, :j])
        if pivot < -tol:
            raise NumericalError(f"Correlation matrix is not PSD: pivot {j} equals {pivot:.3e}.")
        if pivot <= tol:
            residual = a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]
            if np.any(np.abs(residual) > np.sqrt(tol)):
                raise NumericalError(f"Correlation matrix is not PSD: zero pivot {j} with non-zero column.")
            continue
        lower[j, j] = np.sqrt(pivot)
        lower[j + 1:, j] = (a[j + 1:, j] - lower[j + 1:, :j] @ lower[j, :j]) / lower[j, j]
    return lower


@dataclass(frozen=True, eq=False)
class Scenario:
    """
    Joint distribution of the test statistics.

    Attributes:
        means (np.ndarray): Mean of each test statistic (standard-normal units).
        correlation (np.ndarray): Symmetric, unit-diagonal PSD correlation matrix.
        alpha_one_sided (float): One-sided level used to map powers to means.
    """
    means: np.ndarray
    correlation: np.ndarray
    alpha_one_sided: float = config.ALPHA_TOTAL

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        corr = np.array(self.correlation, dtype=float)
        m = means.shape[0]
        if means.ndim != 1 or not np.all(np.isfinite(means)):
            raise ConfigError("Scenario means must be a finite vector.")
        if corr.shape != (m, m):
            raise ConfigError(f"Correlation shape {corr.shape} does not match {m} endpoints.")
        if not np.allclose(corr, corr.T, atol=0.0, rtol=0.0) or not np.all(np.diag(corr) == 1.0):
            raise ConfigError("Correlation matrix must be symmetric with a unit diagonal.")
        lower = cholesky_psd(corr)
        means.setflags(write=False)
        corr.setflags(write=False)
        lower.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "correlation", corr)
        object.__setattr__(self, "_lower", lower)

    @property
    def m(self) -> int:
        return self.means.shape[0]

    @property
    def cholesky(self) -> np.ndarray:
        return self._lower

    @classmethod
    def from_powers(cls, powers: Sequence[float], correlation, alpha_one_sided: float = config.ALPHA_TOTAL) -> "Scenario":
        means = [power_to_mean(p, alpha_one_sided) for p in powers]
        return cls(means, correlation, alpha_one_sided)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":
        """
        Parses the scenario file format.

        ``{"m": 3, "marginal_powers": [...] | "means": [...],
        "correlation": "exchangeable:0.3" | [[...]], "alpha": 0.025}``
        """
        alpha = float(data.get("alpha", config.ALPHA_TOTAL))
        if "means" in data:
            means = [float(v) for v in data["means"]]
        elif "marginal_powers" in data:
            means = [power_to_mean(float(p), alpha) for p in data["marginal_powers"]]
        else:
            raise ConfigError("Scenario needs either 'means' or 'marginal_powers'.")
        m = int(data.get("m", len(means)))
        if m != len(means):
            raise ConfigError(f"Scenario declares m={m} but lists {len(means)} endpoints.")

        corr_spec = data.get("correlation", "exchangeable:0")
        if isinstance(corr_spec, str):
            kind, _, value = corr_spec.partition(":")
            if kind != "exchangeable":
                raise ConfigError(f"Unknown correlation shorthand '{corr_spec}'.")
            corr = exchangeable_correlation(m, float(value or 0.0))
        else:
            corr = np.array(corr_spec, dtype=float)
        return cls(means, corr, alpha)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "m": self.m,
            "means": self.means.tolist(),
            "correlation": self.correlation.tolist(),
            "alpha": self.alpha_one_sided,
        }

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def marginal_powers(self) -> np.ndarray:
        return np.array([mean_to_power(mu, self.alpha_one_sided) for mu in self.means])

    def null(self) -> "Scenario":
        """The same correlation structure with every mean at zero (global null)."""
        return Scenario(np.zeros(self.m), self.correlation, self.alpha_one_sided)


@dataclass(frozen=True, eq=False)
class PValuePanel:
    """
    n simulated p-value vectors.

    Attributes:
        values (np.ndarray): n x m matrix of p-values in [0, 1].
        seed (int): Seed the panel was drawn with.
        scenario_digest (str): Content hash of the generating scenario.
    """
    values: np.ndarray
    seed: int
    scenario_digest: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise GraphError(f"Panel must be 2-dimensional, got shape {values.shape}.")
        if values.size and (np.isnan(values).any() or values.min() < 0.0 or values.max() > 1.0):
            raise GraphError("Panel p-values must lie in [0, 1].")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def split(self, rows: int):
        """Splits into the first ``rows`` rows and the rest (both keep seed and digest)."""
        return (
            PValuePanel(self.values[:rows], self.seed, self.scenario_digest),
            PValuePanel(self.values[rows:], self.seed, self.scenario_digest),
        )


def _sample_block(scenario: Scenario, seed: int, block: int, rows: int) -> np.ndarray:
    rng = make_rng(seed, block)
    noise = rng.standard_normal((rows, scenario.m))
    z = scenario.means + noise @ scenario.cholesky.T
    # One-sided p-values from the upper tail.
    return stats.norm.sf(z)


def sample_pvalues(scenario: Scenario, n: int, seed: int, threads: int = 1) -> PValuePanel:
    """
    Draws n vectors of one-sided p-values ``1 - Phi(Z)``, ``Z ~ MVN(means, correlation)``.

    Args:
        scenario (Scenario): The test-statistic model.
        n (int): Number of p-value vectors.
        seed (int): Non-negative seed; identical seed and scenario give an identical panel.
        threads (int): Worker threads; the output does not depend on it.

    Returns:
        PValuePanel: The simulated panel.
    """
    if n < 1:
        raise GraphError(f"Panel size must be at least 1, got {n}.")
    sizes = [min(BLOCK_ROWS, n - start) for start in range(0, n, BLOCK_ROWS)]
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(lambda kv: _sample_block(scenario, seed, kv[0], kv[1]), enumerate(sizes)))
    else:
        blocks = [_sample_block(scenario, seed, k, rows) for k, rows in enumerate(sizes)]
    logging.debug(f"Sampled {n} p-value vectors for scenario {scenario.digest()} in {len(sizes)} blocks.")
    return PValuePanel(np.vstack(blocks), int(seed), scenario.digest())


def save_panel(panel: PValuePanel, path: Union[str, Path]) -> Path:
    """
    Writes a panel as little-endian float64, column-major, behind an 8-byte magic header.

    A JSON sidecar (``<path>.json``) carries n, m, seed and the scenario digest.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(PANEL_MAGIC)
        handle.write(np.asarray(panel.values, dtype="<f8").tobytes(order="F"))
    sidecar = {"n": panel.n, "m": panel.m, "seed": panel.seed, "scenario_digest": panel.scenario_digest}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))
    return path


def load_panel(path: Union[str, Path]) -> PValuePanel:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    raw = path.read_bytes()
    if raw[:len(PANEL_MAGIC)] != PANEL_MAGIC:
        raise GraphError(f"{path} is not a p-value panel file.")
    n, m = int(sidecar["n"]), int(sidecar["m"])
    values = np.frombuffer(raw[len(PANEL_MAGIC):], dtype="<f8")
    if values.size != n * m:
        raise GraphError(f"{path} holds {values.size} values, expected {n * m}.")
    return PValuePanel(values.reshape((n, m), order="F"), int(sidecar["seed"]), sidecar["scenario_digest"])


def empirical_powers(panel: PValuePanel, alpha_one_sided: Optional[float] = None) -> np.ndarray:
    """Per-endpoint fraction of unadjusted p-values at or below the one-sided level."""
    level = config.ALPHA_TOTAL if alpha_one_sided is None else alpha_one_sided
    return (panel.values <= level).mean(axis=0)
