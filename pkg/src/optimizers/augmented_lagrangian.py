# GraphicalMTPOptimizer/src/optimizers/augmented_lagrangian.py
"""
Augmented-Lagrangian ascent for smooth objectives under affine inequalities.

With the objective f to maximize and constraints ``c_k(z) <= 0`` the inner
subproblem minimizes

    L(z) = -f(z) + (1 / 2 mu) * sum_k [max(0, lam_k mu + c_k(z))^2 - (lam_k mu)^2]

by gradient descent with a Barzilai-Borwein trial step and Armijo
backtracking. After each subproblem the multipliers move to
``max(0, lam_k + c_k / mu)`` and mu is divided by the growth factor whenever
the violation has not dropped to a quarter of its previous value.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src import config
from src.errors import ConfigError, InfeasibleError
from src.optimizers.base import FEAS_TOL, OptProblem, OptResult, Optimizer

ARMIJO = 1e-4
MIN_STEP = 1e-20
ABS_XTOL = 1e-10


@dataclass(frozen=True)
class ALConfig:
    xtol_rel: float = 1e-5
    max_iterations: int = 100000
    initial_penalty: float = 0.1
    penalty_growth: float = 10.0
    min_penalty: float = 1e-8
    multi_start: int = 16
    seed: int = 6
    max_outer: int = 60
    max_inner: int = 5000
    inner_gtol: float = 1e-9

    def __post_init__(self):
        if self.xtol_rel <= 0:
            raise ConfigError(f"xtol_rel must be positive, got {self.xtol_rel}.")
        if self.penalty_growth <= 1:
            raise ConfigError(f"Penalty growth must exceed 1, got {self.penalty_growth}.")
        if self.initial_penalty <= 0 or self.multi_start < 1:
            raise ConfigError("Initial penalty must be positive and multi_start at least 1.")


@dataclass
class _StartOutcome:
    z: np.ndarray
    value: float
    iterations: int
    converged: bool
    trace: List[Tuple[float, float]]


def _pull_back(cs, z_start: np.ndarray, z_end: np.ndarray) -> np.ndarray:
    """Last feasible point on the segment from a feasible start to ``z_end`` (exact for affine constraints)."""
    c0, c1 = cs.values(z_start), cs.values(z_end)
    rising = c1 > np.maximum(c0, 0.0)
    if not rising.any():
        return z_end
    theta = np.min(-c0[rising] / (c1[rising] - c0[rising]))
    theta = min(max(theta, 0.0), 1.0)
    return z_start + theta * (z_end - z_start)


class AugmentedLagrangian(Optimizer):
    """Multi-start augmented-Lagrangian maximizer for objectives with analytic gradients."""

    def __init__(self, name: str = "augmented_lagrangian", settings: Optional[ALConfig] = None):
        super().__init__(name, settings or ALConfig(**config.OPTIMIZER_SETTINGS["AUGMENTED_LAGRANGIAN"]))

    def _solve(self, problem: OptProblem, cs, z0: np.ndarray) -> _StartOutcome:
        s: ALConfig = self.settings
        scale = problem.scale
        objective = problem.objective

        def merit(z, lam, mu):
            shifted = np.maximum(0.0, lam * mu + cs.values(z))
            value = -objective.value(z * scale)
            penalty = (np.dot(shifted, shifted) - np.dot(lam * mu, lam * mu)) / (2.0 * mu)
            grad = -objective.gradient(z * scale) * scale + cs.A.T @ shifted / mu
            return value + penalty, grad

        lam = np.zeros(cs.b.shape[0])
        mu = s.initial_penalty
        z = z0.copy()
        previous_violation = np.inf
        iterations = 0
        converged = False
        trace: List[Tuple[float, float]] = []

        for outer in range(s.max_outer):
            z_outer = z.copy()
            phi, grad = merit(z, lam, mu)
            step = 1.0
            for _ in range(s.max_inner):
                if np.max(np.abs(grad)) <= s.inner_gtol or iterations >= s.max_iterations:
                    break
                iterations += 1
                while step > MIN_STEP:
                    z_new = z - step * grad
                    phi_new, grad_new = merit(z_new, lam, mu)
                    if phi_new <= phi - ARMIJO * step * np.dot(grad, grad):
                        break
                    step *= 0.5
                if step <= MIN_STEP:
                    break
                s_k, y_k = z_new - z, grad_new - grad
                curvature = np.dot(s_k, y_k)
                step = np.dot(s_k, s_k) / curvature if curvature > 0 else 2.0 * step
                z, phi, grad = z_new, phi_new, grad_new

            c = cs.values(z)
            violation = float(max(c.max(), 0.0)) if c.size else 0.0
            lam = np.maximum(0.0, lam + c / mu)
            trace.append((objective.value(z * scale), violation))
            logging.debug(
                f"AL outer {outer}: f={trace[-1][0]:.6f} violation={violation:.2e} mu={mu:.1e} inner total={iterations}"
            )
            moved = np.abs(z - z_outer) > np.maximum(s.xtol_rel * np.abs(z), ABS_XTOL)
            if not moved.any() and violation <= FEAS_TOL:
                converged = True
                break
            if iterations >= s.max_iterations:
                break
            if violation > 0.25 * previous_violation:
                mu = max(mu / s.penalty_growth, s.min_penalty)
            previous_violation = violation

        z = _pull_back(cs, z0, z)
        return _StartOutcome(z, objective.value(z * scale), iterations, converged, trace)

    def optimize(self, problem: OptProblem, starts: Optional[Sequence[np.ndarray]] = None, threads: int = 1) -> OptResult:
        """
        Runs one ascent per start and keeps the best feasible end point.

        Args:
            problem (OptProblem): Problem whose objective supplies gradients.
            starts (Sequence[np.ndarray], optional): Feasible free vectors. Defaults to
                ``settings.multi_start`` draws of ``space.sample_uniform``.
            threads (int): Starts solved concurrently; the result does not depend on it.

        Returns:
            OptResult: The best start's end point (highest value, then lowest start index).

        Raises:
            ConfigError: If the objective has no gradient.
            InfeasibleError: If no start is feasible.
        """
        if not getattr(problem.objective, "has_gradient", False):
            raise ConfigError(f"{self.name} requires an objective with an analytic gradient.")
        started = time.perf_counter()
        if starts is None:
            if problem.space is None:
                raise ConfigError("Starts must be given for problems without a parameter space.")
            starts = problem.space.sample_uniform(self.settings.multi_start, self.settings.seed)
        starts = [np.asarray(x, dtype=float) for x in starts]
        feasible = [x for x in starts if problem.constraints.max_violation(x) <= FEAS_TOL]
        if not feasible:
            raise InfeasibleError("No feasible start for the augmented-Lagrangian search.")
        if len(feasible) < len(starts):
            logging.warning(f"Dropped {len(starts) - len(feasible)} infeasible starts.")

        scale = problem.scale
        cs = problem.constraints.rescaled(scale)
        counted = problem.objective.evaluations
        solve = lambda x: self._solve(problem, cs, x / scale)
        if threads > 1 and len(feasible) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(solve, feasible))
        else:
            outcomes = [solve(x) for x in feasible]

        best = max(range(len(outcomes)), key=lambda i: (outcomes[i].value, -i))
        x_star = outcomes[best].z * scale
        evaluations = problem.objective.evaluations - counted
        return self._finish(
            problem,
            x_star,
            evaluations=evaluations,
            started=started,
            converged=outcomes[best].converged,
            trace=outcomes[best].trace,
            start_values=[o.value for o in outcomes],
        )


def augmented_lagrangian(problem: OptProblem, cfg: Optional[ALConfig] = None, **kwargs) -> OptResult:
    return AugmentedLagrangian(settings=cfg).optimize(problem, **kwargs)
