# GraphicalMTPOptimizer/src/optimizers/isres.py
"""
Improved stochastic ranking evolution strategy.

A (mu, lambda) strategy with self-adapted step sizes. The population is
ordered by stochastic ranking: bubble-sort sweeps in which neighbours are
compared by objective when both are feasible or with probability ``p_f``,
and by total squared constraint violation otherwise. The first ``mu - 1``
offspring of each generation come from differential variation towards the
best individual; the rest are lognormal mutations of the parents.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import pint

from src import config
from src.errors import ConfigError, InfeasibleError
from src.optimizers.base import FEAS_TOL, OptProblem, OptResult, Optimizer
from src.rng import make_rng

MUTATION_RETRIES = 10


@dataclass(frozen=True)
class ISRESConfig:
    population: Optional[int] = None
    parent_ratio: int = 7
    p_f: float = 0.45
    gamma: float = 0.85
    smoothing: float = 0.2
    xtol_rel: float = 1e-4
    max_generations: Optional[int] = None
    seed: int = 7

    def __post_init__(self):
        if not 0.0 <= self.p_f <= 1.0:
            raise ConfigError(f"p_f must lie in [0, 1], got {self.p_f}.")
        if self.parent_ratio < 1:
            raise ConfigError(f"parent_ratio must be at least 1, got {self.parent_ratio}.")
        if self.population is not None and self.population < 2:
            raise ConfigError(f"Population must hold at least 2 individuals, got {self.population}.")


def stochastic_rank(fitness: np.ndarray, violation: np.ndarray, p_f: float, rng: np.random.Generator) -> np.ndarray:
    """
    Stochastic-ranking order of a population (best first).

    Args:
        fitness (np.ndarray): Values to minimize.
        violation (np.ndarray): Total constraint violation (0 when feasible).
        p_f (float): Probability of comparing infeasible neighbours by fitness.
        rng (np.random.Generator): Source of the comparison coin flips.

    Returns:
        np.ndarray: Indices into the population.
    """
    order = np.arange(fitness.shape[0])
    for _ in range(fitness.shape[0]):
        swapped = False
        for j in range(order.shape[0] - 1):
            a, b = order[j], order[j + 1]
            by_fitness = (violation[a] == 0 and violation[b] == 0) or rng.random() < p_f
            worse = fitness[a] > fitness[b] if by_fitness else violation[a] > violation[b]
            if worse:
                order[j], order[j + 1] = b, a
                swapped = True
        if not swapped:
            break
    return order


class ISRES(Optimizer):
    """Wall-clock-budgeted evolution strategy for derivative-free objectives."""

    def __init__(self, name: str = "isres", settings: Optional[ISRESConfig] = None):
        super().__init__(name, settings or ISRESConfig(**config.OPTIMIZER_SETTINGS["ISRES"]))

    def optimize(
        self,
        problem: OptProblem,
        budget: Union[pint.Quantity, float] = 60.0,
        seed: Optional[int] = None,
        threads: int = 1,
    ) -> OptResult:
        """
        Runs generations until the wall-clock budget or the generation cap is reached.

        Args:
            problem (OptProblem): Problem with a space or explicit bounds.
            budget (pint.Quantity | float): Wall-clock budget (plain numbers are seconds).
            seed (int, optional): Overrides ``settings.seed``.
            threads (int): Workers evaluating a population.

        Returns:
            OptResult: Best feasible individual found; ``converged`` is False when
            the budget or the generation cap ended the run.
        """
        s: ISRESConfig = self.settings
        seconds = budget.to("second").magnitude if hasattr(budget, "to") else float(budget)
        if problem.bounds is None:
            raise ConfigError(f"{self.name} needs a parameter space or explicit bounds.")
        started = time.perf_counter()
        rng = make_rng(s.seed if seed is None else seed)

        d = problem.d
        scale = problem.scale
        lower, upper = problem.bounds[0] / scale, problem.bounds[1] / scale
        lam = s.population or min(20 * d, 400)
        lam = max(lam, 2)
        mu = max(1, lam // s.parent_ratio)
        tau = 1.0 / np.sqrt(2.0 * np.sqrt(d))
        tau_prime = 1.0 / np.sqrt(2.0 * d)

        if problem.space is not None:
            population = problem.space.sample_uniform(lam, int(rng.integers(2**31))) / scale
        else:
            population = rng.uniform(lower, upper, size=(lam, d))
        sigma = np.tile((upper - lower) / np.sqrt(d), (lam, 1))
        best = {"x": None, "value": -np.inf}
        evaluations = 0
        trace = []

        def assess(pop):
            xs = pop * scale
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    values = np.array(list(pool.map(problem.objective.value, xs)))
            else:
                values = np.array([problem.objective.value(x) for x in xs])
            raw = xs @ problem.constraints.A.T + problem.constraints.b
            feasible = np.max(raw, axis=1, initial=0.0) <= FEAS_TOL
            violation = np.where(feasible, 0.0, (np.maximum(raw, 0.0) ** 2).sum(axis=1))
            for k, x in enumerate(xs):
                if feasible[k] and values[k] > best["value"]:
                    best["x"], best["value"] = x.copy(), float(values[k])
            return values, violation

        values, violation = assess(population)
        evaluations += lam
        generation = 0
        converged = False
        while True:
            if time.perf_counter() - started >= seconds:
                break
            if s.max_generations is not None and generation >= s.max_generations:
                break
            generation += 1

            order = stochastic_rank(-values, violation, s.p_f, rng)
            parents, parent_sigma = population[order[:mu]], sigma[order[:mu]]
            trace.append((best["value"], float(violation[order[0]])))

            spread = parents.max(axis=0) - parents.min(axis=0)
            if mu > 1 and np.all(spread <= s.xtol_rel * np.maximum(np.abs(parents[0]), 1e-10)):
                converged = True
                break

            children = np.empty_like(population)
            child_sigma = np.empty_like(sigma)
            for k in range(lam):
                i = k % mu
                if k < mu - 1:
                    candidate = parents[k] + s.gamma * (parents[0] - parents[k + 1])
                    if np.all((candidate >= lower) & (candidate <= upper)):
                        children[k], child_sigma[k] = candidate, parent_sigma[k]
                        continue
                global_step = tau_prime * rng.standard_normal()
                new_sigma = parent_sigma[i] * np.exp(global_step + tau * rng.standard_normal(d))
                for _ in range(MUTATION_RETRIES):
                    candidate = parents[i] + new_sigma * rng.standard_normal(d)
                    if np.all((candidate >= lower) & (candidate <= upper)):
                        break
                children[k] = np.clip(candidate, lower, upper)
                child_sigma[k] = parent_sigma[i] + s.smoothing * (new_sigma - parent_sigma[i])

            population, sigma = children, child_sigma
            values, violation = assess(population)
            evaluations += lam

        if best["x"] is None:
            logging.warning(f"{self.name} found no feasible individual; repairing the best-ranked one.")
            if problem.space is None:
                raise InfeasibleError(f"{self.name} found no feasible individual.")
            top = stochastic_rank(-values, violation, 0.0, rng)[0]
            best["x"] = problem.space.repair(population[top] * scale)
        logging.info(f"{self.name}: {generation} generations of {lam} (mu={mu}).")
        return self._finish(problem, best["x"], evaluations, started, converged, trace)


def isres_baseline(
    problem: OptProblem,
    budget: Union[pint.Quantity, float],
    seed: Optional[int] = None,
    cfg: Optional[ISRESConfig] = None,
    threads: int = 1,
) -> OptResult:
    return ISRES(settings=cfg).optimize(problem, budget, seed, threads)
