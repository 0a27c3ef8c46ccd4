# GraphicalMTPOptimizer/src/optimizers/local_refine.py
"""Derivative-free local refinement with SciPy's COBYLA."""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from src import config
from src.errors import ConfigError, InfeasibleError
from src.optimizers.base import FEAS_TOL, OptProblem, OptResult, Optimizer


@dataclass(frozen=True)
class RefineConfig:
    xtol_rel: float = 1e-4
    max_evaluations: int = 10000
    initial_radius: float = 0.05

    def __post_init__(self):
        if self.xtol_rel <= 0 or self.initial_radius <= 0:
            raise ConfigError("Refinement tolerance and initial radius must be positive.")
        if self.max_evaluations < 1:
            raise ConfigError(f"max_evaluations must be at least 1, got {self.max_evaluations}.")


@dataclass
class _RefineOutcome:
    x: np.ndarray
    value: float
    evaluations: int
    converged: bool
    trace: List[Tuple[float, float]]


class LocalRefiner(Optimizer):
    """
    COBYLA on the scaled free vector.

    Every evaluated point is checked against the original constraints and the
    best feasible one is kept, so the result never falls below the start.
    Several starts may be given; each is refined separately and the best end
    point wins (highest value, then lowest start index).
    """

    def __init__(self, name: str = "local_refine", settings: Optional[RefineConfig] = None):
        super().__init__(name, settings or RefineConfig(**config.OPTIMIZER_SETTINGS["LOCAL_REFINE"]))

    def _refine(self, problem: OptProblem, x0: np.ndarray) -> _RefineOutcome:
        s: RefineConfig = self.settings
        scale = problem.scale
        cs = problem.constraints.rescaled(scale)
        best = {"x": x0.copy(), "value": problem.objective.value(x0), "evaluations": 1}
        start_value = best["value"]
        trace = [(start_value, 0.0)]

        def negated(z):
            x = z * scale
            value = problem.objective.value(x)
            best["evaluations"] += 1
            violation = problem.constraints.max_violation(x)
            if violation <= FEAS_TOL and value > best["value"]:
                best["x"], best["value"] = x.copy(), value
                trace.append((value, violation))
            return -value

        constraints = []
        if cs.b.shape[0]:
            constraints.append({"type": "ineq", "fun": lambda z: -cs.values(z)})
        outcome = minimize(
            negated,
            x0 / scale,
            method="COBYLA",
            constraints=constraints,
            tol=s.xtol_rel,
            options={"rhobeg": s.initial_radius, "maxiter": s.max_evaluations},
        )
        if best["value"] <= start_value:
            logging.warning(f"{self.name} found no improvement over its start ({outcome.message}).")
        return _RefineOutcome(best["x"], best["value"], best["evaluations"], bool(outcome.success), trace)

    def optimize(self, problem: OptProblem, x0=None, starts: Optional[Sequence] = None, threads: int = 1) -> OptResult:
        """
        Refines ``x0``, or each of ``starts``, and returns the best feasible point found.

        Raises:
            ConfigError: If neither a start nor a list of starts is given.
            InfeasibleError: If a start violates the constraints.
        """
        if starts is None:
            if x0 is None:
                raise ConfigError(f"{self.name} needs a starting point.")
            starts = [x0]
        starts = [np.asarray(x, dtype=float) for x in starts]
        if not starts:
            raise ConfigError(f"{self.name} needs a starting point.")
        for k, x in enumerate(starts):
            violation = problem.constraints.max_violation(x)
            if violation > FEAS_TOL:
                raise InfeasibleError(f"Refinement start {k} is infeasible (violation {violation:.3e}).")

        started = time.perf_counter()
        refine = lambda x: self._refine(problem, x)
        if threads > 1 and len(starts) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(refine, starts))
        else:
            outcomes = [refine(x) for x in starts]

        best = max(range(len(outcomes)), key=lambda i: (outcomes[i].value, -i))
        return self._finish(
            problem,
            outcomes[best].x,
            evaluations=sum(o.evaluations for o in outcomes),
            started=started,
            converged=outcomes[best].converged,
            trace=outcomes[best].trace,
            start_values=[o.value for o in outcomes] if len(outcomes) > 1 else None,
        )


def local_refine(problem: OptProblem, x0, cfg: Optional[RefineConfig] = None) -> OptResult:
    return LocalRefiner(settings=cfg).optimize(problem, x0)
