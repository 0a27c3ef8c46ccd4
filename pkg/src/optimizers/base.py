# GraphicalMTPOptimizer/src/optimizers/base.py
import logging
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pint

from src import config
from src.errors import ConfigError, InfeasibleError
from src.graph import Graph
from src.graph_space import ConstraintSet, ParamSpace
from src.objective import ObjectiveSpec, evaluate
from src.surrogate import Network
from src.trial_sim import PValuePanel

FEAS_TOL = config.TOLERANCES["optimizer_feasibility"]


class CountingObjective:
    """Base of the objective handles: counts ``value`` calls, also across worker threads."""
    has_gradient = False

    def __init__(self):
        self.evaluations = 0
        self._lock = threading.Lock()

    def _count(self) -> None:
        with self._lock:
            self.evaluations += 1


class SurrogateObjective(CountingObjective):
    """Objective handle backed by a trained network; supplies analytic gradients."""
    has_gradient = True

    def __init__(self, net: Network):
        super().__init__()
        self.net = net

    def value(self, x) -> float:
        self._count()
        return self.net.forward(x)

    def gradient(self, x) -> np.ndarray:
        return self.net.input_gradient(x)


class PanelObjective(CountingObjective):
    """
    The true Monte Carlo objective on one fixed panel.

    The panel never changes between calls, so the handle is a deterministic
    function of the free vector. Points slightly outside the family are
    evaluated at ``space.repair(x)``.
    """
    def __init__(self, space: ParamSpace, panel: PValuePanel, spec: ObjectiveSpec, threads: int = 1):
        if space.m != panel.m or spec.m != panel.m:
            raise ConfigError(f"Family ({space.m}), panel ({panel.m}) and weights ({spec.m}) disagree on m.")
        super().__init__()
        self.space = space
        self.panel = panel
        self.spec = spec
        self.threads = threads

    def value(self, x) -> float:
        self._count()
        graph = self.space.decode(self.space.repair(x))
        return evaluate(graph, self.panel, self.spec, self.threads, self.space.alpha_total)


class FunctionObjective(CountingObjective):
    """Objective handle around plain callables (toy problems and tests)."""

    def __init__(self, fun, grad=None):
        super().__init__()
        self.fun = fun
        self.grad = grad
        self.has_gradient = grad is not None

    def value(self, x) -> float:
        self._count()
        return float(self.fun(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        if self.grad is None:
            raise ConfigError("This objective has no gradient.")
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)


@dataclass
class OptProblem:
    """
    A maximization problem over free vectors.

    Attributes:
        objective: Handle with ``value(x)`` and, when ``has_gradient``, ``gradient(x)``.
        constraints (ConstraintSet): Affine inequalities ``A x + b <= 0``.
        space (ParamSpace, optional): The graph family; results are decoded through it.
        bounds (Tuple[np.ndarray, np.ndarray], optional): Box used for sampling and
            scaling when there is no space.
    """
    objective: Any
    constraints: Optional[ConstraintSet] = None
    space: Optional[ParamSpace] = None
    bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if self.constraints is None:
            if self.space is None:
                raise ConfigError("A problem needs a parameter space or an explicit constraint set.")
            self.constraints = self.space.constraints
        if self.space is not None:
            if self.constraints.dimension != self.space.d:
                raise ConfigError(
                    f"Constraint dimension {self.constraints.dimension} does not match the space ({self.space.d})."
                )
            if self.bounds is None:
                self.bounds = (np.zeros(self.space.d), self.space.upper.copy())
        if self.bounds is not None:
            lower, upper = (np.asarray(b, dtype=float) for b in self.bounds)
            self.bounds = (lower, upper)

    @classmethod
    def for_space(cls, objective, space: ParamSpace) -> "OptProblem":
        return cls(objective, space.constraints, space)

    @property
    def d(self) -> int:
        return self.constraints.dimension

    @property
    def scale(self) -> np.ndarray:
        if self.space is not None:
            return self.space.scale
        if self.bounds is not None:
            width = np.maximum(np.abs(self.bounds[0]), np.abs(self.bounds[1]))
            return np.where(width > 0, width, 1.0)
        return np.ones(self.d)

    def decode(self, x) -> Optional[Graph]:
        return None if self.space is None else self.space.decode(x)


@dataclass
class OptResult:
    """
    Outcome of one optimizer run.

    ``value`` is recomputed from the objective handle at ``x_star``;
    ``elapsed`` is a pint quantity in seconds.
    """
    method: str
    x_star: np.ndarray
    graph: Optional[Graph]
    value: float
    evaluations: int
    elapsed: pint.Quantity
    converged: bool
    trace: List[Tuple[float, float]] = field(default_factory=list)
    start_values: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "x_star": np.asarray(self.x_star).tolist(),
            "graph": None if self.graph is None else self.graph.to_dict(),
            "value": self.value,
            "evaluations": self.evaluations,
            "elapsed_seconds": self.elapsed.to("second").magnitude,
            "converged": self.converged,
            "trace": [list(row) for row in self.trace],
            "start_values": list(self.start_values),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "OptResult":
        return cls(
            method=data["method"],
            x_star=np.array(data["x_star"], dtype=float),
            graph=None if data.get("graph") is None else Graph.from_dict(data["graph"]),
            value=float(data["value"]),
            evaluations=int(data["evaluations"]),
            elapsed=float(data["elapsed_seconds"]) * config.ureg.second,
            converged=bool(data["converged"]),
            trace=[tuple(row) for row in data.get("trace", [])],
            start_values=list(data.get("start_values", [])),
        )


class Optimizer(ABC):
    """
    Base class for the optimizers of the graph family.

    Each optimizer inherits from this class and implements ``optimize``,
    which maximizes the problem's objective subject to its constraints.

    Attributes:
        name (str): Display name used in reports.
        settings: Method settings (a dataclass built from ``config.OPTIMIZER_SETTINGS``).
    """
    def __init__(self, name: str, settings: Any = None):
        self.name = name
        self.settings = settings

    @abstractmethod
    def optimize(self, problem: OptProblem, *args, **kwargs) -> OptResult:
        """
        Maximize the objective of ``problem``.

        Returns:
            OptResult: A feasible maximizer with its recomputed value.
        """
        pass

    def _finish(
        self,
        problem: OptProblem,
        x,
        evaluations: int,
        started: float,
        converged: bool,
        trace=None,
        start_values=None,
    ) -> OptResult:
        x = np.asarray(x, dtype=float)
        violation = problem.constraints.max_violation(x)
        if violation > FEAS_TOL:
            raise InfeasibleError(f"{self.name} ended at an infeasible point (violation {violation:.3e}).")
        value = problem.objective.value(x)
        elapsed = (time.perf_counter() - started) * config.ureg.second
        logging.info(
            f"{self.name}: value {value:.6f} after {evaluations} evaluations in {elapsed.to('second'):.2f~P}"
        )
        return OptResult(
            method=self.name,
            x_star=x,
            graph=problem.decode(x),
            value=value,
            evaluations=evaluations,
            elapsed=elapsed,
            converged=converged,
            trace=list(trace or []),
            start_values=list(start_values or []),
        )
