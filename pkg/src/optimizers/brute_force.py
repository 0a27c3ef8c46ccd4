# GraphicalMTPOptimizer/src/optimizers/brute_force.py
import time
from typing import Optional

import numpy as np

from src import config
from src.errors import ConfigError
from src.graph_space import ParamSpace
from src.optimizers.base import OptResult, Optimizer
from src.surrogate import Dataset


class BruteForce(Optimizer):
    """
    The best sampled graph: the dataset row with the largest objective value.

    Ties go to the lowest row index. The value is the stored dataset value;
    no objective is evaluated.
    """

    def __init__(self, name: str = "brute_force", settings=None):
        super().__init__(name, settings)

    def optimize(self, problem=None, dataset: Optional[Dataset] = None, space: Optional[ParamSpace] = None) -> OptResult:
        if dataset is None or dataset.B == 0:
            raise ConfigError("Brute force needs a non-empty dataset.")
        if space is None and problem is not None:
            space = problem.space
        started = time.perf_counter()
        row = int(np.argmax(dataset.Y))
        x = dataset.X[row].copy()
        return OptResult(
            method=self.name,
            x_star=x,
            graph=None if space is None else space.decode(x),
            value=float(dataset.Y[row]),
            evaluations=0,
            elapsed=(time.perf_counter() - started) * config.ureg.second,
            converged=True,
        )


def brute_force_baseline(ds: Dataset, space: Optional[ParamSpace] = None) -> OptResult:
    return BruteForce().optimize(dataset=ds, space=space)
