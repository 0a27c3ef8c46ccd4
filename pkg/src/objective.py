# GraphicalMTPOptimizer/src/objective.py
"""
Weighted adjusted-power objectives estimated on p-value panels.

``decide_all`` runs the graphical procedure on every row of a panel at once
(the update step is applied to all still-running rows in parallel array
operations), and ``empirical_objective`` reduces the resulting decision
matrix. Decisions are the expensive part; the reduction is cheap, so callers
that try several objective specifications reuse the decision matrix.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from src import config
from src.errors import ConfigError, GraphError, NumericalError
from src.graph import DENOM_TOL, Graph, validate_graph
from src.trial_sim import PValuePanel

# Rows per vectorized chunk; bounds the n x m x m working arrays.
CHUNK_ROWS = 16384


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Relative importance of each endpoint; non-negative and summing to one."""
    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 1 or (v < 0).any():
            raise ConfigError("Weights must be a non-negative vector.")
        if abs(v.sum() - 1.0) > config.TOLERANCES["weights_sum"]:
            raise ConfigError(f"Weights must sum to 1, got {v.sum()!r}.")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @classmethod
    def equal(cls, m: int) -> "WeightVector":
        return cls(np.full(m, 1.0 / m))


@dataclass(frozen=True)
class ObjectiveSpec:
    """
    Which objective to estimate.

    Attributes:
        weights (WeightVector): Endpoint weights.
        kind (str): ``"plain"`` counts every rejection; ``"gated"`` counts a
            rejection only when the gate hypothesis is rejected as well.
        gate_index (int, optional): The gate hypothesis (gated only). Its own
            weight must be zero, so its power never enters the objective.
    """
    weights: WeightVector
    kind: str = "plain"
    gate_index: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("plain", "gated"):
            raise ConfigError(f"Unknown objective kind '{self.kind}'.")
        if self.kind == "gated":
            m = self.weights.v.shape[0]
            if self.gate_index is None or not 0 <= self.gate_index < m:
                raise ConfigError(f"Gated objective needs a gate index in 0..{m - 1}.")
            if self.weights.v[self.gate_index] != 0.0:
                raise ConfigError("The gate hypothesis must carry weight 0.")

    @property
    def m(self) -> int:
        return self.weights.v.shape[0]

    @classmethod
    def from_dict(cls, data: Dict) -> "ObjectiveSpec":
        return cls(
            weights=WeightVector(data["weights"]),
            kind=data.get("kind", "plain"),
            gate_index=data.get("gate_index"),
        )

    def to_dict(self) -> Dict:
        return {"kind": self.kind, "weights": self.weights.v.tolist(), "gate_index": self.gate_index}


def _decide_chunk(alphas: np.ndarray, transitions: np.ndarray, p: np.ndarray) -> np.ndarray:
    n, m = p.shape
    a = np.broadcast_to(alphas, (n, m)).copy()
    t = np.broadcast_to(transitions, (n, m, m)).copy()
    active = np.ones((n, m), dtype=bool)
    decisions = np.zeros((n, m), dtype=bool)
    running = np.ones(n, dtype=bool)
    off_diagonal = ~np.eye(m, dtype=bool)

    for _ in range(m):
        ratios = np.full((n, m), np.inf)
        np.divide(p, a, out=ratios, where=a > 0)
        ratios[(a <= 0) & (p == 0)] = 0.0
        ratios[~active] = np.inf
        j = np.argmin(ratios, axis=1)
        rows = np.arange(n)
        running &= active[rows, j] & (p[rows, j] <= a[rows, j])
        idx = np.flatnonzero(running)
        if idx.size == 0:
            break

        jj = j[idx]
        sub = np.arange(idx.size)
        decisions[idx, jj] = True
        active[idx, jj] = False
        alive = active[idx]

        a_sub, t_sub = a[idx], t[idx]
        row_j = t_sub[sub, jj, :]
        col_j = t_sub[sub, :, jj]
        a_new = a_sub + a_sub[sub, jj][:, None] * row_j
        a[idx] = np.where(alive, a_new, 0.0)

        denominators = 1.0 - col_j * row_j
        degenerate = denominators <= DENOM_TOL
        safe = np.where(degenerate, 1.0, denominators)
        t_new = (t_sub + col_j[:, :, None] * row_j[:, None, :]) / safe[:, :, None]
        keep = alive[:, :, None] & alive[:, None, :] & off_diagonal & ~degenerate[:, :, None]
        t[idx] = np.where(keep, t_new, 0.0)
    return decisions


def decide_all(
    g: Graph, panel: PValuePanel, threads: int = 1, alpha_total: float = config.ALPHA_TOTAL
) -> np.ndarray:
    """
    Decision matrix of the graphical procedure on every row of a panel.

    Row j equals ``run_procedure(g, panel.values[j])``. Rows are processed in
    fixed chunks; the result does not depend on ``threads``.

    Args:
        g (Graph): A feasible graph with ``g.m == panel.m``.
        panel (PValuePanel): The p-value panel (may be empty).
        threads (int): Worker threads over chunks.
        alpha_total (float): Overall level the graph must respect.

    Returns:
        np.ndarray: n x m boolean matrix.
    """
    if g.m != panel.m:
        raise GraphError(f"Graph has {g.m} hypotheses but the panel has {panel.m} columns.")
    report = validate_graph(g, alpha_total)
    if not report.feasible:
        raise GraphError(f"Graph is infeasible: {list(report.violations)}")
    n = panel.n
    if n == 0:
        return np.zeros((0, g.m), dtype=bool)

    starts = range(0, n, CHUNK_ROWS)
    work = lambda s: _decide_chunk(g.alphas, g.transitions, panel.values[s:s + CHUNK_ROWS])
    if threads > 1 and n > CHUNK_ROWS:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, starts))
    else:
        chunks = [work(s) for s in starts]
    return np.vstack(chunks)


def empirical_objective(decisions: np.ndarray, spec: ObjectiveSpec) -> float:
    """
    Empirical weighted adjusted power ``(1/n) sum_i v_i sum_j d_ji``.

    For a gated specification ``d_ji`` is replaced by ``d_ji AND d_j,gate``.
    Integer rejection counts are formed before the division, so the value
    does not depend on row order or chunking.

    Args:
        decisions (np.ndarray): n x m decision matrix.
        spec (ObjectiveSpec): Weights and gating.

    Returns:
        float: The estimate, within [0, 1].

    Raises:
        NumericalError: If the matrix has no rows.
    """
    d = np.asarray(decisions, dtype=bool)
    if d.ndim != 2 or d.shape[1] != spec.m:
        raise GraphError(f"Decision matrix shape {d.shape} does not match {spec.m} weights.")
    n = d.shape[0]
    if n == 0:
        raise NumericalError("The objective is undefined on an empty decision matrix.")
    if spec.kind == "gated":
        d = d & d[:, [spec.gate_index]]
    counts = d.sum(axis=0, dtype=np.int64)
    value = float(np.dot(spec.weights.v, counts) / n)
    return min(max(value, 0.0), 1.0)


def standard_error(value: float, n: int) -> float:
    """Binomial-style Monte Carlo standard error ``sqrt(v (1 - v) / n)``."""
    if n <= 0:
        raise NumericalError("Standard error needs at least one replicate.")
    return float(np.sqrt(max(value * (1.0 - value), 0.0) / n))


def evaluate(
    g: Graph, panel: PValuePanel, spec: ObjectiveSpec, threads: int = 1, alpha_total: float = config.ALPHA_TOTAL
) -> float:
    """Convenience: ``empirical_objective(decide_all(g, panel), spec)``."""
    return empirical_objective(decide_all(g, panel, threads, alpha_total), spec)


def fwer_estimate(
    g: Graph, null_panel: PValuePanel, threads: int = 1, alpha_total: float = config.ALPHA_TOTAL
) -> float:
    """
    Fraction of rows with at least one rejection.

    On a global-null panel (all means zero) every rejection is a false one,
    so this estimates the familywise error rate of the graph.
    """
    d = decide_all(g, null_panel, threads, alpha_total)
    if d.shape[0] == 0:
        raise NumericalError("FWER is undefined on an empty panel.")
    return float(np.count_nonzero(d.any(axis=1)) / d.shape[0])


def objective_report_row(
    g: Graph,
    panel: PValuePanel,
    spec: ObjectiveSpec,
    value: Optional[float] = None,
    alpha_total: float = config.ALPHA_TOTAL,
) -> Dict:
    """One objective report record: digests, kind, n, value and its Monte Carlo standard error."""
    if value is None:
        value = evaluate(g, panel, spec, alpha_total=alpha_total)
    row = {
        "scenario_digest": panel.scenario_digest,
        "graph_digest": g.digest(),
        "kind": spec.kind,
        "n": panel.n,
        "value": value,
        "se": standard_error(value, panel.n),
    }
    logging.debug(f"Objective {spec.kind} of graph {row['graph_digest']}: {value:.6f} (se {row['se']:.2e}).")
    return row
