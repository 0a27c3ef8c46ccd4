# GraphicalMTPOptimizer/src/graph.py
"""
Graphical Bonferroni-based multiple test procedures.

A graph is an initial allocation of the familywise level over m hypotheses
plus a transition matrix that says how the level of a rejected hypothesis is
recycled to the others. ``run_procedure`` executes the sequentially rejective
procedure; the constructors and the closure oracle exist to validate it.
"""
import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src import config
from src.errors import GraphError

FEAS_TOL = config.TOLERANCES["graph_feasibility"]
DENOM_TOL = config.TOLERANCES["degenerate_denominator"]
# Exhaustive closure enumeration is 2^m - 1 intersections.
MAX_CLOSURE_SIZE = 12


def _frozen(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise GraphError(f"'{name}' must be {ndim}-dimensional, got shape {arr.shape}.")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """
    A graphical procedure g(alpha, T).

    Attributes:
        alphas (np.ndarray): Initial significance levels, one per hypothesis.
        transitions (np.ndarray): m x m matrix; entry (i, j) is the fraction of
            hypothesis i's level passed to j when i is rejected.

    Both arrays are read-only copies, so a Graph can be shared freely.
    """
    alphas: np.ndarray
    transitions: np.ndarray

    def __post_init__(self):
        alphas = _frozen(self.alphas, 1, "alphas")
        transitions = _frozen(self.transitions, 2, "transitions")
        m = alphas.shape[0]
        if transitions.shape != (m, m):
            raise GraphError(
                f"Transition matrix shape {transitions.shape} does not match {m} alphas."
            )
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "transitions", transitions)

    @property
    def m(self) -> int:
        return self.alphas.shape[0]

    def to_dict(self) -> dict:
        return {"alphas": self.alphas.tolist(), "transitions": self.transitions.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Graph":
        try:
            return cls(alphas=data["alphas"], transitions=data["transitions"])
        except KeyError as e:
            raise GraphError(f"Graph JSON is missing the {e} field.")

    def to_json(self) -> str:
        # json renders floats with repr(), the shortest string that round-trips exactly.
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return np.array_equal(self.alphas, other.alphas) and np.array_equal(self.transitions, other.transitions)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of ``validate_graph``; ``feasible`` holds exactly when ``violations`` is empty."""
    violations: Tuple[Tuple[str, float], ...] = field(default_factory=tuple)

    @property
    def feasible(self) -> bool:
        return len(self.violations) == 0


def validate_graph(g: Graph, alpha_total: float = config.ALPHA_TOTAL) -> ValidationReport:
    """
    Checks the level and transition conditions of a graph.

    Every violated condition is reported with its magnitude (the amount by
    which it is exceeded). Rows may sum to less than one, which covers both
    the relaxed level condition and terminal hypotheses.

    Args:
        g (Graph): The graph to check.
        alpha_total (float): The familywise level.

    Returns:
        ValidationReport: The list of ``(constraint_id, magnitude)`` violations.
    """
    violations: List[Tuple[str, float]] = []
    a, t = g.alphas, g.transitions

    for i, value in enumerate(a):
        if value < -FEAS_TOL:
            violations.append((f"alpha_lower[{i}]", float(-value)))
        if value > alpha_total + FEAS_TOL:
            violations.append((f"alpha_upper[{i}]", float(value - alpha_total)))
    total = float(a.sum())
    if total > alpha_total + FEAS_TOL:
        violations.append(("alpha_total", total - alpha_total))

    for i in range(g.m):
        if t[i, i] != 0.0:
            violations.append((f"diagonal[{i}]", float(abs(t[i, i]))))
        for j in range(g.m):
            if t[i, j] < -FEAS_TOL:
                violations.append((f"transition_lower[{i}][{j}]", float(-t[i, j])))
            elif t[i, j] > 1.0 + FEAS_TOL:
                violations.append((f"transition_upper[{i}][{j}]", float(t[i, j] - 1.0)))
        row_sum = float(t[i].sum())
        if row_sum > 1.0 + FEAS_TOL:
            violations.append((f"row_sum[{i}]", row_sum - 1.0))

    return ValidationReport(tuple(violations))


def remove_hypothesis(g: Graph, j: int, active: Optional[np.ndarray] = None) -> Graph:
    """
    Removes a rejected hypothesis and recycles its level (one update step).

    Surviving levels gain ``alpha_j * t_jl``; surviving transitions become
    ``(t_lk + t_lj t_jk) / (1 - t_lj t_jl)``. When that denominator vanishes
    (the pair exchanged all of its mass) the whole row l is set to zero.
    Removed hypotheses keep their index with zero level and zero row/column.

    Args:
        g (Graph): Graph before the update.
        j (int): Index of the rejected hypothesis.
        active (np.ndarray, optional): Boolean mask of hypotheses still in
            the procedure before this step. Defaults to all hypotheses.

    Returns:
        Graph: The updated graph.
    """
    m = g.m
    if not 0 <= j < m:
        raise GraphError(f"Hypothesis index {j} is outside 0..{m - 1}.")
    survivors = np.ones(m, dtype=bool) if active is None else np.array(active, dtype=bool)
    survivors[j] = False

    a, t = g.alphas, g.transitions
    new_alphas = np.where(survivors, a + a[j] * t[j], 0.0)

    col_j = t[:, j]
    row_j = t[j, :]
    denominators = 1.0 - col_j * row_j
    numerators = t + np.outer(col_j, row_j)
    degenerate = denominators <= DENOM_TOL
    safe = np.where(degenerate, 1.0, denominators)
    new_t = numerators / safe[:, None]
    new_t[degenerate, :] = 0.0

    keep = np.outer(survivors, survivors)
    np.fill_diagonal(keep, False)
    new_t = np.where(keep, new_t, 0.0)
    return Graph(new_alphas, new_t)


def _selection_ratios(alphas: np.ndarray, p: np.ndarray, active: np.ndarray) -> np.ndarray:
    # p/0 is +inf for p > 0 (not testable yet) and 0 for p == 0 (immediately rejectable).
    ratios = np.full(alphas.shape, np.inf)
    positive = alphas > 0
    ratios[positive] = p[positive] / alphas[positive]
    ratios[(~positive) & (p == 0)] = 0.0
    ratios[~active] = np.inf
    return ratios


def _check_pvalues(p, m: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (m,):
        raise GraphError(f"Expected {m} p-values, got shape {p.shape}.")
    if np.isnan(p).any():
        raise GraphError("p-values contain NaN.")
    if (p < 0).any() or (p > 1).any():
        raise GraphError("p-values must lie in [0, 1].")
    return p


def run_procedure(g: Graph, p: Sequence[float], alpha_total: float = config.ALPHA_TOTAL) -> np.ndarray:
    """
    Executes the sequentially rejective graphical procedure on one p-value vector.

    At each step the active hypothesis with the smallest ``p_i / alpha_i``
    (lowest index on ties) is rejected if ``p_i <= alpha_i``, and the graph is
    updated; otherwise the procedure stops.

    Args:
        g (Graph): A feasible graph.
        p (Sequence[float]): Unadjusted p-values, one per hypothesis.
        alpha_total (float): Familywise level used for the feasibility check.

    Returns:
        np.ndarray: Boolean decision vector (True = null hypothesis rejected).

    Raises:
        GraphError: If the graph is infeasible or the p-values are malformed.
    """
    report = validate_graph(g, alpha_total)
    if not report.feasible:
        raise GraphError(f"Graph is infeasible: {list(report.violations)}")
    p = _check_pvalues(p, g.m)

    active = np.ones(g.m, dtype=bool)
    decisions = np.zeros(g.m, dtype=bool)
    current = g
    while active.any():
        ratios = _selection_ratios(current.alphas, p, active)
        j = int(np.argmin(ratios))
        if not active[j] or not p[j] <= current.alphas[j]:
            break
        decisions[j] = True
        current = remove_hypothesis(current, j, active)
        active[j] = False
    return decisions


def holm_graph(m: int, alpha_total: float = config.ALPHA_TOTAL) -> Graph:
    """Holm's procedure: equal levels, equal recycling to every other hypothesis."""
    if m < 2:
        raise GraphError(f"Holm graph needs at least 2 hypotheses, got {m}.")
    transitions = np.full((m, m), 1.0 / (m - 1))
    np.fill_diagonal(transitions, 0.0)
    return Graph(np.full(m, alpha_total / m), transitions)


def fixed_sequence_graph(order: Sequence[int], alpha_total: float = config.ALPHA_TOTAL) -> Graph:
    """
    Fixed-sequence procedure: the full level starts at ``order[0]`` and moves along the order.

    Args:
        order (Sequence[int]): A permutation of 0..m-1.
        alpha_total (float): The familywise level.

    Returns:
        Graph: The fixed-sequence graph.
    """
    order = [int(i) for i in order]
    m = len(order)
    if sorted(order) != list(range(m)):
        raise GraphError(f"{order} is not a permutation of 0..{m - 1}.")
    alphas = np.zeros(m)
    alphas[order[0]] = alpha_total
    transitions = np.zeros((m, m))
    for current, following in zip(order, order[1:]):
        transitions[current, following] = 1.0
    return Graph(alphas, transitions)


def closure_holm_oracle(p: Sequence[float], alpha_total: float = config.ALPHA_TOTAL) -> np.ndarray:
    """
    Closed testing with equal-weight Bonferroni local tests, by full enumeration.

    ``H_i`` is rejected exactly when every intersection hypothesis containing
    ``i`` satisfies ``min_{k in I} p_k * |I| <= alpha_total``. Used as an
    independent check of ``run_procedure(holm_graph(...))``.

    Args:
        p (Sequence[float]): Unadjusted p-values.
        alpha_total (float): The familywise level.

    Returns:
        np.ndarray: Boolean decision vector.

    Raises:
        GraphError: If more than ``MAX_CLOSURE_SIZE`` hypotheses are given.
    """
    p = np.asarray(p, dtype=float)
    m = p.shape[0]
    if m > MAX_CLOSURE_SIZE:
        raise GraphError(f"Closure enumeration refused for m={m} > {MAX_CLOSURE_SIZE}.")
    p = _check_pvalues(p, m)

    decisions = np.ones(m, dtype=bool)
    for size in range(1, m + 1):
        for subset in itertools.combinations(range(m), size):
            members = list(subset)
            if p[members].min() * size > alpha_total:
                decisions[members] = False
    return decisions
