# GraphicalMTPOptimizer/src/graph_space.py
"""
Constrained parameter spaces of graph families.

A family declares, for the alpha vector and for every transition row, which
entries are fixed, which are free and which single entry (the remainder)
absorbs whatever budget the free entries leave. The free entries, stacked in
a fixed order, form the vector the surrogate and the optimizers work on:
free alphas in index order, then each row's free columns in ascending order.

All constraints on that vector are affine: per-coordinate bounds and one
group-sum inequality per group (the alpha vector, each row).
"""
import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from src import config
from src.errors import ConfigError, GraphError, InfeasibleError
from src.graph import Graph
from src.rng import make_rng

DECODE_TOL = config.TOLERANCES["decode"]
ENCODE_TOL = config.TOLERANCES["encode"]


@dataclass(frozen=True)
class Entry:
    """Status of one alpha or transition entry: ``fixed`` (with value), ``free`` or ``remainder``."""
    kind: str
    value: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "Entry":
        text = str(text).strip()
        if text in ("free", "remainder"):
            return cls(text)
        if text.startswith("fixed:"):
            return cls("fixed", float(text.split(":", 1)[1]))
        raise ConfigError(f"Unknown entry status '{text}'.")

    def __str__(self) -> str:
        return f"fixed:{self.value!r}" if self.kind == "fixed" else self.kind


@dataclass(frozen=True)
class Group:
    """A budget group: its free coordinates, its limit and its remainder position (if any)."""
    name: str
    coords: Tuple[int, ...]
    limit: float
    remainder: Optional[int]


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """
    Affine inequalities ``A x + b <= 0``.

    Attributes:
        A (np.ndarray): K x d coefficient matrix.
        b (np.ndarray): K offsets.
        names (Tuple[str, ...]): One label per constraint.
    """
    A: np.ndarray
    b: np.ndarray
    names: Tuple[str, ...] = ()

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.shape[0]:
            raise ConfigError(f"Constraint matrix has {A.shape[0]} rows but {b.shape[0]} offsets.")
        names = tuple(self.names) or tuple(f"c[{k}]" for k in range(b.shape[0]))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "names", names)

    @classmethod
    def empty(cls, d: int) -> "ConstraintSet":
        return cls(np.zeros((0, d)), np.zeros(0), ())

    @property
    def dimension(self) -> int:
        return self.A.shape[1]

    def values(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float) + self.b

    def max_violation(self, x) -> float:
        if self.b.shape[0] == 0:
            return 0.0
        return float(max(self.values(x).max(), 0.0))

    def is_feasible(self, x, tol: float = config.TOLERANCES["graph_feasibility"]) -> bool:
        return self.max_violation(x) <= tol

    def rescaled(self, scale: np.ndarray) -> "ConstraintSet":
        """Constraints on ``z = x / scale`` with each row normalised by its largest coefficient."""
        A = self.A * scale[None, :]
        norms = np.abs(A).max(axis=1) if A.size else np.ones(0)
        norms = np.where(norms > 0, norms, 1.0)
        return ConstraintSet(A / norms[:, None], self.b / norms, self.names)


class ParamSpace:
    """
    Free-parameter space of a graph family.

    Built by ``build_space`` from a family description; see the module
    docstring for the coordinate order. Positions are flat indices into the
    stacked vector ``(alphas, transitions.ravel())`` of length ``m + m*m``.
    """

    def __init__(self, m: int, alpha_total: float, alpha_entries: Sequence[Entry], row_entries: Sequence[Sequence[Entry]]):
        self.m = int(m)
        self.alpha_total = float(alpha_total)
        self.alpha_entries = tuple(alpha_entries)
        self.row_entries = tuple(tuple(row) for row in row_entries)

        size = self.m + self.m * self.m
        self.fixed_theta = np.zeros(size)
        free: List[int] = []
        labels: List[str] = []
        groups: List[Group] = []

        def position(i: Optional[int], j: int) -> int:
            return j if i is None else self.m + i * self.m + j

        specs = [("alpha", None, self.alpha_entries, self.alpha_total)]
        specs += [(f"row[{i}]", i, row, 1.0) for i, row in enumerate(self.row_entries)]
        for name, row, entries, total in specs:
            coords, remainder, fixed_sum = [], None, 0.0
            for j, entry in enumerate(entries):
                pos = position(row, j)
                if entry.kind == "fixed":
                    if entry.value < 0.0 or entry.value > total:
                        raise ConfigError(f"{name} entry {j} fixed at {entry.value} outside [0, {total}].")
                    self.fixed_theta[pos] = entry.value
                    fixed_sum += entry.value
                elif entry.kind == "free":
                    coords.append(len(free))
                    free.append(pos)
                    labels.append(f"alpha[{j}]" if row is None else f"T[{row},{j}]")
                else:
                    remainder = pos
            limit = total - fixed_sum
            if limit < -config.TOLERANCES["graph_feasibility"]:
                raise ConfigError(f"Fixed entries of {name} sum to {fixed_sum}, above {total}.")
            groups.append(Group(name, tuple(coords), max(limit, 0.0), remainder))

        if not free:
            raise ConfigError("The family has no free entries (dimension 0).")
        self.free_positions = np.array(free, dtype=int)
        self.labels = tuple(labels)
        self.groups = tuple(groups)
        self.upper = np.zeros(len(free))
        for group in self.groups:
            self.upper[list(group.coords)] = group.limit
        self.constraints = self._build_constraints()

    @property
    def d(self) -> int:
        return self.free_positions.shape[0]

    @property
    def scale(self) -> np.ndarray:
        """Per-coordinate scale used by the optimizers (the upper bound, or 1 when it is 0)."""
        return np.where(self.upper > 0, self.upper, 1.0)

    def _build_constraints(self) -> ConstraintSet:
        d = self.d
        rows, offsets, names = [], [], []
        for k in range(d):
            lower = np.zeros(d)
            lower[k] = -1.0
            rows.append(lower)
            offsets.append(0.0)
            names.append(f"lower:{self.labels[k]}")
        for k in range(d):
            upper = np.zeros(d)
            upper[k] = 1.0
            rows.append(upper)
            offsets.append(-self.upper[k])
            names.append(f"upper:{self.labels[k]}")
        for group in self.groups:
            if not group.coords:
                continue
            total = np.zeros(d)
            total[list(group.coords)] = 1.0
            rows.append(total)
            offsets.append(-group.limit)
            names.append(f"sum:{group.name}")
        return ConstraintSet(np.array(rows), np.array(offsets), tuple(names))

    # ------------------------------------------------------------------
    # encoding
    # ------------------------------------------------------------------
    def _label(self, pos: int) -> str:
        if pos < self.m:
            return f"alpha[{pos}]"
        i, j = divmod(pos - self.m, self.m)
        return f"T[{i},{j}]"

    def decode(self, x) -> Graph:
        """
        Graph for a free vector; remainder entries receive ``limit - group sum``.

        A group over its limit by no more than 1e-9 has its free entries scaled
        down onto the limit, so the decoded graph always passes ``validate_graph``.

        Raises:
            InfeasibleError: If a coordinate or a group sum exceeds its bound by more than 1e-9.
        """
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise GraphError(f"Free vector must have {self.d} entries, got shape {x.shape}.")
        if np.isnan(x).any():
            raise InfeasibleError("Free vector contains NaN.")
        low = np.flatnonzero(x < -DECODE_TOL)
        high = np.flatnonzero(x > self.upper + DECODE_TOL)
        if low.size or high.size:
            k = int(low[0]) if low.size else int(high[0])
            raise InfeasibleError(f"Coordinate {self.labels[k]} = {x[k]!r} is outside [0, {self.upper[k]}].")
        x = np.clip(x, 0.0, self.upper)

        theta = self.fixed_theta.copy()
        theta[self.free_positions] = x
        for group in self.groups:
            idx = list(group.coords)
            used = float(x[idx].sum()) if idx else 0.0
            if used > group.limit + DECODE_TOL:
                raise InfeasibleError(f"Group {group.name} exceeds its limit {group.limit} by {used - group.limit:.3e}.")
            if used > group.limit:
                x[idx] *= group.limit / used
                theta[self.free_positions[idx]] = x[idx]
                used = group.limit
            if group.remainder is not None:
                theta[group.remainder] = max(group.limit - used, 0.0)
        return Graph(theta[:self.m], theta[self.m:].reshape(self.m, self.m))

    def encode(self, g: Graph) -> np.ndarray:
        """
        Free vector of a graph belonging to this family.

        Raises:
            GraphError: If the graph conflicts with a fixed or remainder entry (the entry is named).
        """
        if g.m != self.m:
            raise GraphError(f"Graph has {g.m} hypotheses, the family has {self.m}.")
        theta = np.concatenate([g.alphas, g.transitions.ravel()])
        free_mask = np.zeros(theta.shape[0], dtype=bool)
        free_mask[self.free_positions] = True
        remainders = {group.remainder for group in self.groups if group.remainder is not None}
        for pos in np.flatnonzero(~free_mask):
            if pos in remainders:
                continue
            if abs(theta[pos] - self.fixed_theta[pos]) > ENCODE_TOL:
                raise GraphError(
                    f"Entry {self._label(pos)} = {theta[pos]!r} conflicts with fixed value {self.fixed_theta[pos]!r}."
                )
        x = theta[self.free_positions].copy()
        for group in self.groups:
            used = float(x[list(group.coords)].sum()) if group.coords else 0.0
            if group.remainder is not None:
                expected = group.limit - used
                if abs(theta[group.remainder] - expected) > ENCODE_TOL:
                    raise GraphError(
                        f"Remainder entry {self._label(group.remainder)} = {theta[group.remainder]!r}, "
                        f"expected {expected!r}."
                    )
            elif used > group.limit + ENCODE_TOL:
                raise GraphError(f"Group {group.name} sums to {used}, above its limit {group.limit}.")
        return x

    # ------------------------------------------------------------------
    # constraints and sampling
    # ------------------------------------------------------------------
    def constraint_values(self, x) -> np.ndarray:
        return self.constraints.values(x)

    def repair(self, x) -> np.ndarray:
        """Nearby feasible point: clip to the bounds, then shrink any over-full group proportionally."""
        z = np.clip(np.asarray(x, dtype=float), 0.0, self.upper)
        for group in self.groups:
            if not group.coords:
                continue
            idx = list(group.coords)
            total = z[idx].sum()
            if total > group.limit:
                z[idx] *= group.limit / total
        return z

    def sample_uniform(self, count: int, seed: int) -> np.ndarray:
        """
        Random feasible free vectors, uniform on each group's simplex.

        Each group with k free coordinates draws a flat Dirichlet over k + 1
        components (the extra one is the remainder, or the unused slack when
        the group has no remainder) scaled by the group limit.

        Args:
            count (int): Number of vectors B.
            seed (int): Seed; identical seeds give identical samples.

        Returns:
            np.ndarray: B x d matrix, one free vector per row.
        """
        if count < 1:
            raise ConfigError(f"Sample count must be at least 1, got {count}.")
        rng = make_rng(seed)
        samples = np.zeros((count, self.d))
        for group in self.groups:
            k = len(group.coords)
            if k == 0:
                continue
            weights = stats.dirichlet.rvs(np.ones(k + 1), size=count, random_state=rng)
            samples[:, list(group.coords)] = group.limit * weights[:, :k]
        return samples

    def to_dict(self) -> Dict[str, Any]:
        rows = []
        for i, row in enumerate(self.row_entries):
            spec: Dict[str, Any] = {"free": [], "fixed": {}}
            for j, entry in enumerate(row):
                if j == i:
                    continue
                if entry.kind == "free":
                    spec["free"].append(j)
                elif entry.kind == "remainder":
                    spec["remainder"] = j
                elif entry.value != 0.0:
                    spec["fixed"][str(j)] = entry.value
            rows.append(spec)
        return {
            "m": self.m,
            "alpha_total": self.alpha_total,
            "alpha": [str(entry) for entry in self.alpha_entries],
            "rows": rows,
        }

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def fully_free_family(m: int, alpha_total: float = config.ALPHA_TOTAL) -> Dict[str, Any]:
    """Family description where every alpha and off-diagonal transition is free (last entries as remainders)."""
    rows = []
    for i in range(m):
        targets = [j for j in range(m) if j != i]
        rows.append({"free": targets[:-1], "remainder": targets[-1]})
    return {"m": m, "alpha_total": alpha_total, "alpha": ["free"] * (m - 1) + ["remainder"], "rows": rows}


def _parse_row(i: int, m: int, spec: Dict[str, Any]) -> List[Entry]:
    entries = [Entry("fixed", 0.0) for _ in range(m)]
    seen = set()

    def claim(j, what):
        j = int(j)
        if not 0 <= j < m:
            raise ConfigError(f"Row {i}: {what} column {j} is outside 0..{m - 1}.")
        if j == i:
            raise ConfigError(f"Row {i}: the diagonal entry cannot be {what}.")
        if j in seen:
            raise ConfigError(f"Row {i}: column {j} is declared twice.")
        seen.add(j)
        return j

    for j in spec.get("free", []):
        entries[claim(j, "free")] = Entry("free")
    for j, value in spec.get("fixed", {}).items():
        entries[claim(j, "fixed")] = Entry("fixed", float(value))
    remainder = spec.get("remainder")
    if isinstance(remainder, (list, tuple)):
        if len(remainder) > 1:
            raise ConfigError(f"Row {i} declares {len(remainder)} remainders; at most one is allowed.")
        remainder = remainder[0] if remainder else None
    if remainder is not None:
        entries[claim(remainder, "remainder")] = Entry("remainder")
    return entries


def build_space(family: Dict[str, Any]):
    """
    Builds the parameter space and its constraint set from a family description.

    The description is ``{"m", "alpha_total", "alpha": [...], "rows": [...]}``;
    ``alpha`` lists one status per hypothesis (``"free"``, ``"fixed:<v>"``,
    ``"remainder"``) and each row is ``{"free": [...], "fixed": {j: v},
    "remainder": j}``. Omitted ``alpha``/``rows`` default to the fully free
    family; unlisted transition entries are fixed at 0.

    Args:
        family (Dict[str, Any]): The family description.

    Returns:
        Tuple[ParamSpace, ConstraintSet]: The space and its constraints.

    Raises:
        ConfigError: On inconsistent masks (two remainders, bad indices, d = 0, ...).
    """
    try:
        m = int(family["m"])
    except (KeyError, TypeError, ValueError):
        raise ConfigError("Family description needs an integer 'm'.")
    if m < 1:
        raise ConfigError(f"Family needs at least one hypothesis, got m={m}.")
    alpha_total = float(family.get("alpha_total", config.ALPHA_TOTAL))
    defaults = fully_free_family(m, alpha_total)
    alpha_spec = family.get("alpha", defaults["alpha"])
    rows_spec = family.get("rows", defaults["rows"])

    if len(alpha_spec) != m:
        raise ConfigError(f"'alpha' lists {len(alpha_spec)} statuses for m={m}.")
    alpha_entries = [Entry.parse(text) for text in alpha_spec]
    if sum(entry.kind == "remainder" for entry in alpha_entries) > 1:
        raise ConfigError("At most one alpha entry can be the remainder.")
    if len(rows_spec) != m:
        raise ConfigError(f"'rows' lists {len(rows_spec)} rows for m={m}.")
    row_entries = [_parse_row(i, m, copy.deepcopy(spec)) for i, spec in enumerate(rows_spec)]

    space = ParamSpace(m, alpha_total, alpha_entries, row_entries)
    return space, space.constraints


def decode(x, space: ParamSpace) -> Graph:
    return space.decode(x)


def encode(g: Graph, space: ParamSpace) -> np.ndarray:
    return space.encode(g)


def sample_uniform(space: ParamSpace, count: int, seed: int) -> np.ndarray:
    return space.sample_uniform(count, seed)


def constraint_values(x, space: ParamSpace) -> np.ndarray:
    return space.constraint_values(x)
