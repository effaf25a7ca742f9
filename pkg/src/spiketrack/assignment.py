"""Gated minimum-cost bipartite assignment."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


@dataclass
class CostMatrix:
    """``cost[i, j]`` for row i (track) and column j (detection); ``feasible`` masks gated pairs."""

    cost: np.ndarray
    feasible: np.ndarray

    @classmethod
    def from_array(cls, cost, feasible=None) -> "CostMatrix":
        cost = np.asarray(cost, dtype=np.float64)
        if cost.ndim != 2:
            cost = cost.reshape(cost.shape[0] if cost.size else 0, -1)
        if feasible is None:
            feasible = np.isfinite(cost)
        return cls(cost, np.asarray(feasible, dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cost.shape


@dataclass
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]

    def total_cost(self, c: CostMatrix) -> float:
        return float(sum(c.cost[i, j] for i, j in self.matches))


def hungarian_assign(c: CostMatrix | np.ndarray) -> Assignment:
    """Exact assignment: most feasible pairs first, then minimum total cost among those.

    Infeasible entries are never matched. Rectangular inputs are allowed.
    """
    if not isinstance(c, CostMatrix):
        c = CostMatrix.from_array(c)
    n, m = c.shape
    if n == 0 or m == 0 or not c.feasible.any():
        return Assignment([], list(range(n)), list(range(m)))
    finite = np.where(c.feasible, c.cost, 0.0)
    # Any infeasible pick costs more than every all-feasible assignment, so the
    # solver maximizes the number of feasible pairs before minimizing cost.
    big = (2.0 * np.abs(finite).max() + 1.0) * (min(n, m) + 1)
    work = np.where(c.feasible, finite, big)
    rows, cols = linear_sum_assignment(work)
    matches = [(int(i), int(j)) for i, j in zip(rows, cols) if c.feasible[i, j]]
    mr = {i for i, _ in matches}
    mc = {j for _, j in matches}
    return Assignment(matches, [i for i in range(n) if i not in mr], [j for j in range(m) if j not in mc])
