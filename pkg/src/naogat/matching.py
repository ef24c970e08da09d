"""Exact minimum-cost bipartite matching between targets and queries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class CapacityError(ValueError):
    pass


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]  # (query index, target index), sorted by target
    unmatched_queries: list[int]
    total_cost: float
    costs: list[float] = field(default_factory=list)


def solve_assignment(cost: np.ndarray) -> list[int]:
    """Hungarian algorithm with potentials for an ``n x m`` cost matrix, ``n <= m``.

    Returns, for every row, the column assigned to it.  Runs in ``O(n^2 m)``.
    Among equal-cost choices the lowest column index is taken first.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n > m:
        raise CapacityError(f"{n} rows cannot be matched into {m} columns")
    if n == 0:
        return []
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    owner = np.zeros(m + 1, dtype=int)  # owner[j]: row (1-based) holding column j, 0 = free
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            delta, j1 = inf, -1
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta, j1 = minv[j], j
            for j in range(m + 1):
                if used[j]:
                    u[owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    result = [0] * n
    for j in range(1, m + 1):
        if owner[j]:
            result[owner[j] - 1] = j - 1
    return result


def match_cost_matrix(cost: np.ndarray) -> Assignment:
    """Assignment for a ``num_queries x num_targets`` cost matrix."""
    cost = np.asarray(cost, dtype=np.float64)
    num_queries, num_targets = cost.shape
    if num_targets > num_queries:
        raise CapacityError(f"{num_targets} targets exceed {num_queries} queries")
    cols = solve_assignment(cost.T)
    pairs = [(q, t) for t, q in enumerate(cols)]
    costs = [float(cost[q, t]) for q, t in pairs]
    taken = set(cols)
    return Assignment(pairs, [q for q in range(num_queries) if q not in taken], float(sum(costs)), costs)

