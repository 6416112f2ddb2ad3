"""Independent brute-force oracles used by the test-suite."""

from __future__ import annotations

import itertools
import math

import numpy as np


def brute_force_assignment(c: np.ndarray) -> tuple[int, float, list[tuple[int, int]]]:
    """Exhaustive (max cardinality, min cost, lexicographically smallest) assignment.

    Enumerates every partial injection rows -> cols over finite cells.
    Returns the cardinality, the cost summed in row order and the pairs.
    """
    n_r, n_c = c.shape
    best = None

    def rec(i, used, pairs):
        nonlocal best
        if i == n_r:
            card = len(pairs)
            cost = sum(c[a, b] for a, b in pairs)
            key = (-card, cost, pairs)
            if best is None or key[:2] < best[:2] or (key[:2] == best[:2] and pairs < best[2]):
                best = (-card, cost, list(pairs))
            return
        for j in range(n_c):
            if j not in used and math.isfinite(c[i, j]):
                rec(i + 1, used | {j}, pairs + [(i, j)])
        rec(i + 1, used, pairs)

    rec(0, frozenset(), [])
    return -best[0], best[1], best[2]


def brute_force_dense_min(c: np.ndarray) -> float:
    """Minimum total over all maximum injections of a fully finite matrix."""
    n_r, n_c = c.shape
    if n_r <= n_c:
        return min(sum(c[i, p[i]] for i in range(n_r)) for p in itertools.permutations(range(n_c), n_r))
    return min(
        sum(c[i, j] for i, j in sorted((p[j], j) for j in range(n_c)))
        for p in itertools.permutations(range(n_r), n_c)
    )
