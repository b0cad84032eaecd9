"""Minimum-cost rectangular assignment."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment


def hungarian(cost: Sequence[Sequence[float]] | np.ndarray) -> list[int]:
    """Assign every row to a distinct column at minimum total cost.

    Requires ``rows <= cols``; returns the column chosen for each row.
    """
    a = np.asarray(cost, dtype=float)
    if a.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    n, m = a.shape
    if n > m:
        raise ValueError(f"need rows <= cols, got {n}x{m}")
    if n == 0:
        return []
    if not np.all(np.isfinite(a)):
        raise ValueError("cost matrix entries must be finite")
    rows, cols = linear_sum_assignment(a)
    out = [0] * n
    for r, c in zip(rows, cols):
        out[int(r)] = int(c)
    return out
