"""Channel assignment: min over I of V * max assigned delay - sum of served queues.

The max in the objective is handled through a threshold ``lam``: pairs whose
weighted delay exceeds it cost ``psi`` in a linear assignment whose other
entries reward queue backlog.  Solving the assignment and re-tightening the
threshold to the largest assigned delay alternate until the assignment stops
changing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hungarian import hungarian
from .lambda_solver import ControlParams


@dataclass(frozen=True)
class Assignment:
    matrix: np.ndarray            # I[m, j] in {0, 1}
    objective: float              # V * max assigned delay - sum of served queues
    threshold: float              # final auxiliary threshold
    psi: float
    relaxed: bool                 # fewer than J channels could be filled
    iterations: int

    @property
    def scheduled(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def pairs(self) -> list[tuple[int, int]]:
        return [(int(m), int(j)) for m, j in zip(*np.nonzero(self.matrix))]


def big_m(delays: np.ndarray, queues: np.ndarray, V: float) -> float:
    """Penalty dominating any legitimate objective term."""
    finite = delays[np.isfinite(delays)]
    top = float(finite.max()) if finite.size else 0.0
    return V * top * delays.shape[0] + float(np.sum(queues)) + 1.0


def p3_objective(matrix: np.ndarray, delays: np.ndarray, queues: np.ndarray, V: float) -> float:
    chosen = matrix.astype(bool)
    if not chosen.any():
        return 0.0
    return V * float(delays[chosen].max()) - float(np.sum(queues[:, None] * matrix))


def _key(matrix: np.ndarray) -> tuple:
    return tuple(zip(*np.nonzero(matrix)))


class _Solver:
    def __init__(self, delays: np.ndarray, queues: np.ndarray, V: float, psi: float) -> None:
        self.delays = delays
        self.queues = queues
        self.V = V
        self.psi = psi
        self.finite = np.isfinite(delays)
        self.weighted = np.where(self.finite, V * np.where(self.finite, delays, 0.0), math.inf)
        self.forbid = 4.0 * psi * (delays.shape[1] + 1)
        self.cache: dict[float, np.ndarray] = {}

    def solve(self, lam: float) -> np.ndarray:
        hit = self.cache.get(lam)
        if hit is not None:
            return hit
        M, J = self.delays.shape
        theta = np.where(self.weighted <= lam, -self.queues[:, None], self.psi)
        theta = np.where(self.finite, theta, self.forbid)
        cols = hungarian(theta.T)
        out = np.zeros((M, J), dtype=int)
        for j, m in enumerate(cols):
            if self.finite[m, j]:
                out[m, j] = 1
        self.cache[lam] = out
        return out

    def alternate(self, lam: float, cap: int) -> tuple[np.ndarray, float, int]:
        current = self.solve(lam)
        it = 1
        while it < cap:
            chosen = current.astype(bool)
            if not chosen.any():
                break
            lam = float(self.weighted[chosen].max())
            nxt = self.solve(lam)
            it += 1
            if np.array_equal(nxt, current):
                break
            current = nxt
        return current, lam, it


def assign_channels(delays: np.ndarray, queues: np.ndarray, params: ControlParams) -> Assignment:
    """Pick at most one channel per gateway and one gateway per channel.

    Infeasible pairs carry ``inf`` delay and are never assigned; when fewer
    than ``J`` channels can be filled the result is flagged ``relaxed``.
    """
    delays = np.asarray(delays, dtype=float)
    queues = np.asarray(queues, dtype=float)
    M, J = delays.shape
    if queues.shape != (M,):
        raise ValueError("need one queue per gateway")
    if J > M:
        raise ValueError("more channels than gateways")
    V = params.V
    psi = params.psi if params.psi is not None else big_m(delays, queues, V)
    if psi <= float(np.max(queues, initial=0.0)):
        raise ValueError("psi must exceed every queue backlog")
    solver = _Solver(delays, queues, V, psi)
    feasible_rows = solver.finite.any(axis=1)
    if not feasible_rows.any():
        return Assignment(np.zeros((M, J), dtype=int), 0.0, 0.0, psi, True, 0)

    start = float(np.max(np.min(solver.weighted[feasible_rows], axis=1)))
    starts = [start]
    if params.assignment == "sweep":
        starts += sorted(set(solver.weighted[solver.finite].tolist()))
    best = None
    for lam0 in starts:
        matrix, lam, it = solver.alternate(lam0, params.outer_max_iter)
        rank = (-int(matrix.sum()), p3_objective(matrix, delays, queues, V), _key(matrix))
        if best is None or _better(rank, best[0]):
            best = (rank, matrix, lam, it)
    _, matrix, lam, it = best
    filled = int(matrix.sum())
    return Assignment(matrix, p3_objective(matrix, delays, queues, V), lam, psi, filled < J, it)


def _better(a: tuple, b: tuple, tol: float = 1e-12) -> bool:
    if a[0] != b[0]:
        return a[0] < b[0]
    scale = max(1.0, abs(a[1]), abs(b[1]))
    if abs(a[1] - b[1]) > tol * scale:
        return a[1] < b[1]
    return a[2] < b[2]


def brute_force_assignment(delays: np.ndarray, queues: np.ndarray, V: float) -> tuple[float, np.ndarray]:
    """Exhaustive optimum over all injective channel->gateway maps (small sizes only)."""
    from itertools import permutations

    delays = np.asarray(delays, dtype=float)
    queues = np.asarray(queues, dtype=float)
    M, J = delays.shape
    best_val, best = math.inf, None
    for perm in permutations(range(M), J):
        if not all(math.isfinite(delays[m, j]) for j, m in enumerate(perm)):
            continue
        mat = np.zeros((M, J), dtype=int)
        for j, m in enumerate(perm):
            mat[m, j] = 1
        val = p3_objective(mat, delays, queues, V)
        if val < best_val:
            best_val, best = val, mat
    return best_val, best
