from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..env_model import Environment, GatewayPlan, RoundRealization
from .assignment import Assignment, assign_channels
from .lambda_solver import ControlParams, LambdaEntry, solve_all


@dataclass(frozen=True)
class RoundDecision:
    """Chosen gateways/channels, their resources and the per-pair delay table."""

    assignment: Assignment
    entries: tuple[tuple[LambdaEntry, ...], ...]
    plans: tuple[GatewayPlan, ...]
    objective: float

    @property
    def matrix(self) -> np.ndarray:
        return self.assignment.matrix

    @property
    def scheduled(self) -> np.ndarray:
        return self.assignment.scheduled

    @property
    def delays(self) -> np.ndarray:
        return delay_matrix(self.entries)

    @property
    def latency(self) -> float:
        return max((self.entries[p.gateway][p.channel].value for p in self.plans), default=0.0)


def delay_matrix(entries: Sequence[Sequence[LambdaEntry]]) -> np.ndarray:
    return np.array([[e.value for e in row] for row in entries], dtype=float)


def decide_round(env: Environment, real: RoundRealization, queues: np.ndarray,
                 params: ControlParams) -> RoundDecision:
    """Solve every (gateway, channel) pair, then assign channels."""
    entries = solve_all(env, real, params)
    delays = delay_matrix(entries)
    assignment = assign_channels(delays, queues, params)
    plans = tuple(entries[m][j].plan() for m, j in assignment.pairs())
    return RoundDecision(assignment, tuple(tuple(r) for r in entries), plans, assignment.objective)


def drift_penalty_objective(env: Environment, plans: Sequence[GatewayPlan], real: RoundRealization,
                            queues: np.ndarray, V: float) -> float:
    """V * round latency - sum of backlog of the scheduled gateways, from the physics directly."""
    latency = env.round_latency(plans, real)
    served = sum(float(queues[p.gateway]) for p in plans)
    return V * latency - served
