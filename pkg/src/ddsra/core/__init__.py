"""Per-round scheduler: resource allocation per gateway/channel, channel assignment, virtual queues."""

from .analysis import TradeoffBounds, analysis_bounds, drift_constant, min_latency
from .assignment import Assignment, assign_channels, big_m, brute_force_assignment, p3_objective
from .hungarian import hungarian
from .lambda_solver import (
    ChannelProblem,
    ControlParams,
    GatewayProblem,
    LambdaEntry,
    PowerSolveError,
    bisect_frequency,
    bisect_partition,
    optimal_power,
    power_for_budget,
    power_root,
    solve_all,
    solve_lambda,
    waterfill,
)
from .queues import lyapunov, queue_update
from .round import RoundDecision, decide_round, delay_matrix, drift_penalty_objective

__all__ = [
    "Assignment", "ChannelProblem", "ControlParams", "GatewayProblem", "LambdaEntry", "PowerSolveError",
    "RoundDecision", "TradeoffBounds", "analysis_bounds", "assign_channels", "big_m", "bisect_frequency",
    "bisect_partition", "brute_force_assignment", "decide_round", "delay_matrix", "drift_constant",
    "drift_penalty_objective", "hungarian", "lyapunov", "min_latency", "optimal_power", "p3_objective",
    "power_for_budget", "power_root", "queue_update", "solve_all", "solve_lambda", "waterfill",
]
