"""Constants of the latency/participation trade-off."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..env_model import Environment, uplink_time


@dataclass(frozen=True)
class TradeoffBounds:
    drift_constant: float       # H = 1/2 * sum(Gamma_m + 1)
    min_latency: float          # tau_min
    gap_bound: float            # H / V: excess latency over the optimal policy
    deficit_bound: float        # shortfall of any gateway's participation rate

    def to_dict(self) -> dict:
        return self.__dict__.copy()


def drift_constant(rates: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.asarray(rates, dtype=float) + 1.0))


def min_latency(env: Environment) -> float:
    """Round-delay floor built from the smallest batch, slowest processor and mean channels."""
    K = env.local_epochs
    batch = min(d.batch_size for d in env.devices)
    speed = min(min(d.flops_per_cycle * d.cpu_freq for d in env.devices),
                min(g.flops_per_cycle * g.f_max for g in env.gateways))
    train = K * batch * env.flops_profile.total_flops / speed
    ch = env.channel
    comm = math.inf
    for m, gw in enumerate(env.gateways):
        up = uplink_time(env.model_bits, ch.bw_up, gw.p_max, env.mean_uplink_snr_per_watt(m))
        down = env.model_bits / (ch.bw_down * math.log2(1.0 + env.mean_downlink_snr(m)))
        comm = min(comm, up + down)
    return train + comm


def analysis_bounds(env: Environment, rates: np.ndarray, V: float, T: int,
                    optimal_latency: float | None = None, initial_queues: np.ndarray | None = None) -> TradeoffBounds:
    """Drift constant, latency floor and the O(1/V) / O(sqrt(V)) trade-off bounds.

    ``optimal_latency`` is the time-average latency of the optimal policy; it
    is rarely known, so callers usually pass an observed average as a stand-in.
    Without it the latency floor is used, which drops the V term.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    H = drift_constant(rates)
    tau_min = min_latency(env)
    opt = tau_min if optimal_latency is None else optimal_latency
    q0 = np.zeros(env.n_gateways) if initial_queues is None else np.asarray(initial_queues, dtype=float)
    inner = (H + V * max(opt - tau_min, 0.0)) / T + float(q0 @ q0) / T ** 2
    gap = H / V if V > 0 else math.inf
    return TradeoffBounds(H, tau_min, gap, math.sqrt(inner))
