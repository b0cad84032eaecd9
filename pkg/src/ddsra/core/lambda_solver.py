"""Per-(gateway, channel) resource allocation.

For a fixed gateway ``m`` and channel ``j`` the round delay is minimized over
the split points of the gateway's devices, the gateway CPU share given to each
device and the uplink transmit power.  The three blocks are solved in turn
(block coordinate descent), each exactly for the others fixed:

* split points: bisection over the attainable training-time values,
* CPU shares: bisection on the training-time target,
* power: the largest power whose transmit energy fits the leftover budget.

When the descent stalls with the energy budget binding, a joint step
re-splits energy between CPU and uplink and tries single-device split moves.

The loops run in the compiled kernel of :mod:`ddsra.core._kernel`; the
classes here pack one round's constants for it and unpack its results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..env_model import Environment, GatewayPlan, RoundRealization
from . import _kernel as K

INF = math.inf


class PowerSolveError(ArithmeticError):
    """The transmit-power equation could not be bracketed."""


@dataclass(frozen=True)
class ControlParams:
    """Knobs of the per-round optimizer.

    ``partition_check`` selects where the gateway-side constraints are tested
    inside the split-point bisection: ``"exact"`` tests the least-offloading
    split compatible with the target (exact feasibility), ``"lower"`` tests
    the most-offloading one (conservative).  ``assignment`` is ``"sweep"``
    (alternation restarted from every threshold, best kept) or ``"single"``
    (one alternation from the max-min start).  ``joint_energy`` enables the
    stall-escape steps of the descent.
    """

    V: float = 1.0
    psi: float | None = None
    eps_bis: float = 1e-6
    bcd_max_iter: int = 20
    bcd_tol: float = 1e-6
    outer_max_iter: int = 50
    freq_starts: tuple[float, ...] = (1.0,)
    joint_energy: bool = True
    partition_check: str = "exact"
    assignment: str = "sweep"

    def __post_init__(self) -> None:
        if not self.V >= 0 or not math.isfinite(self.V):
            raise ValueError("V must be finite and non-negative")
        if self.psi is not None and not self.psi > 0:
            raise ValueError("psi must be positive")
        if not 0 < self.eps_bis < 1:
            raise ValueError("eps_bis must lie in (0, 1)")
        if self.bcd_max_iter < 1 or self.outer_max_iter < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.partition_check not in ("exact", "lower"):
            raise ValueError(f"unknown partition_check {self.partition_check!r}")
        if self.assignment not in ("sweep", "single"):
            raise ValueError(f"unknown assignment mode {self.assignment!r}")
        if not self.freq_starts or any(not 0 < s <= 1 for s in self.freq_starts):
            raise ValueError("freq_starts must be fractions in (0, 1]")


@dataclass(frozen=True)
class LambdaEntry:
    gateway: int
    channel: int
    value: float
    splits: tuple[int, ...] = ()
    freqs: tuple[float, ...] = ()
    power: float = 0.0
    train_time: float = INF
    up_time: float = INF
    down_time: float = INF
    trace: tuple[float, ...] = field(default=(), compare=False)

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.value)

    def plan(self) -> GatewayPlan:
        if not self.feasible:
            raise ValueError(f"gateway {self.gateway} on channel {self.channel} is infeasible")
        return GatewayPlan(self.gateway, self.channel, self.splits, self.freqs, self.power)


def waterfill(lower: Sequence[float], weights: Sequence[float], total: float) -> list[float]:
    """argmin sum w_i f_i^2 subject to sum f_i = total and f_i >= lower_i.

    If the lower bounds already sum to ``total`` or more they are returned
    unchanged.  Zero-weight entries absorb any excess at no cost.
    """
    out = K.waterfill(np.asarray(lower, dtype=float), np.asarray(weights, dtype=float), float(total))
    return out.tolist()


def power_for_budget(energy: float, bits: float, bandwidth: float, snr_per_watt: float, p_max: float) -> float:
    """Largest P in [0, p_max] with P * uplink_time(P) <= energy, or 0 if none.

    The returned value sits on the feasible side of the root.
    """
    return float(K.power_for_budget(float(energy), float(bits), float(bandwidth), float(snr_per_watt), float(p_max)))


def _energy_gap(budget_rate: float, snr: float, x: float) -> float:
    return budget_rate * math.log2(1.0 + snr * x) - x


def power_root(energy: float, bits: float, bandwidth: float, snr_per_watt: float) -> float:
    """Positive root x of (B/bits)*E*log2(1 + g x) - x = 0 (uncapped).

    Returns 0 when no positive root exists.  Raises :class:`PowerSolveError`
    if a bracket cannot be found in floating-point range.
    """
    if not energy > 0:
        return 0.0
    if math.isinf(energy):
        return INF
    rate = bandwidth * energy / bits
    if rate * snr_per_watt / K.LN2 <= 1.0:
        return 0.0
    x = 1.0
    if _energy_gap(rate, snr_per_watt, x) >= 0:
        while _energy_gap(rate, snr_per_watt, 2 * x) >= 0:
            x *= 2
            if x > 1e300:
                raise PowerSolveError("no sign change below 1e300")
        lo, hi = x, 2 * x
    else:
        while _energy_gap(rate, snr_per_watt, 0.5 * x) < 0:
            x *= 0.5
            if x < 1e-300:
                raise PowerSolveError("no sign change above 1e-300")
        lo, hi = 0.5 * x, x
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _energy_gap(rate, snr_per_watt, mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


class GatewayProblem:
    """Round-specific constants for one gateway, shared across its channels."""

    def __init__(self, env: Environment, m: int, real: RoundRealization) -> None:
        gw = env.gateways[m]
        self.env = env
        self.m = m
        self.members = env.members[m]
        epochs = env.local_epochs
        prefix = np.asarray(env.flops_profile.flops, dtype=float)
        self.depth = len(prefix) - 1
        self.f_min, self.f_max, self.p_max = gw.f_min, gw.f_max, gw.p_max
        self.energy = float(real.gateway_energy[m])
        self.mem_cap = gw.memory_cap
        size = len(self.members)
        kd = np.empty(size)
        rate = np.empty(size)
        ecoef = np.empty(size)
        top_mem = np.empty((size, self.depth + 1))
        upper = np.empty(size, dtype=np.int64)
        for i, n in enumerate(self.members):
            dev = env.devices[n]
            kd[i] = epochs * dev.batch_size
            rate[i] = dev.flops_per_cycle * dev.cpu_freq
            ecoef[i] = kd[i] * gw.capacitance / gw.flops_per_cycle
            mem = np.asarray(env.mem_profiles[n].mem, dtype=float)
            top_mem[i] = mem[-1] - mem
            dev_ecoef = kd[i] * dev.capacitance / dev.flops_per_cycle * dev.cpu_freq ** 2
            budget = float(real.device_energy[n])
            u = -1
            for l in range(self.depth + 1):
                if mem[l] <= dev.memory_cap and dev_ecoef * prefix[l] <= budget:
                    u = l
                else:
                    break  # both costs are non-decreasing in l
            upper[i] = u
        self.size = size
        self.arrays = (prefix, kd, rate, ecoef, top_mem, upper)
        self.upper = upper.tolist()
        base = np.zeros(K.N_CONST)
        base[K.C_PHI] = gw.flops_per_cycle
        base[K.C_FMIN], base[K.C_FMAX], base[K.C_PMAX] = gw.f_min, gw.f_max, gw.p_max
        base[K.C_ENERGY], base[K.C_MEMCAP] = self.energy, gw.memory_cap
        base[K.C_BITS], base[K.C_BW] = env.model_bits, env.channel.bw_up
        self.base = base
        self.static_feasible = bool((upper >= 0).all()) and \
            self.gateway_memory(self.upper) <= self.mem_cap
        self._pb = (*self.arrays, base)

    def device_time(self, i: int, l: int, f: float) -> float:
        return K.device_time(self._pb, i, l, float(f))

    def training_time(self, splits: Sequence[int], freqs: Sequence[float]) -> float:
        return K.training_time(self._pb, _ints(splits), _floats(freqs))

    def training_energy(self, splits: Sequence[int], freqs: Sequence[float]) -> float:
        return K.training_energy(self._pb, _ints(splits), _floats(freqs))

    def gateway_memory(self, splits: Sequence[int]) -> float:
        return K.gateway_memory((*self.arrays, self.base), _ints(splits))

    def channel(self, j: int) -> "ChannelProblem":
        return ChannelProblem(self, j)


def _ints(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64)


def _floats(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class ChannelProblem:
    """A :class:`GatewayProblem` bound to one uplink/downlink channel."""

    def __init__(self, gp: GatewayProblem, j: int) -> None:
        self.gp = gp
        self.j = j
        self.bits = gp.env.model_bits
        self.bw_up = gp.env.channel.bw_up
        self.snr = 0.0
        self.down_time = INF
        self.pb = (*gp.arrays, gp.base.copy())

    def bind(self, env: Environment, real: RoundRealization) -> "ChannelProblem":
        self.snr = float(env.uplink_snr_per_watt(self.gp.m, self.j, real))
        self.down_time = float(env.downlink_time(self.gp.m, self.j, real))
        const = self.pb[-1]
        const[K.C_SNR], const[K.C_DOWN] = self.snr, self.down_time
        return self

    def up_time(self, power: float) -> float:
        return K.up_time(self.pb, float(power))

    def up_energy(self, power: float) -> float:
        return K.up_energy(self.pb, float(power))

    def value(self, splits: Sequence[int], freqs: Sequence[float], power: float) -> float:
        return K.round_value(self.pb, _ints(splits), _floats(freqs), float(power))

    def feasible(self, splits: Sequence[int], freqs: Sequence[float], power: float) -> bool:
        return bool(K.feasible(self.pb, _ints(splits), _floats(freqs), float(power)))


def bisect_partition(cp: ChannelProblem, freqs: Sequence[float], power: float,
                     check: str = "exact") -> list[int] | None:
    """Split points minimizing the training time for fixed CPU shares and power.

    Every attainable per-device time is a candidate target; bisection finds the
    smallest target for which some split vector meets it within all memory and
    energy caps.  Returns ``None`` when even the largest target is infeasible.
    """
    found, splits = K.bisect_partition(cp.pb, _floats(freqs), float(power), check == "exact")
    return splits.tolist() if found else None


def bisect_frequency(cp: ChannelProblem, splits: Sequence[int], power: float,
                     eps: float = 1e-6) -> list[float] | None:
    """CPU shares minimizing the training time for fixed splits and power.

    Bisects on the training-time target; each target fixes the smallest share
    per device, which must fit under ``f_max`` and, after topping up to
    ``f_min`` at least energy, within the energy left after transmission.
    """
    found, freqs = K.bisect_frequency(cp.pb, _ints(splits), float(power), float(eps))
    return freqs.tolist() if found else None


def optimal_power(cp: ChannelProblem, splits: Sequence[int], freqs: Sequence[float]) -> float:
    """Largest feasible power for the energy left after training (0 if none)."""
    return float(K.optimal_power(cp.pb, _ints(splits), _floats(freqs)))


def balance_energy(cp: ChannelProblem, splits: Sequence[int], power: float,
                   eps: float = 1e-6, iters: int = 40, coarse: float = 1e-4) -> tuple[list[float], float] | None:
    """Jointly re-split the energy budget between computation and transmission.

    Golden-section search over the transmit power, with the CPU shares
    re-optimized (to ``coarse`` relative accuracy) for the energy each power
    leaves; the winner is re-solved at ``eps``.
    """
    found, freqs, best = K.balance_energy(cp.pb, _ints(splits), float(power), float(eps), int(iters), float(coarse))
    return (freqs.tolist(), float(best)) if found else None


def solve_channel(cp: ChannelProblem, params: ControlParams) -> LambdaEntry:
    gp = cp.gp
    if not gp.static_feasible:
        return LambdaEntry(gp.m, cp.j, INF)
    val, splits, freqs, power, trace = K.solve(
        cp.pb, np.asarray(params.freq_starts, dtype=float), params.bcd_max_iter, params.bcd_tol,
        params.eps_bis, params.partition_check == "exact", params.joint_energy)
    if not math.isfinite(val):
        return LambdaEntry(gp.m, cp.j, INF)
    return LambdaEntry(
        gateway=gp.m,
        channel=cp.j,
        value=float(val),
        splits=tuple(int(x) for x in splits),
        freqs=tuple(float(x) for x in freqs),
        power=float(power),
        train_time=K.training_time(cp.pb, splits, freqs),
        up_time=K.up_time(cp.pb, power),
        down_time=cp.down_time,
        trace=tuple(float(x) for x in trace),
    )


def solve_lambda(env: Environment, m: int, j: int, real: RoundRealization,
                 params: ControlParams | None = None, problem: GatewayProblem | None = None) -> LambdaEntry:
    """Minimum round delay of gateway ``m`` on channel ``j`` and its arguments.

    Infeasible pairs come back with ``value == inf``.
    """
    params = params or ControlParams()
    gp = problem if problem is not None else GatewayProblem(env, m, real)
    return solve_channel(gp.channel(j).bind(env, real), params)


def solve_all(env: Environment, real: RoundRealization, params: ControlParams | None = None) -> list[list[LambdaEntry]]:
    """Entries for every (m, j), in (m, j) order."""
    params = params or ControlParams()
    out = []
    for m in range(env.n_gateways):
        gp = GatewayProblem(env, m, real)
        out.append([solve_channel(gp.channel(j).bind(env, real), params) for j in range(env.n_channels)])
    return out
