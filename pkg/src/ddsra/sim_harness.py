"""Round-by-round experiments: scheduling policy, physics, queues and FL training.

Every experiment draws its channel/energy realizations, policy randomness and
FL mini-batches from three independent streams spawned from one seed, so
different policies run with the same seed see the same realizations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import permutations
from typing import Sequence

import numpy as np

from .core import ControlParams, analysis_bounds, decide_round, hungarian, queue_update
from .env_model import Environment, GatewayPlan, RoundRealization
from .fl_kernel import FederatedRun, SyntheticTask, estimate_constants
from .participation import DataStats, participation_plan

log = logging.getLogger(__name__)


class PolicyKind(str, Enum):
    DDSRA = "ddsra"
    RANDOM = "random"
    ROUND_ROBIN = "round_robin"
    LOSS_DRIVEN = "loss_driven"
    DELAY_DRIVEN = "delay_driven"


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind
    control: ControlParams = field(default_factory=ControlParams)
    power_fraction: float = 0.5
    prefer_low_loss: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not 0 < self.power_fraction <= 1:
            raise ValueError("power_fraction must lie in (0, 1]")

    @classmethod
    def ddsra(cls, V: float, **kw) -> "Policy":
        return cls(PolicyKind.DDSRA, ControlParams(V=V, **kw))


@dataclass(frozen=True)
class Scenario:
    env: Environment
    rates: np.ndarray
    stats: DataStats
    task: SyntheticTask | None = None
    step_size: float = 0.01

    @property
    def n_gateways(self) -> int:
        return self.env.n_gateways


def build_scenario(env: Environment, task: SyntheticTask, step_size: float = 0.01,
                   stats: DataStats | None = None, warmup_rounds: int = 20, seed: int = 0) -> Scenario:
    """Scenario with participation rates from given or estimated data statistics.

    Estimation runs ``warmup_rounds`` of FL with uniformly random scheduling
    and keeps the largest observed constants.
    """
    if stats is None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        run = FederatedRun(task, step_size, env.local_epochs, seed=rng)
        for _ in range(warmup_rounds):
            sel = np.zeros(env.n_gateways, dtype=bool)
            sel[rng.choice(env.n_gateways, env.n_channels, replace=False)] = True
            run.step(sel)
        stats = estimate_constants(run.traj)
    plan = participation_plan(env, stats, step_size)
    return Scenario(env, plan.rates, stats, task, step_size)


# -- fixed-resource baselines ---------------------------------------------------

@dataclass(frozen=True)
class FixedAllocation:
    splits: tuple[int, ...]
    freqs: tuple[float, ...]
    power: float


def fixed_allocations(env: Environment, power_fraction: float = 0.5) -> list[FixedAllocation]:
    """Per-gateway fixed resources: median memory-feasible split, equal CPU shares, a fraction of max power.

    Splits are raised one device at a time (largest offload first) until the
    gateway memory fits.
    """
    out = []
    for m, gw in enumerate(env.gateways):
        members = env.members[m]
        splits = []
        for n in members:
            ok = [l for l in range(env.depth + 1) if env.device_memory(n, l) <= env.devices[n].memory_cap]
            if not ok:
                raise ValueError(f"device {n} cannot hold even the empty prefix")
            splits.append(ok[(len(ok) - 1) // 2])
        caps = [max(l for l in range(env.depth + 1) if env.device_memory(n, l) <= env.devices[n].memory_cap)
                for n in members]
        while env.gateway_memory(m, splits) > gw.memory_cap:
            movable = [i for i in range(len(splits)) if splits[i] < caps[i]]
            if not movable:
                raise ValueError(f"gateway {m}: no memory-feasible fixed split")
            i = min(movable, key=lambda i: (splits[i], i))
            splits[i] += 1
        freqs = tuple(gw.f_max / len(members) for _ in members)
        out.append(FixedAllocation(tuple(splits), freqs, power_fraction * gw.p_max))
    return out


def fixed_delays(env: Environment, alloc: Sequence[FixedAllocation], real: RoundRealization) -> np.ndarray:
    M, J = env.n_gateways, env.n_channels
    out = np.empty((M, J))
    for m in range(M):
        a = alloc[m]
        train = env.training_time(m, a.splits, a.freqs)
        for j in range(J):
            out[m, j] = train + env.uplink_time(m, j, a.power, real) + env.downlink_time(m, j, real)
    return out


def bottleneck_assignment(delays: np.ndarray) -> list[int]:
    """Gateway per channel minimizing the largest delay, then the total delay."""
    M, J = delays.shape
    values = np.unique(delays[np.isfinite(delays)])
    if values.size == 0:
        raise ValueError("no finite delays")
    big = float(values.max()) * (M + 1) + 1.0

    def solve(limit: float) -> tuple[bool, list[int]]:
        cost = np.where(delays <= limit, delays, big + np.where(np.isfinite(delays), delays, 0.0))
        cols = hungarian(cost.T)
        return all(delays[m, j] <= limit for j, m in enumerate(cols)), cols

    lo, hi = 0, values.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if solve(values[mid])[0]:
            hi = mid
        else:
            lo = mid + 1
    ok, cols = solve(values[hi])
    if not ok:
        raise ValueError("no assignment with finite delays")
    return cols


def brute_force_bottleneck(delays: np.ndarray) -> tuple[float, float]:
    """(min max, min sum at that max) over all channel->gateway maps."""
    M, J = delays.shape
    best = (math.inf, math.inf)
    for perm in permutations(range(M), J):
        vals = [delays[m, j] for j, m in enumerate(perm)]
        best = min(best, (max(vals), sum(vals)))
    return best


def round_robin_group(t: int, n_gateways: int, n_channels: int) -> list[int]:
    period = math.ceil(n_gateways / n_channels)
    g = t % period
    return sorted({(g * n_channels + i) % n_gateways for i in range(n_channels)})


def loss_ranking(last_loss: np.ndarray, n_channels: int, prefer_low: bool = True) -> list[int]:
    """Gateways ordered by last observed loss; never-observed gateways come first."""
    M = len(last_loss)

    def key(m: int):
        x = last_loss[m]
        if np.isnan(x):
            return (0, 0.0, m)
        return (1, x if prefer_low else -x, m)

    return sorted(sorted(range(M), key=key)[:n_channels])


# -- traces -------------------------------------------------------------------

@dataclass(frozen=True)
class RoundTrace:
    t: int
    selected: tuple[int, ...]
    channels: tuple[int, ...]
    succeeded: tuple[int, ...]
    latency: float
    delays: tuple[tuple[float, ...], ...]
    queues: tuple[float, ...]
    gateway_energy: tuple[float, ...]
    gateway_memory: tuple[float, ...]
    energy_failures: int
    relaxed: bool
    objective: float
    fl_loss: float
    splits: tuple[tuple[int, ...], ...] = ()
    freqs: tuple[tuple[float, ...], ...] = ()
    powers: tuple[float, ...] = ()

    def to_record(self) -> dict:
        return {
            "t": self.t, "selected": list(self.selected), "channels": list(self.channels),
            "succeeded": list(self.succeeded), "latency": self.latency,
            "delays": [list(r) for r in self.delays], "queues": list(self.queues),
            "gateway_energy": list(self.gateway_energy), "gateway_memory": list(self.gateway_memory),
            "energy_failures": self.energy_failures, "relaxed": self.relaxed, "objective": self.objective,
            "fl_loss": self.fl_loss, "splits": [list(s) for s in self.splits],
            "freqs": [list(f) for f in self.freqs], "powers": list(self.powers),
        }


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    real_ss, policy_ss, fl_ss = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(real_ss), np.random.default_rng(policy_ss), np.random.default_rng(fl_ss)


def _assert_feasible(env: Environment, plan: GatewayPlan, real: RoundRealization) -> None:
    status = env.check_plan(plan, real)
    bad = [k for k, ok in status.items() if not ok]
    if bad:
        raise RuntimeError(f"gateway {plan.gateway} plan violates {bad}")


def run_experiment(scenario: Scenario, policy: Policy, rounds: int, seed: int = 0,
                   train: bool = True) -> list[RoundTrace]:
    """Run ``rounds`` rounds; deterministic in (scenario, policy, rounds, seed).

    ``train=False`` skips the FL kernel (latency/participation studies); the
    loss-driven baseline always trains since it needs the losses.
    """
    if rounds < 0:
        raise ValueError("rounds must be non-negative")
    env = scenario.env
    M, J = env.n_gateways, env.n_channels
    real_rng, pol_rng, fl_rng = _streams(seed)
    train = train or policy.kind is PolicyKind.LOSS_DRIVEN
    if train and scenario.task is None:
        raise ValueError("training needs a task in the scenario")
    fl = FederatedRun(scenario.task, scenario.step_size, env.local_epochs, seed=fl_rng, track=False) if train else None
    alloc = None if policy.kind is PolicyKind.DDSRA else fixed_allocations(env, policy.power_fraction)
    queues = np.zeros(M)
    last_loss = np.full(M, np.nan)
    traces: list[RoundTrace] = []
    relaxations = 0
    for t in range(rounds):
        real = env.sample_round(real_rng)
        energy = np.zeros(M)
        memory = np.zeros(M)
        if policy.kind is PolicyKind.DDSRA:
            dec = decide_round(env, real, queues, policy.control)
            plans = dec.plans
            for p in plans:
                _assert_feasible(env, p, real)
                energy[p.gateway] = env.gateway_energy(p, real)
                memory[p.gateway] = env.gateway_memory(p.gateway, p.splits)
            latency = env.round_latency(plans, real)
            selected = tuple(p.gateway for p in plans)
            channels = tuple(p.channel for p in plans)
            succeeded = selected
            delays, relaxed, objective = dec.delays, dec.assignment.relaxed, dec.objective
            relaxations += relaxed
            failures = 0
            detail = (tuple(p.splits for p in plans), tuple(p.freqs for p in plans), tuple(p.power for p in plans))
        else:
            delays = fixed_delays(env, alloc, real)
            if policy.kind is PolicyKind.DELAY_DRIVEN:
                cols = bottleneck_assignment(delays)
                pairs = sorted((m, j) for j, m in enumerate(cols))
            else:
                if policy.kind is PolicyKind.RANDOM or (policy.kind is PolicyKind.LOSS_DRIVEN and t == 0):
                    chosen = sorted(int(m) for m in pol_rng.choice(M, J, replace=False))
                elif policy.kind is PolicyKind.ROUND_ROBIN:
                    chosen = round_robin_group(t, M, J)
                else:
                    chosen = loss_ranking(last_loss, J, policy.prefer_low_loss)
                pairs = [(m, j) for j, m in enumerate(chosen)]
            plans = tuple(GatewayPlan(m, j, alloc[m].splits, alloc[m].freqs, alloc[m].power) for m, j in pairs)
            ok = []
            for p in plans:
                status = env.check_plan(p, real)
                energy[p.gateway] = env.gateway_energy(p, real)
                memory[p.gateway] = env.gateway_memory(p.gateway, p.splits)
                if status["device_energy"] and status["gateway_energy"]:
                    ok.append(p.gateway)
                elif not all(status[k] for k in ("power", "split", "freq", "device_memory", "gateway_memory")):
                    raise RuntimeError(f"fixed allocation of gateway {p.gateway} breaks a static constraint")
            latency = max(delays[m, j] for m, j in pairs)
            selected = tuple(m for m, _ in pairs)
            channels = tuple(j for _, j in pairs)
            succeeded = tuple(ok)
            failures = len(plans) - len(ok)
            relaxed, objective = False, float("nan")
            detail = (tuple(p.splits for p in plans), tuple(p.freqs for p in plans), tuple(p.power for p in plans))
        served = np.zeros(M)
        served[list(selected)] = 1.0
        q_before = queues
        queues = queue_update(queues, served, scenario.rates)
        fl_loss = float("nan")
        if fl is not None:
            part = np.zeros(M, dtype=bool)
            part[list(succeeded)] = True
            rec = fl.step(part)
            fl_loss = rec.global_loss
            for m in succeeded:
                members = scenario.task.members(m)
                b = np.array([scenario.task.batch_sizes[n] for n in members], dtype=float)
                last_loss[m] = float(np.dot(b, rec.local_losses[members]) / b.sum())
        traces.append(RoundTrace(
            t=t, selected=selected, channels=channels, succeeded=succeeded, latency=float(latency),
            delays=tuple(tuple(float(x) for x in row) for row in np.asarray(delays)),
            queues=tuple(float(q) for q in q_before), gateway_energy=tuple(float(e) for e in energy),
            gateway_memory=tuple(float(x) for x in memory), energy_failures=failures, relaxed=bool(relaxed),
            objective=float(objective), fl_loss=fl_loss,
            splits=detail[0], freqs=detail[1], powers=detail[2],
        ))
    if relaxations:
        log.info("%d of %d rounds left channels empty (too few feasible gateways)", relaxations, rounds)
    return traces


# -- summaries ------------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    rounds: int
    mean_latency: float
    cumulative_latency: np.ndarray
    participation: np.ndarray        # scheduled fraction per gateway
    success: np.ndarray              # trained-and-aggregated fraction per gateway
    queues: np.ndarray               # (T, M) backlog at round start
    energy_failures: int
    relaxed_rounds: int
    loss_curve: np.ndarray

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds, "mean_latency": self.mean_latency,
            "participation": self.participation.tolist(), "success": self.success.tolist(),
            "energy_failures": self.energy_failures, "relaxed_rounds": self.relaxed_rounds,
            "final_loss": float(self.loss_curve[-1]) if self.loss_curve.size else None,
        }


def summarize(traces: Sequence[RoundTrace], n_gateways: int) -> Summary:
    T = len(traces)
    lat = np.array([tr.latency for tr in traces])
    sched = np.zeros(n_gateways)
    ok = np.zeros(n_gateways)
    for tr in traces:
        sched[list(tr.selected)] += 1
        ok[list(tr.succeeded)] += 1
    denom = max(T, 1)
    return Summary(
        rounds=T,
        mean_latency=float(lat.mean()) if T else 0.0,
        cumulative_latency=np.cumsum(lat),
        participation=sched / denom,
        success=ok / denom,
        queues=np.array([tr.queues for tr in traces]).reshape(T, n_gateways),
        energy_failures=int(sum(tr.energy_failures for tr in traces)),
        relaxed_rounds=int(sum(tr.relaxed for tr in traces)),
        loss_curve=np.array([tr.fl_loss for tr in traces]),
    )


def participation_check(scenario: Scenario, summary: Summary, V: float) -> dict:
    """Observed participation next to the rate target minus the trade-off deficit bound.

    The unknown optimal time-average latency is replaced by the observed one.
    """
    bounds = analysis_bounds(scenario.env, scenario.rates, V, summary.rounds, optimal_latency=summary.mean_latency)
    floor = scenario.rates - bounds.deficit_bound
    deficit = np.maximum(scenario.rates - summary.participation, 0.0)
    return {
        "bounds": bounds,
        "floor": floor,
        "deficit": deficit,
        "holds": bool(np.all(summary.participation >= floor)),
    }
