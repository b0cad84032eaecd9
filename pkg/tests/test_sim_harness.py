import json
from dataclasses import replace
from itertools import permutations

import numpy as np
import pytest

from ddsra.env_model import ChannelParams, Environment, default_environment
from ddsra.fl_kernel import task_for_environment
from ddsra.participation import DataStats
from ddsra.sim_harness import (
    Policy,
    PolicyKind,
    bottleneck_assignment,
    brute_force_bottleneck,
    build_scenario,
    fixed_allocations,
    loss_ranking,
    participation_check,
    round_robin_group,
    run_experiment,
    summarize,
)


@pytest.fixture(scope="module")
def scenario():
    env = default_environment(0)
    return build_scenario(env, task_for_environment(env, seed=0), seed=0)


def test_zero_rounds(scenario):
    assert run_experiment(scenario, Policy.ddsra(1.0), 0) == []
    with pytest.raises(ValueError):
        run_experiment(scenario, Policy.ddsra(1.0), -1)


def test_all_gateways_scheduled_when_channels_suffice():
    base = default_environment(0)
    env = Environment(base.devices[:6], base.gateways[:3], ChannelParams(n_channels=3), base.network, 5)
    sc = build_scenario(env, task_for_environment(env, seed=1), seed=1)
    traces = run_experiment(sc, Policy.ddsra(0.01), 30, seed=1, train=False)
    s = summarize(traces, 3)
    assert np.all(s.participation == 1.0)
    assert np.all(s.participation >= sc.rates)


def test_round_robin_cycle():
    groups = [round_robin_group(t, 6, 3) for t in range(5)]
    assert groups == [[0, 1, 2], [3, 4, 5], [0, 1, 2], [3, 4, 5], [0, 1, 2]]
    # an uneven split still covers everybody
    assert set().union(*(round_robin_group(t, 5, 2) for t in range(3))) == set(range(5))


def test_loss_ranking():
    losses = np.array([0.5, 0.1, 0.9, 0.3, 0.7, 0.2])
    assert loss_ranking(losses, 3) == [1, 3, 5]
    assert loss_ranking(losses, 3, prefer_low=False) == [0, 2, 4]
    # gateways never heard from are tried first
    assert loss_ranking(np.array([0.1, np.nan, 0.3]), 2) == [0, 1]


def test_delay_driven_matches_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(200):
        M = int(rng.integers(2, 6))
        J = int(rng.integers(1, min(M, 3) + 1))
        delays = rng.integers(1, 12, size=(M, J)).astype(float)
        cols = bottleneck_assignment(delays)
        vals = [delays[m, j] for j, m in enumerate(cols)]
        assert len(set(cols)) == J
        assert (max(vals), sum(vals)) == brute_force_bottleneck(delays)
    delays = np.array([[4.0, 1.0], [2.0, 5.0], [3.0, 3.0]])
    cols = bottleneck_assignment(delays)
    best = min(max(delays[m, j] for j, m in enumerate(p)) for p in permutations(range(3), 2))
    assert max(delays[m, j] for j, m in enumerate(cols)) == best == 2.0


def test_fixed_allocations_are_statically_feasible(scenario):
    env = scenario.env
    for m, a in enumerate(fixed_allocations(env)):
        assert sum(a.freqs) == pytest.approx(env.gateways[m].f_max)
        assert a.power == pytest.approx(0.5 * env.gateways[m].p_max)
        assert all(0 <= l <= env.depth for l in a.splits)
        assert env.gateway_memory(m, a.splits) <= env.gateways[m].memory_cap
        assert all(env.device_memory(n, l) <= env.devices[n].memory_cap for n, l in zip(env.members[m], a.splits))


@pytest.mark.parametrize("kind", [k for k in PolicyKind if k is not PolicyKind.DDSRA])
def test_baselines_choose_j_gateways_and_count_failures(scenario, kind):
    traces = run_experiment(scenario, Policy(kind), 60, seed=2)
    for tr in traces:
        assert len(tr.selected) == len(set(tr.selected)) == 3
        assert sorted(tr.channels) == [0, 1, 2]
        assert set(tr.succeeded) <= set(tr.selected)
        assert tr.energy_failures == len(tr.selected) - len(tr.succeeded)


def test_energy_shortage_fails_baseline_training():
    base = default_environment(0)
    # a twentieth of the usual harvest cannot pay for the fixed allocation
    starved = Environment(base.devices, [replace(g, energy_cap=1.5) for g in base.gateways], base.channel,
                          base.network, base.local_epochs)
    sc = build_scenario(starved, task_for_environment(starved, seed=0), seed=0)
    traces = run_experiment(sc, Policy(PolicyKind.RANDOM), 40, seed=0)
    s = summarize(traces, 6)
    assert s.energy_failures > 0
    assert np.all(s.success <= s.participation)
    assert np.any(s.success < s.participation)
    failed = [tr for tr in traces if not tr.succeeded]
    for tr in failed:
        assert tr.latency > 0


def test_ddsra_rounds_are_feasible_and_recorded(scenario):
    traces = run_experiment(scenario, Policy.ddsra(10.0), 40, seed=3)
    env = scenario.env
    for tr in traces:
        assert len(tr.selected) == 3 and tr.energy_failures == 0 and not tr.relaxed
        assert tr.latency == pytest.approx(max(tr.delays[m][j] for m, j in zip(tr.selected, tr.channels)))
        for m in tr.selected:
            assert tr.gateway_memory[m] <= env.gateways[m].memory_cap
    assert np.all(np.array([tr.queues for tr in traces]) >= 0)


def test_experiments_are_deterministic(scenario):
    for policy in (Policy.ddsra(1000.0), Policy(PolicyKind.RANDOM), Policy(PolicyKind.LOSS_DRIVEN)):
        a = run_experiment(scenario, policy, 25, seed=5)
        b = run_experiment(scenario, policy, 25, seed=5)
        # baseline objectives are NaN, so compare serialized records
        assert [json.dumps(t.to_record()) for t in a] == [json.dumps(t.to_record()) for t in b]


def test_policies_share_realizations(scenario):
    a = run_experiment(scenario, Policy(PolicyKind.ROUND_ROBIN), 10, seed=4, train=False)
    b = run_experiment(scenario, Policy(PolicyKind.DELAY_DRIVEN), 10, seed=4, train=False)
    assert [t.delays for t in a] == [t.delays for t in b]


def test_summary(scenario):
    traces = run_experiment(scenario, Policy(PolicyKind.ROUND_ROBIN), 10, seed=1)
    s = summarize(traces, 6)
    assert s.rounds == 10
    assert s.mean_latency == pytest.approx(np.mean([t.latency for t in traces]))
    assert np.allclose(s.participation, 0.5)
    assert s.cumulative_latency[-1] == pytest.approx(sum(t.latency for t in traces))
    assert s.queues.shape == (10, 6) and s.loss_curve.shape == (10,)
    assert s.to_dict()["final_loss"] == pytest.approx(traces[-1].fl_loss)


def test_participation_tracks_rates_at_small_v(scenario):
    traces = run_experiment(scenario, Policy.ddsra(0.01), 2000, seed=0, train=False)
    s = summarize(traces, 6)
    check = participation_check(scenario, s, 0.01)
    assert check["holds"], (s.participation, check["floor"])


def test_fixed_stats_scenario():
    env = default_environment(0)
    stats = DataStats(np.ones(12), np.ones(12), np.full(12, 2.0), np.ones(12))
    sc = build_scenario(env, task_for_environment(env), stats=stats)
    assert sc.stats is stats
    assert np.all((sc.rates > 0) & (sc.rates <= 1))
