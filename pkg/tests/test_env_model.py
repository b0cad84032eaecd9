import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddsra.dnn_cost import NetworkSpec, fc, vgg11
from ddsra.env_model import (
    ChannelParams,
    DeviceProfile,
    Environment,
    GatewayPlan,
    GatewayProfile,
    RoundRealization,
    default_environment,
)


def _device(gateway=0, **kw):
    base = dict(gateway=gateway, dataset_size=100, batch_size=5, cpu_freq=0.5e9, flops_per_cycle=16.0,
                capacitance=1e-27, energy_cap=5.0, memory_cap=2e9)
    base.update(kw)
    return DeviceProfile(**base)


def _gateway(**kw):
    base = dict(f_min=0.1e9, f_max=4e9, flops_per_cycle=32.0, capacitance=1e-27, energy_cap=30.0,
                memory_cap=4e9, p_max=0.2, distance=1000.0)
    base.update(kw)
    return GatewayProfile(**base)


def _small_env(model_bits=8e6, n_gateways=1, devices_per_gateway=2, n_channels=1):
    layers = (fc(64, 32), fc(32, 16), fc(16, 4))
    net = NetworkSpec(layers, model_bits)
    devices = [_device(m, batch_size=3 + i, cpu_freq=(0.3 + 0.2 * i) * 1e9)
               for m in range(n_gateways) for i in range(devices_per_gateway)]
    gateways = [_gateway(distance=1000.0 + 200 * m) for m in range(n_gateways)]
    return Environment(devices, gateways, ChannelParams(n_channels=n_channels), net, local_epochs=2)


def _realization(env, fading_up=1.0, fading_down=1.0, i_up=0.0, i_down=0.0, dev_e=None, gw_e=None):
    M, J = env.n_gateways, env.n_channels
    return RoundRealization(
        np.full((M, J), fading_up), np.full((M, J), fading_down),
        np.full((M, J), i_up), np.full((M, J), i_down),
        np.full(env.n_devices, 1e9 if dev_e is None else dev_e),
        np.full(M, 1e9 if gw_e is None else gw_e),
    )


def _unit_snr_down(env, m=0):
    ch = env.channel
    return ch.bw_down * ch.noise_density / (ch.bs_power * env.path_gain[m])


def _unit_snr_power(env, m=0):
    ch = env.channel
    return ch.bw_up * ch.noise_density / env.path_gain[m]


def test_sampling_is_deterministic(env):
    a, b = env.sample_round(7), env.sample_round(7)
    for name in RoundRealization.__dataclass_fields__:
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_fading_mean_and_arrival_support():
    env = default_environment(0)
    rng = np.random.default_rng(3)
    draws = [env.sample_round(rng) for _ in range(6000)]  # 6000 * 18 > 1e5 fading samples
    fading = np.concatenate([d.fading_up.ravel() for d in draws] + [d.fading_down.ravel() for d in draws])
    assert fading.size > 1e5
    assert abs(fading.mean() - 1.0) < 0.02
    dev = np.array([d.device_energy for d in draws])
    gw = np.array([d.gateway_energy for d in draws])
    caps_d = np.array([d.energy_cap for d in env.devices])
    caps_g = np.array([g.energy_cap for g in env.gateways])
    assert np.all(dev >= 0) and np.all(dev <= caps_d)
    assert np.all(gw >= 0) and np.all(gw <= caps_g)
    assert all(np.all(d.interference_up >= 0) and np.all(d.interference_down >= 0) for d in draws)


def test_downlink_time_unit_snr():
    env = _small_env(model_bits=8e6)
    real = _realization(env, fading_down=_unit_snr_down(env))
    assert env.downlink_time(0, 0, real) == pytest.approx(0.4, rel=1e-12)


def test_downlink_time_linear_in_model_size():
    a, b = _small_env(model_bits=8e6), _small_env(model_bits=16e6)
    real = _realization(a, fading_down=0.7, i_down=1e-14)
    assert b.downlink_time(0, 0, real) == pytest.approx(2 * a.downlink_time(0, 0, real), rel=1e-12)


def test_downlink_time_grows_without_bound_with_interference():
    env = _small_env()
    times = [env.downlink_time(0, 0, _realization(env, i_down=x)) for x in (1e-12, 1e-9, 1e-6, 1e-3, 1.0)]
    assert all(b > a for a, b in zip(times, times[1:]))
    assert times[-1] > 1e6


def test_uplink_unit_snr():
    env = _small_env(model_bits=8e6)
    real = _realization(env)
    p = _unit_snr_power(env)
    assert 0 < p <= env.gateways[0].p_max
    assert env.uplink_time(0, 0, p, real) == pytest.approx(8.0, rel=1e-12)
    assert env.uplink_energy(0, 0, p, real) == pytest.approx(8.0 * p, rel=1e-12)


@given(st.floats(1e-6, 0.2), st.floats(0.01, 10.0), st.floats(0.0, 1e-12))
def test_uplink_energy_is_power_times_time(power, fading, interference):
    env = _small_env()
    real = _realization(env, fading_up=fading, i_up=interference)
    t = env.uplink_time(0, 0, power, real)
    assert env.uplink_energy(0, 0, power, real) == pytest.approx(power * t, rel=1e-15)


def test_uplink_energy_grows_with_model_size():
    real = _realization(_small_env())
    energies = [_small_env(model_bits=b).uplink_energy(0, 0, 0.1, real) for b in (1e6, 2e6, 4e6)]
    assert energies[0] < energies[1] < energies[2]


def test_zero_power_is_infinite_and_out_of_range_rejected():
    env = _small_env()
    real = _realization(env)
    assert math.isinf(env.uplink_time(0, 0, 0.0, real))
    assert math.isinf(env.uplink_energy(0, 0, 0.0, real))
    with pytest.raises(ValueError):
        env.uplink_time(0, 0, 0.3, real)
    with pytest.raises(ValueError):
        env.uplink_time(0, 0, -0.1, real)


def _device_time_oracle(env, n, l, f):
    dev = env.devices[n]
    gw = env.gateways[dev.gateway]
    prefix = env.flops_profile.flops
    bottom, top = prefix[l], prefix[-1] - prefix[l]
    return env.local_epochs * dev.batch_size * (bottom / (dev.flops_per_cycle * dev.cpu_freq)
                                               + top / (gw.flops_per_cycle * f))


def test_training_time_no_offload_is_device_only():
    env = _small_env()
    L = env.depth
    t = env.training_time(0, [L, L], [1e9, 1e9])
    dev_only = max(env.local_epochs * d.batch_size * env.flops_profile.total_flops / (d.flops_per_cycle * d.cpu_freq)
                   for d in env.devices)
    assert t == pytest.approx(dev_only, rel=1e-12)


def test_training_time_full_offload_has_no_device_term():
    env = _small_env()
    f = [1e9, 2e9]
    t = env.training_time(0, [0, 0], f)
    gw = env.gateways[0]
    expected = max(env.local_epochs * d.batch_size * env.flops_profile.total_flops / (gw.flops_per_cycle * fi)
                   for d, fi in zip(env.devices, f))
    assert t == pytest.approx(expected, rel=1e-12)


def test_training_time_is_slowest_device():
    env = _small_env()
    splits, freqs = [1, 2], [0.5e9, 3e9]
    expected = max(_device_time_oracle(env, n, l, f) for n, l, f in zip(env.members[0], splits, freqs))
    assert env.training_time(0, splits, freqs) == pytest.approx(expected, rel=1e-12)


def test_training_time_rejects_overcommitted_cpu():
    env = _small_env()
    with pytest.raises(ValueError):
        env.training_time(0, [0, 0], [3e9, 3e9])


def test_zero_frequency_with_offload_is_infinite():
    env = _small_env()
    assert math.isinf(env.device_time(0, 0, 0.0))
    assert math.isfinite(env.device_time(0, env.depth, 0.0))


def test_training_energies():
    env = _small_env()
    assert env.device_training_energy(0, 0) == 0.0
    dev = env.devices[1]
    prefix = env.flops_profile.flops
    expected = env.local_epochs * dev.batch_size * dev.capacitance / dev.flops_per_cycle * prefix[2] * dev.cpu_freq ** 2
    assert env.device_training_energy(1, 2) == pytest.approx(expected, rel=1e-12)
    e1 = env.gateway_training_energy(0, [1, 0], [1e9, 1.5e9])
    e2 = env.gateway_training_energy(0, [1, 0], [2e9, 3e9])
    assert e2 == pytest.approx(4 * e1, rel=1e-12)
    gw = env.gateways[0]
    manual = sum(env.local_epochs * env.devices[n].batch_size * gw.capacitance / gw.flops_per_cycle
                 * (prefix[-1] - prefix[l]) * f ** 2 for n, l, f in zip((0, 1), (1, 0), (1e9, 1.5e9)))
    assert e1 == pytest.approx(manual, rel=1e-12)


def test_memory_prefix_and_suffix():
    env = _small_env()
    assert env.device_memory(0, 0) == 0.0
    assert env.gateway_memory(0, [env.depth, env.depth]) == 0.0
    for l0, l1 in product(range(env.depth + 1), repeat=2):
        total = sum(env.mem_profiles[n].total_mem for n in (0, 1))
        dev = env.device_memory(0, l0) + env.device_memory(1, l1)
        assert dev + env.gateway_memory(0, [l0, l1]) == pytest.approx(total, rel=1e-12)


def _plan(env, m, j=0, power=0.1):
    members = env.members[m]
    return GatewayPlan(m, j, tuple(1 for _ in members), tuple(env.gateways[m].f_max / len(members) for _ in members),
                       power)


def test_round_latency_single_gateway_is_sum_of_terms():
    env = _small_env()
    real = _realization(env, fading_up=0.8, fading_down=1.3)
    p = _plan(env, 0)
    expected = (env.training_time(0, p.splits, p.freqs) + env.uplink_time(0, 0, p.power, real)
                + env.downlink_time(0, 0, real))
    assert env.round_latency([p], real) == pytest.approx(expected, rel=1e-12)


def test_round_latency_three_gateways_exhaustive():
    env = _small_env(n_gateways=3, n_channels=3)
    real = env.sample_round(11)
    plans = [_plan(env, m, j=(m + 1) % 3, power=0.05 * (m + 1)) for m in range(3)]
    terms = [env.training_time(p.gateway, p.splits, p.freqs) + env.uplink_time(p.gateway, p.channel, p.power, real)
             + env.downlink_time(p.gateway, p.channel, real) for p in plans]
    assert env.round_latency(plans, real) == max(terms)
    worst = int(np.argmax(terms))
    others = [p for i, p in enumerate(plans) if i != worst]
    assert env.round_latency(others + [plans[worst]], real) == env.round_latency(plans, real)
    assert env.round_latency([], real) == 0.0


def test_check_plan_flags_energy_shortage():
    env = _small_env()
    p = _plan(env, 0)
    assert all(env.check_plan(p, _realization(env)).values())
    starved = env.check_plan(p, _realization(env, dev_e=0.0, gw_e=0.0))
    assert not starved["device_energy"] and not starved["gateway_energy"]


@pytest.mark.parametrize("kw", [dict(batch_size=200), dict(batch_size=0), dict(cpu_freq=0.0)])
def test_device_profile_validation(kw):
    with pytest.raises(ValueError):
        _device(**kw)


def test_gateway_profile_validation():
    with pytest.raises(ValueError):
        _gateway(f_min=5e9)
    with pytest.raises(ValueError):
        _gateway(p_max=0.0)


def test_environment_validation():
    net = vgg11()
    with pytest.raises(ValueError):
        Environment([_device(0)], [_gateway()], ChannelParams(n_channels=2), net)
    with pytest.raises(ValueError):
        Environment([_device(1)], [_gateway(), _gateway()], ChannelParams(n_channels=1), net)
    with pytest.raises(ValueError):
        Environment([_device(0)], [_gateway(), _gateway()], ChannelParams(n_channels=1), net)


def test_default_environment_shape(env):
    assert (env.n_gateways, env.n_devices, env.n_channels, env.local_epochs) == (6, 12, 3, 5)
    assert all(len(m) == 2 for m in env.members)
