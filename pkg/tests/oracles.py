"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math
from itertools import permutations

import numpy as np

from ddsra.dnn_cost import LayerKind, LayerSpec, NetworkSpec
from ddsra.env_model import ChannelParams, DeviceProfile, Environment, GatewayProfile


def table_row_cost(layer: LayerSpec, uniform: bool = False) -> tuple[int, int, int]:
    """Straight transcription of the per-layer cost table: (fwd, bwd, mem)."""
    B, S = layer.batch_size, layer.precision
    if layer.kind is LayerKind.CONV:
        Ci, Hi, Wi, Co, Ho, Wo, Hf, Wf = (layer.in_c, layer.in_h, layer.in_w, layer.out_c, layer.out_h,
                                          layer.out_w, layer.filt_h, layer.filt_w)
        weights = S * Ci * Hf * Wf * Co
        outputs = S * B * Co * Ho * Wo
        errors = S * B * Ci * Hi * Wi
        grads = S * Ci * Hf * Wf * Co
        fwd = 2 * B * Ci * Hf * Wf * Co * Ho * Wo
        err = 2 * B * (2 * Wf + Wf * Wo - 2) * (2 * Hf + Hf * Ho - 2)
        grad = 2 * B * Ci * Hf * Wf * Co * Ho * Wo
        return fwd, err + grad, weights + outputs + errors + grads
    if layer.kind is LayerKind.POOL:
        Ci, Hi, Wi, Co, Ho, Wo = layer.in_c, layer.in_h, layer.in_w, layer.out_c, layer.out_h, layer.out_w
        fwd = B * Ci * Hi * Wi
        err = B * Ci * Hi * Wi
        return fwd, err, S * B * Co * Ho * Wo + S * B * Ci * Hi * Wi
    Si, So = layer.in_size, layer.out_size
    f = S if uniform else 1
    return 2 * B * Si * So, 2 * B * Si * So + B * Si * So, f * Si * So + f * B * So + f * B * Si + f * Si * So


def random_layer(rng: np.random.Generator) -> LayerSpec:
    kind = rng.choice(["conv", "pool", "fc"])
    b, s = int(rng.integers(1, 9)), int(rng.choice([1, 2, 4, 8]))
    if kind == "fc":
        return LayerSpec("fc", batch_size=b, precision=s, in_size=int(rng.integers(1, 300)),
                         out_size=int(rng.integers(1, 300)))
    dims = dict(in_h=int(rng.integers(1, 40)), in_w=int(rng.integers(1, 40)), in_c=int(rng.integers(1, 64)),
                out_h=int(rng.integers(1, 40)), out_w=int(rng.integers(1, 40)), out_c=int(rng.integers(1, 64)))
    if kind == "conv":
        dims.update(filt_h=int(rng.integers(1, 8)), filt_w=int(rng.integers(1, 8)))
    return LayerSpec(kind, batch_size=b, precision=s, **dims)


def random_gateway_env(rng: np.random.Generator, depth: int | None = None, devices: int = 2) -> Environment:
    """One gateway, ``devices`` devices, a random small network and random caps."""
    L = int(depth or rng.integers(1, 9))
    layers = []
    for _ in range(L):
        lay = random_layer(rng)
        layers.append(LayerSpec(lay.kind, **{k: v for k, v in lay.to_dict().items() if k not in ("kind", "batch_size")},
                                batch_size=1))
    net = NetworkSpec(tuple(layers), float(rng.uniform(1e5, 1e7)))
    flops = sum(sum(table_row_cost(l)[:2]) for l in layers)
    mems = [table_row_cost(l)[2] for l in layers]
    devs = []
    for _ in range(devices):
        batch = int(rng.integers(1, 20))
        devs.append(DeviceProfile(
            gateway=0, dataset_size=batch * 20, batch_size=batch,
            cpu_freq=float(rng.uniform(0.1, 1.0)) * 1e9, flops_per_cycle=16.0, capacitance=1e-27,
            energy_cap=float(rng.uniform(0.2, 2.0)) * 5 * batch * flops * 1e-27 / 16 * 1e18,
            memory_cap=float(rng.uniform(0.3, 1.5)) * sum(mems) * batch,
        ))
    gw = GatewayProfile(f_min=0.1e9, f_max=4e9, flops_per_cycle=32.0, capacitance=1e-27,
                        energy_cap=float(rng.uniform(0.5, 30.0)), memory_cap=float(rng.uniform(0.5, 3.0)) * sum(mems) * 20,
                        p_max=0.2, distance=float(rng.uniform(500, 2000)))
    return Environment(devs, [gw], ChannelParams(n_channels=1), net, local_epochs=int(rng.integers(1, 6)))


def grid_lambda(env: Environment, real, points: int = 50) -> float:
    """Exhaustive search over all split pairs and a grid of CPU shares and powers (two devices)."""
    gw = env.gateways[0]
    members = env.members[0]
    assert len(members) == 2
    L = env.depth
    K = env.local_epochs
    prefix = np.asarray(env.flops_profile.flops, dtype=float)
    total = prefix[-1]
    fgrid = np.linspace(gw.f_max / points, gw.f_max, points)
    pgrid = np.linspace(gw.p_max / points, gw.p_max, points)
    ch = env.channel
    snr = env.path_gain[0] * real.fading_up[0, 0] / (ch.bw_up * ch.noise_density + real.interference_up[0, 0])
    up_t = env.model_bits / (ch.bw_up * np.log2(1 + pgrid * snr))
    up_e = pgrid * up_t
    down = env.downlink_time(0, 0, real)
    f1, f2 = np.meshgrid(fgrid, fgrid, indexing="ij")
    fsum = f1 + f2
    fok = (fsum <= gw.f_max * (1 + 1e-12)) & (fsum >= gw.f_min)
    best = math.inf
    devs = [env.devices[n] for n in members]
    for l1 in range(L + 1):
        for l2 in range(L + 1):
            ls = (l1, l2)
            okdev = all(
                env.mem_profiles[n].mem[l] <= d.memory_cap
                and K * d.batch_size * d.capacitance / d.flops_per_cycle * prefix[l] * d.cpu_freq ** 2 <= real.device_energy[n]
                for n, d, l in zip(members, devs, ls))
            if not okdev:
                continue
            gmem = sum(env.mem_profiles[n].mem[-1] - env.mem_profiles[n].mem[l] for n, l in zip(members, ls))
            if gmem > gw.memory_cap:
                continue
            times, energy = [], 0.0
            for d, l, f in zip(devs, ls, (f1, f2)):
                top = total - prefix[l]
                t = K * d.batch_size * (prefix[l] / (d.flops_per_cycle * d.cpu_freq) + top / (gw.flops_per_cycle * f))
                times.append(t)
                energy = energy + K * d.batch_size * gw.capacitance / gw.flops_per_cycle * top * f ** 2
            train = np.maximum(times[0], times[1])
            # (f1, f2, P) grid
            tot = train[:, :, None] + up_t[None, None, :] + down
            feas = fok[:, :, None] & (energy[:, :, None] + up_e[None, None, :] <= real.gateway_energy[0])
            if feas.any():
                best = min(best, float(tot[feas].min()))
    return best


def brute_force_assignment_cost(cost: np.ndarray) -> float:
    n, m = cost.shape
    return min(sum(cost[i, p[i]] for i in range(n)) for p in permutations(range(m), n))
