"""Static topology and per-round physics of the two-tier edge network.

Devices train the bottom layers of the DNN, their gateway trains the top
layers, and scheduled gateways exchange the model with the base station
over one of ``J`` orthogonal channels.  All evaluators here are pure
functions of the static :class:`Environment` and a :class:`RoundRealization`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dnn_cost import CostProfile, NetworkSpec, cost_profile, vgg11

INF = math.inf
GIGA = 1e9


@dataclass(frozen=True)
class DeviceProfile:
    gateway: int
    dataset_size: int
    batch_size: int
    cpu_freq: float
    flops_per_cycle: float
    capacitance: float
    energy_cap: float
    memory_cap: float

    def __post_init__(self) -> None:
        if not 1 <= self.batch_size <= self.dataset_size:
            raise ValueError(f"batch size {self.batch_size} must lie in [1, dataset size {self.dataset_size}]")
        for name in ("cpu_freq", "flops_per_cycle", "capacitance", "energy_cap", "memory_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"device {name} must be positive")


@dataclass(frozen=True)
class GatewayProfile:
    f_min: float
    f_max: float
    flops_per_cycle: float
    capacitance: float
    energy_cap: float
    memory_cap: float
    p_max: float
    distance: float

    def __post_init__(self) -> None:
        if not 0 < self.f_min <= self.f_max:
            raise ValueError(f"gateway needs 0 < f_min <= f_max, got f_min={self.f_min}, f_max={self.f_max}")
        for name in ("flops_per_cycle", "capacitance", "energy_cap", "memory_cap", "p_max", "distance"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gateway {name} must be positive")


@dataclass(frozen=True)
class ChannelParams:
    bw_up: float = 1e6
    bw_down: float = 20e6
    noise_density: float = 10 ** (-174 / 10) * 1e-3
    h0: float = 1e-3
    d0: float = 1.0
    path_loss_exp: float = 2.0
    bs_power: float = 1.0
    interference_std_up: float = 4e-15
    interference_std_down: float = 4e-14
    n_channels: int = 3

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValueError(f"channel parameter {name} must be positive")


@dataclass(frozen=True)
class RoundRealization:
    """Per-round draws, indexed ``[m, j]`` for links and by node otherwise."""

    fading_up: np.ndarray
    fading_down: np.ndarray
    interference_up: np.ndarray
    interference_down: np.ndarray
    device_energy: np.ndarray
    gateway_energy: np.ndarray


@dataclass(frozen=True)
class GatewayPlan:
    """Resources chosen for one scheduled gateway."""

    gateway: int
    channel: int
    splits: tuple[int, ...]
    freqs: tuple[float, ...]
    power: float


class Environment:
    """Static network: devices, gateways, channel model and the DNN."""

    def __init__(
        self,
        devices: Sequence[DeviceProfile],
        gateways: Sequence[GatewayProfile],
        channel: ChannelParams,
        network: NetworkSpec,
        local_epochs: int = 5,
        uniform_precision_scaling: bool = False,
    ) -> None:
        self.devices = tuple(devices)
        self.gateways = tuple(gateways)
        self.channel = channel
        self.network = network
        self.local_epochs = int(local_epochs)
        self.uniform_precision_scaling = uniform_precision_scaling
        if not self.devices or not self.gateways:
            raise ValueError("need at least one device and one gateway")
        if channel.n_channels > len(self.gateways):
            raise ValueError(f"{channel.n_channels} channels but only {len(self.gateways)} gateways")
        if self.local_epochs < 0:
            raise ValueError("local epochs must be non-negative")
        members: list[list[int]] = [[] for _ in self.gateways]
        for n, dev in enumerate(self.devices):
            if not 0 <= dev.gateway < len(self.gateways):
                raise ValueError(f"device {n} points at unknown gateway {dev.gateway}")
            members[dev.gateway].append(n)
        if any(not m for m in members):
            raise ValueError("every gateway needs at least one associated device")
        self.members = tuple(tuple(m) for m in members)
        # FLOPs are per sample; memory is held for the device's whole batch.
        self.flops_profile: CostProfile = cost_profile(network.with_batch(1), uniform_precision_scaling)
        self.mem_profiles: tuple[CostProfile, ...] = tuple(
            cost_profile(network.with_batch(d.batch_size), uniform_precision_scaling) for d in self.devices
        )
        dist = np.array([g.distance for g in self.gateways])
        self.path_gain = channel.h0 * (channel.d0 / dist) ** channel.path_loss_exp

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def n_gateways(self) -> int:
        return len(self.gateways)

    @property
    def n_channels(self) -> int:
        return self.channel.n_channels

    @property
    def depth(self) -> int:
        return self.network.depth

    @property
    def model_bits(self) -> float:
        return self.network.model_bits

    # -- stochastic draws -------------------------------------------------

    def sample_round(self, rng: np.random.Generator | int) -> RoundRealization:
        rng = np.random.default_rng(rng)
        shape = (self.n_gateways, self.n_channels)
        ch = self.channel
        fading_up = rng.exponential(1.0, shape)
        fading_down = rng.exponential(1.0, shape)
        interference_up = np.abs(rng.normal(0.0, ch.interference_std_up, shape))
        interference_down = np.abs(rng.normal(0.0, ch.interference_std_down, shape))
        device_energy = rng.uniform(0.0, 1.0, self.n_devices) * np.array([d.energy_cap for d in self.devices])
        gateway_energy = rng.uniform(0.0, 1.0, self.n_gateways) * np.array([g.energy_cap for g in self.gateways])
        return RoundRealization(fading_up, fading_down, interference_up, interference_down,
                                device_energy, gateway_energy)

    # -- communication ------------------------------------------------------

    def uplink_snr_per_watt(self, m: int, j: int, real: RoundRealization) -> float:
        ch = self.channel
        gain = self.path_gain[m] * real.fading_up[m, j]
        return gain / (ch.bw_up * ch.noise_density + real.interference_up[m, j])

    def downlink_time(self, m: int, j: int, real: RoundRealization) -> float:
        ch = self.channel
        gain = self.path_gain[m] * real.fading_down[m, j]
        snr = ch.bs_power * gain / (ch.bw_down * ch.noise_density + real.interference_down[m, j])
        rate = ch.bw_down * math.log2(1.0 + snr)
        return self.model_bits / rate if rate > 0 else INF

    def uplink_time(self, m: int, j: int, power: float, real: RoundRealization) -> float:
        self._check_power(m, power)
        return uplink_time(self.model_bits, self.channel.bw_up, power, self.uplink_snr_per_watt(m, j, real))

    def uplink_energy(self, m: int, j: int, power: float, real: RoundRealization) -> float:
        """Transmit energy; infinite at zero power, which can never carry the model."""
        t = self.uplink_time(m, j, power, real)
        return INF if math.isinf(t) else power * t

    def _check_power(self, m: int, power: float) -> None:
        if not 0.0 <= power <= self.gateways[m].p_max:
            raise ValueError(f"power {power} outside [0, {self.gateways[m].p_max}] for gateway {m}")

    # -- computation --------------------------------------------------------

    def split_flops(self, split: int) -> tuple[float, float]:
        if not 0 <= split <= self.depth:
            raise ValueError(f"split point {split} outside [0, {self.depth}]")
        prefix = self.flops_profile.flops
        return float(prefix[split]), float(prefix[-1] - prefix[split])

    def device_time(self, n: int, split: int, gateway_freq: float) -> float:
        dev = self.devices[n]
        gw = self.gateways[dev.gateway]
        bottom, top = self.split_flops(split)
        t = bottom / (dev.flops_per_cycle * dev.cpu_freq)
        if top > 0:
            if gateway_freq <= 0:
                return INF
            t += top / (gw.flops_per_cycle * gateway_freq)
        return self.local_epochs * dev.batch_size * t

    def training_time(self, m: int, splits: Sequence[int], gateway_freqs: Sequence[float]) -> float:
        """Slowest associated device; ``splits``/``gateway_freqs`` follow ``members[m]``."""
        members = self.members[m]
        self._check_freqs(m, gateway_freqs)
        return max(self.device_time(n, l, f) for n, l, f in zip(members, splits, gateway_freqs, strict=True))

    def _check_freqs(self, m: int, freqs: Sequence[float]) -> None:
        if any(f < 0 for f in freqs):
            raise ValueError("gateway frequencies must be non-negative")
        if sum(freqs) > self.gateways[m].f_max * (1 + 1e-9):
            raise ValueError(f"gateway {m} frequencies sum to {sum(freqs)} > f_max {self.gateways[m].f_max}")

    def device_training_energy(self, n: int, split: int) -> float:
        dev = self.devices[n]
        bottom, _ = self.split_flops(split)
        return self.local_epochs * dev.batch_size * dev.capacitance / dev.flops_per_cycle * bottom * dev.cpu_freq ** 2

    def gateway_training_energy(self, m: int, splits: Sequence[int], gateway_freqs: Sequence[float]) -> float:
        gw = self.gateways[m]
        total = 0.0
        for n, l, f in zip(self.members[m], splits, gateway_freqs, strict=True):
            _, top = self.split_flops(l)
            total += self.local_epochs * self.devices[n].batch_size * gw.capacitance / gw.flops_per_cycle * top * f ** 2
        return total

    def device_memory(self, n: int, split: int) -> float:
        return float(self.mem_profiles[n].mem[split])

    def gateway_memory(self, m: int, splits: Sequence[int]) -> float:
        return float(sum(self.mem_profiles[n].total_mem - self.mem_profiles[n].mem[l]
                         for n, l in zip(self.members[m], splits, strict=True)))

    # -- whole-round quantities -------------------------------------------

    def gateway_delay(self, plan: GatewayPlan, real: RoundRealization) -> float:
        m, j = plan.gateway, plan.channel
        return (self.training_time(m, plan.splits, plan.freqs)
                + self.uplink_time(m, j, plan.power, real)
                + self.downlink_time(m, j, real))

    def gateway_energy(self, plan: GatewayPlan, real: RoundRealization) -> float:
        return (self.gateway_training_energy(plan.gateway, plan.splits, plan.freqs)
                + self.uplink_energy(plan.gateway, plan.channel, plan.power, real))

    def round_latency(self, plans: Sequence[GatewayPlan], real: RoundRealization) -> float:
        return max((self.gateway_delay(p, real) for p in plans), default=0.0)

    def check_plan(self, plan: GatewayPlan, real: RoundRealization, rtol: float = 1e-9) -> dict[str, bool]:
        """Per-round constraint status for one scheduled gateway (True = satisfied)."""
        m = plan.gateway
        gw = self.gateways[m]
        members = self.members[m]
        fsum = sum(plan.freqs)
        status = {
            "power": 0.0 < plan.power <= gw.p_max * (1 + rtol),
            "split": all(0 <= l <= self.depth for l in plan.splits),
            "freq": gw.f_min * (1 - rtol) <= fsum <= gw.f_max * (1 + rtol),
            "device_memory": all(self.device_memory(n, l) <= self.devices[n].memory_cap
                                 for n, l in zip(members, plan.splits)),
            "gateway_memory": self.gateway_memory(m, plan.splits) <= gw.memory_cap,
            "device_energy": all(self.device_training_energy(n, l) <= real.device_energy[n] * (1 + rtol)
                                 for n, l in zip(members, plan.splits)),
        }
        status["gateway_energy"] = status["power"] and self.gateway_energy(plan, real) <= real.gateway_energy[m] * (1 + rtol) + 1e-12
        return status

    # -- averages used by the analysis bounds --------------------------------

    def mean_uplink_snr_per_watt(self, m: int) -> float:
        ch = self.channel
        mean_interference = ch.interference_std_up * math.sqrt(2.0 / math.pi)
        return self.path_gain[m] / (ch.bw_up * ch.noise_density + mean_interference)

    def mean_downlink_snr(self, m: int) -> float:
        ch = self.channel
        mean_interference = ch.interference_std_down * math.sqrt(2.0 / math.pi)
        return ch.bs_power * self.path_gain[m] / (ch.bw_down * ch.noise_density + mean_interference)


def uplink_time(bits: float, bandwidth: float, power: float, snr_per_watt: float) -> float:
    if power <= 0:
        return INF
    rate = bandwidth * math.log2(1.0 + power * snr_per_watt)
    return bits / rate if rate > 0 else INF


def reference_topology(
    rng: np.random.Generator | int = 0,
    n_gateways: int = 6,
    devices_per_gateway: int = 2,
    sampling_ratio: float = 0.05,
) -> tuple[list[DeviceProfile], list[GatewayProfile]]:
    """Random device/gateway profiles in the ranges of the reference deployment.

    Dataset sizes are uniform on (0, 2000], device clocks on [0.1, 1] GHz and
    gateway distances on [1000, 2000] m; the rest are fixed caps.
    """
    rng = np.random.default_rng(rng)
    devices: list[DeviceProfile] = []
    for m in range(n_gateways):
        for _ in range(devices_per_gateway):
            size = int(rng.integers(1, 2001))
            devices.append(DeviceProfile(
                gateway=m,
                dataset_size=size,
                batch_size=max(1, math.ceil(sampling_ratio * size)),
                cpu_freq=float(rng.uniform(0.1, 1.0)) * GIGA,
                flops_per_cycle=16.0,
                capacitance=1e-27,
                energy_cap=5.0,
                memory_cap=2e9,
            ))
    gateways = [
        GatewayProfile(
            f_min=0.1 * GIGA,
            f_max=4.0 * GIGA,
            flops_per_cycle=32.0,
            capacitance=1e-27,
            energy_cap=30.0,
            memory_cap=4e9,
            p_max=0.2,
            distance=float(rng.uniform(1000.0, 2000.0)),
        )
        for _ in range(n_gateways)
    ]
    return devices, gateways


def default_environment(topology_seed: int = 0, n_channels: int = 3, local_epochs: int = 5) -> Environment:
    devices, gateways = reference_topology(topology_seed)
    return Environment(devices, gateways, ChannelParams(n_channels=n_channels), vgg11(), local_epochs)
