"""Validated experiment configuration and its conversion to runtime objects."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core import ControlParams
from ..dnn_cost import NetworkSpec, vgg11
from ..env_model import ChannelParams, DeviceProfile, Environment, GatewayProfile, reference_topology
from ..participation import DataStats
from ..sim_harness import Policy, PolicyKind

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "configs" / "default.json"
POLICY_NAMES = tuple(k.value for k in PolicyKind)


class ConfigError(ValueError):
    """A configuration file could not be read or failed validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DeviceConfig(_Strict):
    gateway: int = Field(ge=0)
    dataset_size: int = Field(gt=0)
    cpu_freq: float = Field(gt=0)
    flops_per_cycle: float = Field(gt=0)
    capacitance: float = Field(gt=0)
    energy_cap: float = Field(ge=0)
    memory_cap: float = Field(gt=0)


class GatewayConfig(_Strict):
    f_min: float = Field(ge=0)
    f_max: float = Field(gt=0)
    flops_per_cycle: float = Field(gt=0)
    capacitance: float = Field(gt=0)
    energy_cap: float = Field(ge=0)
    memory_cap: float = Field(gt=0)
    p_max: float = Field(gt=0)
    distance: float = Field(gt=0)

    @model_validator(mode="after")
    def _freq_order(self):
        if self.f_min > self.f_max:
            raise ValueError(f"f_min ({self.f_min}) exceeds f_max ({self.f_max})")
        return self


class ChannelConfig(_Strict):
    bw_up: float = Field(1e6, gt=0)
    bw_down: float = Field(20e6, gt=0)
    noise_dbm_per_hz: float = -174.0
    path_loss_db: float = -30.0
    reference_distance: float = Field(1.0, gt=0)
    path_loss_exp: float = Field(2.0, ge=0)
    bs_power: float = Field(1.0, gt=0)
    interference_std_up: float = Field(4e-15, ge=0)
    interference_std_down: float = Field(4e-14, ge=0)
    n_channels: int = Field(3, ge=1)

    def build(self) -> ChannelParams:
        return ChannelParams(
            bw_up=self.bw_up, bw_down=self.bw_down,
            noise_density=10 ** (self.noise_dbm_per_hz / 10) * 1e-3,
            h0=10 ** (self.path_loss_db / 10), d0=self.reference_distance,
            path_loss_exp=self.path_loss_exp, bs_power=self.bs_power,
            interference_std_up=self.interference_std_up,
            interference_std_down=self.interference_std_down,
            n_channels=self.n_channels,
        )


class NetworkConfig(_Strict):
    arch: Literal["vgg11"] = "vgg11"
    image_size: int = Field(32, ge=32)
    in_channels: int = Field(3, ge=1)
    classes: int = Field(10, ge=1)
    precision: int = Field(4, ge=1)
    uniform_precision_scaling: bool = False

    @field_validator("image_size")
    @classmethod
    def _five_pools(cls, v: int) -> int:
        if v % 32:
            raise ValueError("image_size must be a multiple of 32 (five 2x2 pools)")
        return v

    def build(self) -> NetworkSpec:
        return vgg11(self.image_size, self.in_channels, self.classes, self.precision)


class TaskConfig(_Strict):
    family: Literal["convex", "nonconvex"] = "convex"
    dim: int = Field(10, ge=1)
    skew: float = Field(1.0, ge=0, le=1)
    bias: float = Field(2.0, ge=0)
    noise: float = Field(0.1, ge=0)
    curvature: float | None = Field(None, ge=0)


class FixedStats(_Strict):
    sigma: list[float]
    delta: list[float]
    smoothness: list[float]
    lipschitz: list[float]


class StatsConfig(_Strict):
    source: Literal["estimated", "fixed"] = "estimated"
    warmup_rounds: int = Field(20, ge=1)
    fixed: FixedStats | None = None

    @model_validator(mode="after")
    def _fixed_present(self):
        if self.source == "fixed" and self.fixed is None:
            raise ValueError("source 'fixed' needs the 'fixed' statistics block")
        return self


class ControlConfig(_Strict):
    psi: float | None = Field(None, gt=0)
    eps_bis: float = Field(1e-6, gt=0, lt=1)
    bcd_max_iter: int = Field(20, ge=1)
    bcd_tol: float = Field(1e-6, ge=0)
    outer_max_iter: int = Field(50, ge=1)
    joint_energy: bool = True
    partition_check: Literal["exact", "lower"] = "exact"
    assignment: Literal["sweep", "single"] = "sweep"

    def build(self, V: float) -> ControlParams:
        return ControlParams(V=V, **self.model_dump())


class ScenarioConfig(_Strict):
    """Everything one experiment batch needs; unknown keys are rejected."""

    devices: list[DeviceConfig] = Field(min_length=1)
    gateways: list[GatewayConfig] = Field(min_length=1)
    channel: ChannelConfig = ChannelConfig()
    network: NetworkConfig = NetworkConfig()
    local_epochs: int = Field(5, ge=1)
    step_size: float = Field(0.01, gt=0)
    sampling_ratio: float = Field(0.05, gt=0, le=1)
    V: list[float] = Field(default_factory=lambda: [0.01, 1000.0, 10000.0], min_length=1)
    rounds: int = Field(1000, ge=0)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    policies: list[str] = Field(default_factory=lambda: list(POLICY_NAMES), min_length=1)
    train: bool = True
    baseline_power_fraction: float = Field(0.5, gt=0, le=1)
    task: TaskConfig = TaskConfig()
    stats: StatsConfig = StatsConfig()
    control: ControlConfig = ControlConfig()

    @field_validator("V")
    @classmethod
    def _finite_v(cls, v: list[float]) -> list[float]:
        if any(not math.isfinite(x) or x < 0 for x in v):
            raise ValueError("every V must be finite and non-negative")
        return v

    @field_validator("seeds")
    @classmethod
    def _u64(cls, v: list[int]) -> list[int]:
        if any(not 0 <= s < 2 ** 64 for s in v):
            raise ValueError("seeds must be unsigned 64-bit integers")
        return v

    @field_validator("policies")
    @classmethod
    def _known_policies(cls, v: list[str]) -> list[str]:
        unknown = [p for p in v if p not in POLICY_NAMES]
        if unknown:
            raise ValueError(f"unknown policies {unknown}; choose from {list(POLICY_NAMES)}")
        return v

    @model_validator(mode="after")
    def _topology(self):
        M = len(self.gateways)
        for n, d in enumerate(self.devices):
            if d.gateway >= M:
                raise ValueError(f"device {n} points at gateway {d.gateway} but only {M} exist")
        lonely = sorted(set(range(M)) - {d.gateway for d in self.devices})
        if lonely:
            raise ValueError(f"gateways {lonely} have no devices")
        if self.channel.n_channels > M:
            raise ValueError(f"{self.channel.n_channels} channels for {M} gateways")
        if self.stats.fixed is not None:
            N = len(self.devices)
            for name in ("sigma", "delta", "smoothness", "lipschitz"):
                if len(getattr(self.stats.fixed, name)) != N:
                    raise ValueError(f"stats.fixed.{name} needs {N} entries")
        return self

    # -- conversions ------------------------------------------------------

    def batch_size(self, dataset_size: int) -> int:
        return max(1, math.ceil(self.sampling_ratio * dataset_size))

    def environment(self) -> Environment:
        devices = [DeviceProfile(batch_size=self.batch_size(d.dataset_size), **d.model_dump()) for d in self.devices]
        gateways = [GatewayProfile(**g.model_dump()) for g in self.gateways]
        return Environment(devices, gateways, self.channel.build(), self.network.build(), self.local_epochs,
                           uniform_precision_scaling=self.network.uniform_precision_scaling)

    def fixed_stats(self) -> DataStats | None:
        if self.stats.source != "fixed":
            return None
        return DataStats(**self.stats.fixed.model_dump())

    def task_kwargs(self) -> dict:
        kw = self.task.model_dump()
        if kw["curvature"] is None:
            kw["curvature"] = 0.5 if kw["family"] == "nonconvex" else 0.0
        return kw

    def policy(self, name: str, V: float) -> Policy:
        if name == PolicyKind.DDSRA.value:
            return Policy(PolicyKind.DDSRA, self.control.build(V))
        return Policy(PolicyKind(name), power_fraction=self.baseline_power_fraction)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def default_config(topology_seed: int = 0) -> ScenarioConfig:
    """Reference deployment: 6 gateways with 2 devices each, 3 channels, K=5, step 0.01, 5% sampling."""
    devices, gateways = reference_topology(topology_seed)
    return ScenarioConfig(
        devices=[DeviceConfig(**{k: getattr(d, k) for k in DeviceConfig.model_fields}) for d in devices],
        gateways=[GatewayConfig(**{k: getattr(g, k) for k in GatewayConfig.model_fields}) for g in gateways],
    )


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            where = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"  {where}: {err['msg']}")
        raise ConfigError("invalid configuration:\n" + "\n".join(lines)) from None


def load_config(path: str | Path | None = None) -> ScenarioConfig:
    """Read a JSON configuration; ``None`` loads the bundled default."""
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(data)


def dump_config(config: ScenarioConfig, path: str | Path | None = None) -> str:
    text = json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
