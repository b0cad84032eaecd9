"""Layer-level FLOPs and memory model for split DNN training.

Costs follow the per-layer tensor/operator breakdown of back-propagation:
forward FLOPs, backward FLOPs (error term plus, for layers with weights,
the gradient term) and the memory held for weights, forward outputs,
backward errors and gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class LayerKind(str, Enum):
    CONV = "conv"
    POOL = "pool"
    FC = "fc"


_SPATIAL_DIMS = ("in_h", "in_w", "in_c", "out_h", "out_w", "out_c")
_FILTER_DIMS = ("filt_h", "filt_w")
_FC_DIMS = ("in_size", "out_size")


@dataclass(frozen=True)
class LayerSpec:
    """One DNN layer.

    Conv layers need the spatial and filter dims, pooling layers only the
    spatial dims, fully-connected layers only ``in_size``/``out_size``.
    ``precision`` is bytes per scalar.
    """

    kind: LayerKind
    batch_size: int = 1
    precision: int = 4
    in_h: int | None = None
    in_w: int | None = None
    in_c: int | None = None
    out_h: int | None = None
    out_w: int | None = None
    out_c: int | None = None
    filt_h: int | None = None
    filt_w: int | None = None
    in_size: int | None = None
    out_size: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.kind is LayerKind.CONV:
            required, absent = _SPATIAL_DIMS + _FILTER_DIMS, _FC_DIMS
        elif self.kind is LayerKind.POOL:
            required, absent = _SPATIAL_DIMS, _FILTER_DIMS + _FC_DIMS
        else:
            required, absent = _FC_DIMS, _SPATIAL_DIMS + _FILTER_DIMS
        for name in ("batch_size", "precision") + required:
            value = getattr(self, name)
            if value is None or int(value) != value or value < 1:
                raise ValueError(f"{self.kind.value} layer: {name} must be a positive integer, got {value!r}")
        for name in absent:
            if getattr(self, name) is not None:
                raise ValueError(f"{self.kind.value} layer: {name} does not apply to this layer kind")

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value}
        for name in ("batch_size", "precision") + _SPATIAL_DIMS + _FILTER_DIMS + _FC_DIMS:
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        return cls(**data)


@dataclass(frozen=True)
class LayerCost:
    fwd_flops: int
    bwd_flops: int
    mem_bytes: int

    @property
    def train_flops(self) -> int:
        return self.fwd_flops + self.bwd_flops


def layer_cost(layer: LayerSpec, uniform_precision_scaling: bool = False) -> LayerCost:
    """FLOPs and memory of one layer.

    The fully-connected memory rows carry no precision factor; set
    ``uniform_precision_scaling`` to multiply them by the precision like the
    conv/pool rows.
    """
    b, s = layer.batch_size, layer.precision
    if layer.kind is LayerKind.CONV:
        ci, hi, wi = layer.in_c, layer.in_h, layer.in_w
        co, ho, wo = layer.out_c, layer.out_h, layer.out_w
        hf, wf = layer.filt_h, layer.filt_w
        fwd = 2 * b * ci * hf * wf * co * ho * wo
        err = 2 * b * (2 * wf + wf * wo - 2) * (2 * hf + hf * ho - 2)
        grad = 2 * b * ci * hf * wf * co * ho * wo
        weight = s * ci * hf * wf * co
        mem = weight + s * b * co * ho * wo + s * b * ci * hi * wi + weight
        return LayerCost(fwd, err + grad, mem)
    if layer.kind is LayerKind.POOL:
        ops = b * layer.in_c * layer.in_h * layer.in_w
        mem = s * b * layer.out_c * layer.out_h * layer.out_w + s * b * layer.in_c * layer.in_h * layer.in_w
        return LayerCost(ops, ops, mem)
    si, so = layer.in_size, layer.out_size
    fwd = 2 * b * si * so
    err = 2 * b * si * so
    grad = b * si * so
    scale = s if uniform_precision_scaling else 1
    mem = scale * (si * so + b * so + b * si + si * so)
    return LayerCost(fwd, err + grad, mem)


def weight_elements(layer: LayerSpec) -> int:
    if layer.kind is LayerKind.CONV:
        return layer.in_c * layer.filt_h * layer.filt_w * layer.out_c
    if layer.kind is LayerKind.FC:
        return layer.in_size * layer.out_size
    return 0


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers 1..L plus the transmitted model size in bits."""

    layers: tuple[LayerSpec, ...]
    model_bits: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if not self.model_bits > 0:
            raise ValueError("model size must be positive")

    @property
    def depth(self) -> int:
        return len(self.layers)

    def with_batch(self, batch_size: int) -> "NetworkSpec":
        return replace(self, layers=tuple(replace(l, batch_size=batch_size) for l in self.layers))

    def to_dict(self) -> dict:
        return {"model_bits": self.model_bits, "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        return cls(tuple(LayerSpec.from_dict(l) for l in data["layers"]), float(data["model_bits"]))


def model_size_bits(layers: Iterable[LayerSpec], precision: int | None = None) -> float:
    """Model size derived as 8 * precision * number of weight elements."""
    total = 0
    for layer in layers:
        total += 8 * (precision or layer.precision) * weight_elements(layer)
    return float(total)


@dataclass(frozen=True)
class CostProfile:
    """Prefix sums of training FLOPs and memory for every split point.

    ``flops[l]`` and ``mem[l]`` cover layers 1..l, so index 0 is the empty
    prefix and index L the whole network.
    """

    flops: np.ndarray
    mem: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.flops) - 1

    @property
    def total_flops(self) -> float:
        return float(self.flops[-1])

    @property
    def total_mem(self) -> float:
        return float(self.mem[-1])


def cost_profile(net: NetworkSpec, uniform_precision_scaling: bool = False) -> CostProfile:
    costs = [layer_cost(l, uniform_precision_scaling) for l in net.layers]
    flops = np.concatenate([[0], np.cumsum([c.train_flops for c in costs], dtype=np.float64)])
    mem = np.concatenate([[0], np.cumsum([c.mem_bytes for c in costs], dtype=np.float64)])
    return CostProfile(flops, mem)


def partition_costs(
    net: NetworkSpec, l_split: int, uniform_precision_scaling: bool = False
) -> tuple[int, int, int, int]:
    """(bottom_flops, top_flops, bottom_mem, top_mem) for split after layer ``l_split``."""
    if not 0 <= l_split <= net.depth:
        raise ValueError(f"split point {l_split} outside [0, {net.depth}]")
    costs = [layer_cost(l, uniform_precision_scaling) for l in net.layers]
    bottom, top = costs[:l_split], costs[l_split:]
    return (
        sum(c.train_flops for c in bottom),
        sum(c.train_flops for c in top),
        sum(c.mem_bytes for c in bottom),
        sum(c.mem_bytes for c in top),
    )


def conv(in_c: int, out_c: int, size: int, kernel: int = 3, **kw) -> LayerSpec:
    """Same-padded conv layer on a square ``size`` x ``size`` input."""
    return LayerSpec(LayerKind.CONV, in_h=size, in_w=size, in_c=in_c, out_h=size, out_w=size,
                     out_c=out_c, filt_h=kernel, filt_w=kernel, **kw)


def pool(channels: int, size: int, **kw) -> LayerSpec:
    """2x2 pooling that halves a square input."""
    return LayerSpec(LayerKind.POOL, in_h=size, in_w=size, in_c=channels, out_h=size // 2,
                     out_w=size // 2, out_c=channels, **kw)


def fc(in_size: int, out_size: int, **kw) -> LayerSpec:
    return LayerSpec(LayerKind.FC, in_size=in_size, out_size=out_size, **kw)


VGG11_PLAN: Sequence[int | str] = (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M")


def vgg11(image_size: int = 32, in_channels: int = 3, classes: int = 10, precision: int = 4) -> NetworkSpec:
    """VGG-11 for small RGB images (conv stack plus a 512-512-classes head)."""
    layers: list[LayerSpec] = []
    size, channels = image_size, in_channels
    for item in VGG11_PLAN:
        if item == "M":
            layers.append(pool(channels, size, precision=precision))
            size //= 2
        else:
            layers.append(conv(channels, int(item), size, precision=precision))
            channels = int(item)
    flat = channels * size * size
    layers += [fc(flat, 512, precision=precision), fc(512, 512, precision=precision),
               fc(512, classes, precision=precision)]
    return NetworkSpec(tuple(layers), model_size_bits(layers))
