"""Divergence bounds and the per-gateway participation rates derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class DataStats:
    """Per-device gradient statistics.

    ``sigma``: per-sample gradient deviation, ``delta``: local-vs-global
    gradient gap, ``smoothness``: L_n, ``lipschitz``: bound on the gradient norm.
    """

    sigma: np.ndarray
    delta: np.ndarray
    smoothness: np.ndarray
    lipschitz: np.ndarray

    def __post_init__(self) -> None:
        for name in ("sigma", "delta", "smoothness", "lipschitz"):
            arr = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arr)
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite and non-negative")
        if np.any(self.smoothness <= 0):
            raise ValueError("smoothness constants must be positive")
        sizes = {len(self.sigma), len(self.delta), len(self.smoothness), len(self.lipschitz)}
        if len(sizes) != 1:
            raise ValueError("all statistics need one entry per device")

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("sigma", "delta", "smoothness", "lipschitz")}


@dataclass(frozen=True)
class ParticipationPlan:
    divergence: np.ndarray
    rates: np.ndarray
    step_size: float
    local_epochs: int


def divergence_bound(
    members: Sequence[int],
    batch_sizes: Sequence[int],
    stats: DataStats,
    step_size: float,
    local_epochs: int,
) -> float:
    """Bound on ||gateway aggregate - centralized model|| after ``local_epochs`` steps."""
    weights = np.array([batch_sizes[n] for n in members], dtype=float)
    weights /= weights.sum()
    total = 0.0
    for w, n in zip(weights, members):
        L = stats.smoothness[n]
        if L <= 0:
            raise ValueError(f"device {n} has non-positive smoothness")
        growth = (step_size * L + 1.0) ** local_epochs - 1.0
        total += w * (stats.sigma[n] / (L * math.sqrt(batch_sizes[n])) + stats.delta[n] / L) * growth
    return float(total)


def participation_rates(divergence: Sequence[float], n_channels: int) -> np.ndarray:
    """min(J * (1/Phi_m) / sum(1/Phi), 1) per gateway; clipped entries are not redistributed."""
    phi = np.asarray(divergence, dtype=float)
    if np.any(phi <= 0) or not np.all(np.isfinite(phi)):
        raise ValueError("divergence bounds must be finite and positive (a zero bound asks for an infinite rate)")
    inv = 1.0 / phi
    return np.minimum(n_channels * inv / inv.sum(), 1.0)


def participation_plan(env, stats: DataStats, step_size: float) -> ParticipationPlan:
    """Divergence bounds and rates for every gateway of an :class:`~ddsra.env_model.Environment`."""
    batch = [d.batch_size for d in env.devices]
    phi = np.array([divergence_bound(env.members[m], batch, stats, step_size, env.local_epochs)
                    for m in range(env.n_gateways)])
    return ParticipationPlan(phi, participation_rates(phi, env.n_channels), step_size, env.local_epochs)
