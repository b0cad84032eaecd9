"""Synthetic two-tier federated learning.

Each device holds a least-squares dataset (optionally with a bounded
sinusoidal term that makes the loss non-convex).  Every round three
trajectories start from the current global model and run ``K`` local steps:

* ``tilde``: the device's mini-batch SGD iterate (what is actually trained),
* ``full``: the same device using its full local gradient,
* ``central``: a single model following the gradient of the pooled loss.

The gap between them is what the divergence and convergence bounds talk
about, so the kernel records all three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .participation import DataStats


class LossFamily(str, Enum):
    CONVEX = "convex"
    NONCONVEX = "nonconvex"


@dataclass(frozen=True)
class SyntheticTask:
    features: tuple[np.ndarray, ...]
    targets: tuple[np.ndarray, ...]
    batch_sizes: tuple[int, ...]
    gateway_of: tuple[int, ...]
    family: LossFamily = LossFamily.CONVEX
    curvature: float = 0.0

    def __post_init__(self) -> None:
        n = len(self.features)
        if not (n == len(self.targets) == len(self.batch_sizes) == len(self.gateway_of)) or n == 0:
            raise ValueError("need matching, non-empty per-device features/targets/batch sizes/gateways")
        for x, y, b in zip(self.features, self.targets, self.batch_sizes):
            if x.ndim != 2 or y.shape != (x.shape[0],):
                raise ValueError("features must be (samples, dim) with one target per sample")
            if not 1 <= b <= x.shape[0]:
                raise ValueError(f"batch size {b} outside [1, {x.shape[0]}]")
        if self.family is LossFamily.CONVEX and self.curvature != 0:
            raise ValueError("the convex family has no sinusoidal term")
        gws = sorted(set(self.gateway_of))
        if gws != list(range(len(gws))):
            raise ValueError("gateway ids must be 0..M-1, each with at least one device")
        # sufficient statistics: F_n(w) = 1/2 w'Aw - b'w + c (+ curvature term)
        object.__setattr__(self, "_gram", tuple(x.T @ x / x.shape[0] for x in self.features))
        object.__setattr__(self, "_cross", tuple(x.T @ y / x.shape[0] for x, y in zip(self.features, self.targets)))
        object.__setattr__(self, "_const", tuple(0.5 * float(y @ y) / y.shape[0] for y in self.targets))
        sizes = np.array([x.shape[0] for x in self.features], dtype=float)
        object.__setattr__(self, "_pool", sizes / sizes.sum())

    @property
    def dim(self) -> int:
        return self.features[0].shape[1]

    @property
    def n_devices(self) -> int:
        return len(self.features)

    @property
    def n_gateways(self) -> int:
        return max(self.gateway_of) + 1

    @property
    def dataset_sizes(self) -> np.ndarray:
        return np.array([x.shape[0] for x in self.features])

    @property
    def pool_weights(self) -> np.ndarray:
        """Share of each device in the pooled dataset."""
        return self._pool

    def members(self, m: int) -> list[int]:
        return [n for n, g in enumerate(self.gateway_of) if g == m]

    def _extra(self, w: np.ndarray) -> float:
        return self.curvature * float(np.sum(1.0 - np.cos(w)))

    def _extra_grad(self, w: np.ndarray) -> np.ndarray:
        return self.curvature * np.sin(w)

    def loss(self, n: int, w: np.ndarray) -> float:
        return 0.5 * float(w @ self._gram[n] @ w) - float(self._cross[n] @ w) + self._const[n] + self._extra(w)

    def grad(self, n: int, w: np.ndarray) -> np.ndarray:
        return self._gram[n] @ w - self._cross[n] + self._extra_grad(w)

    def global_loss(self, w: np.ndarray) -> float:
        return float(sum(p * self.loss(n, w) for n, p in enumerate(self._pool)))

    def global_grad(self, w: np.ndarray) -> np.ndarray:
        gram = sum(p * g for p, g in zip(self._pool, self._gram))
        cross = sum(p * c for p, c in zip(self._pool, self._cross))
        return gram @ w - cross + self._extra_grad(w)

    def batch_grad(self, n: int, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        x, y = self.features[n][idx], self.targets[n][idx]
        return x.T @ (x @ w - y) / len(idx) + self._extra_grad(w)

    def grads(self, n: int, ws: np.ndarray) -> np.ndarray:
        """Local gradients at each row of ``ws``."""
        return ws @ self._gram[n] - self._cross[n] + self._extra_grad(ws)

    def global_grads(self, ws: np.ndarray) -> np.ndarray:
        return np.array([self.global_grad(w) for w in ws])

    def sample_spread(self, n: int, w: np.ndarray) -> float:
        """Root-mean-square distance of per-sample gradients from the local gradient."""
        return float(self.sample_spreads(n, w[None, :])[0])

    def sample_spreads(self, n: int, ws: np.ndarray) -> np.ndarray:
        x, y = self.features[n], self.targets[n]
        r = x @ ws.T - y[:, None]                       # (samples, points)
        second = (np.sum(x * x, axis=1) @ (r * r)) / len(y)
        mean = x.T @ r / len(y)                           # (dim, points)
        return np.sqrt(np.maximum(second - np.sum(mean * mean, axis=0), 0.0))

    def smoothness(self, n: int) -> float:
        """Exact smoothness constant of the local loss."""
        return float(np.linalg.eigvalsh(self._gram[n])[-1]) + self.curvature

    def optimum(self) -> np.ndarray:
        """Minimizer of the pooled loss (convex family only)."""
        if self.family is not LossFamily.CONVEX:
            raise ValueError("closed-form optimum only exists for the convex family")
        gram = sum(p * g for p, g in zip(self._pool, self._gram))
        cross = sum(p * c for p, c in zip(self._pool, self._cross))
        return np.linalg.solve(gram, cross)


def make_task(
    gateway_of: Sequence[int],
    dataset_sizes: Sequence[int],
    batch_sizes: Sequence[int],
    dim: int = 10,
    skew: float | Sequence[float] = 1.0,
    bias: float = 2.0,
    noise: float = 0.1,
    family: LossFamily | str = LossFamily.CONVEX,
    curvature: float = 0.0,
    seed: int | np.random.Generator = 0,
) -> SyntheticTask:
    """Random least-squares task with gateway-level heterogeneity.

    Samples come from a shared linear model with standard normal features.
    A gateway with skew ``s`` in [0, 1] perturbs a fraction ``s`` of its
    samples: features move by ``bias`` along a gateway-specific direction and
    the true weights by ``bias`` along another, each with a random sign.  The
    perturbation is zero-mean, so skewed gateways see a distorted, noisier
    picture of the same optimum.  A scalar ``skew`` is spread linearly from 0
    to that value across gateways.
    """
    rng = np.random.default_rng(seed)
    family = LossFamily(family)
    if family is LossFamily.NONCONVEX and curvature <= 0:
        curvature = 0.5
    M = max(gateway_of) + 1
    skews = np.linspace(0.0, skew, M) if np.isscalar(skew) else np.asarray(skew, dtype=float)
    if skews.shape != (M,) or np.any(skews < 0) or np.any(skews > 1):
        raise ValueError(f"need one skew in [0, 1] per gateway ({M})")
    w_true = rng.normal(size=dim)
    shift_dir = rng.normal(size=(M, dim))
    shift_dir /= np.linalg.norm(shift_dir, axis=1, keepdims=True)
    weight_shift = rng.normal(size=(M, dim))
    weight_shift /= np.linalg.norm(weight_shift, axis=1, keepdims=True)
    feats, targs = [], []
    for m, size in zip(gateway_of, dataset_sizes):
        # random signs keep the biased component zero-mean, so it adds spread, not a new optimum
        biased = (rng.random(size) < skews[m]) * rng.choice((-1.0, 1.0), size)
        x = rng.normal(size=(size, dim)) + bias * biased[:, None] * shift_dir[m]
        w = w_true + bias * rng.choice((-1.0, 1.0), size)[:, None] * np.abs(biased)[:, None] * weight_shift[m]
        y = np.einsum("ij,ij->i", x, w) + noise * rng.normal(size=size)
        feats.append(x)
        targs.append(y)
    return SyntheticTask(tuple(feats), tuple(targs), tuple(int(b) for b in batch_sizes), tuple(int(g) for g in gateway_of),
                         family, curvature if family is LossFamily.NONCONVEX else 0.0)


def task_for_environment(env, **kw) -> SyntheticTask:
    """Task shaped like an environment: same devices, dataset and batch sizes."""
    return make_task([d.gateway for d in env.devices], [d.dataset_size for d in env.devices],
                     [d.batch_size for d in env.devices], **kw)


def local_update(w: np.ndarray, grad: np.ndarray, step_size: float) -> np.ndarray:
    return w - step_size * grad


def weighted_mean(models: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    wts = np.asarray(weights, dtype=float)
    if wts.sum() <= 0:
        raise ValueError("weights must have positive sum")
    wts = wts / wts.sum()
    return np.einsum("i,ij->j", wts, np.asarray(models, dtype=float))


def gateway_aggregate(task: SyntheticTask, m: int, locals_: np.ndarray) -> np.ndarray:
    """Batch-size weighted mean of the final local models of gateway ``m``'s devices."""
    members = task.members(m)
    return weighted_mean([locals_[n] for n in members], [task.batch_sizes[n] for n in members])


def gateway_weight(task: SyntheticTask, m: int) -> float:
    return float(sum(task.batch_sizes[n] for n in task.members(m)))


def global_aggregate(task: SyntheticTask, gateway_models: np.ndarray, participating: Sequence[bool],
                     current: np.ndarray) -> np.ndarray:
    """Weighted mean over participating gateways; keeps ``current`` if none participated."""
    sel = [m for m, p in enumerate(participating) if p]
    if not sel:
        return current.copy()
    return weighted_mean([gateway_models[m] for m in sel], [gateway_weight(task, m) for m in sel])


@dataclass
class RoundRecord:
    t: int
    start: np.ndarray
    tilde: np.ndarray | None          # (N, K+1, d)
    full: np.ndarray | None           # (N, K+1, d)
    central: np.ndarray | None        # (K+1, d)
    gateway_models: np.ndarray        # (M, d); rows of untrained gateways are NaN
    participating: np.ndarray         # (M,) aggregated into the next global model
    local_losses: np.ndarray          # (N,) loss at the final local iterate; NaN if not trained
    global_loss: float                # pooled loss of the next global model


def run_round(task: SyntheticTask, start: np.ndarray, participating: Sequence[bool], step_size: float,
              local_epochs: int, rng: np.random.Generator, t: int = 0, track: bool = True) -> RoundRecord:
    """One round from global model ``start``.

    With ``track`` every device runs all three trajectories; otherwise only
    devices of participating gateways run their mini-batch iterate.
    """
    K, d, N, M = local_epochs, task.dim, task.n_devices, task.n_gateways
    participating = np.asarray(participating, dtype=bool)
    if participating.shape != (M,):
        raise ValueError(f"need one participation flag per gateway ({M})")
    active = [n for n in range(N) if track or participating[task.gateway_of[n]]]
    tilde = np.full((N, K + 1, d), np.nan)
    full = np.full((N, K + 1, d), np.nan) if track else None
    central = None
    for n in range(N):
        # every device draws its batch so the stream does not depend on the schedule
        idx = rng.choice(task.features[n].shape[0], task.batch_sizes[n], replace=False)
        if n not in active:
            continue
        x, y = task.features[n][idx], task.targets[n][idx]
        gram, cross = x.T @ x / len(idx), x.T @ y / len(idx)
        w = start.copy()
        tilde[n, 0] = w
        for k in range(K):
            w = local_update(w, gram @ w - cross + task._extra_grad(w), step_size)
            tilde[n, k + 1] = w
        if track:
            w = start.copy()
            full[n, 0] = w
            for k in range(K):
                w = local_update(w, task.grad(n, w), step_size)
                full[n, k + 1] = w
    if track:
        central = np.empty((K + 1, d))
        v = start.copy()
        central[0] = v
        for k in range(K):
            v = local_update(v, task.global_grad(v), step_size)
            central[k + 1] = v
    gateway_models = np.full((M, d), np.nan)
    losses = np.full(N, np.nan)
    for m in range(M):
        members = task.members(m)
        if all(n in active for n in members):
            gateway_models[m] = gateway_aggregate(task, m, tilde[:, K])
            for n in members:
                losses[n] = task.loss(n, tilde[n, K])
    nxt = global_aggregate(task, gateway_models, participating, start)
    return RoundRecord(t, start.copy(), tilde if track else None, full, central, gateway_models,
                       participating.copy(), losses, task.global_loss(nxt))


@dataclass
class FlTrajectories:
    task: SyntheticTask
    step_size: float
    local_epochs: int
    initial: np.ndarray
    rounds: list[RoundRecord] = field(default_factory=list)

    @property
    def model(self) -> np.ndarray:
        """Current global model."""
        if not self.rounds:
            return self.initial
        last = self.rounds[-1]
        return global_aggregate(self.task, last.gateway_models, last.participating, last.start)

    @property
    def loss_curve(self) -> np.ndarray:
        return np.array([r.global_loss for r in self.rounds])

    def tracked(self) -> list[RoundRecord]:
        return [r for r in self.rounds if r.full is not None]


class FederatedRun:
    """Stateful driver: call :meth:`step` once per round with the participating gateways."""

    def __init__(self, task: SyntheticTask, step_size: float, local_epochs: int,
                 seed: int | np.random.Generator = 0, initial: np.ndarray | None = None, track: bool = True) -> None:
        if step_size <= 0:
            raise ValueError("step size must be positive")
        self.rng = np.random.default_rng(seed)
        w0 = np.zeros(task.dim) if initial is None else np.asarray(initial, dtype=float).copy()
        self.traj = FlTrajectories(task, step_size, local_epochs, w0)
        self.track = track
        self.model = w0

    def step(self, participating: Sequence[bool]) -> RoundRecord:
        rec = run_round(self.traj.task, self.model, participating, self.traj.step_size, self.traj.local_epochs,
                        self.rng, t=len(self.traj.rounds), track=self.track)
        self.traj.rounds.append(rec)
        self.model = global_aggregate(self.traj.task, rec.gateway_models, rec.participating, rec.start)
        return rec


# -- constants and bound checks ------------------------------------------------

def estimate_constants(traj: FlTrajectories, margin: float = 0.1) -> DataStats:
    """Largest observed value of each constant along the trajectories, plus ``margin``.

    Smoothness comes from gradient-difference ratios between the paired
    iterates, the gradient gap from local-vs-pooled gradients at the central
    iterates, the per-sample spread from the mini-batch iterates and the
    gradient-norm bound from the same iterates.
    """
    task = traj.task
    N = task.n_devices
    smooth = np.zeros(N)
    gap = np.zeros(N)
    spread = np.zeros(N)
    lip = np.zeros(N)
    recs = traj.tracked()
    if not recs:
        raise ValueError("constant estimation needs tracked rounds")
    for rec in recs:
        V = rec.central
        gv = task.global_grads(V)
        for n in range(N):
            W, Wt = rec.full[n], rec.tilde[n]
            g_v, g_w, g_t = task.grads(n, V), task.grads(n, W), task.grads(n, Wt)
            gap[n] = max(gap[n], float(np.max(np.linalg.norm(g_v - gv, axis=1))))
            for a, b, ga, gb in ((W, V, g_w, g_v), (Wt, W, g_t, g_w)):
                dist = np.linalg.norm(a - b, axis=1)
                ok = dist > 0
                if ok.any():
                    smooth[n] = max(smooth[n], float(np.max(np.linalg.norm(ga - gb, axis=1)[ok] / dist[ok])))
            spread[n] = max(spread[n], float(np.max(task.sample_spreads(n, Wt))))
            lip[n] = max(lip[n], float(np.max(np.linalg.norm(g_t, axis=1))))
    for n in range(N):
        if smooth[n] <= 0:
            smooth[n] = task.smoothness(n)  # no distinct iterate pairs to measure
    scale = 1.0 + margin
    return DataStats(spread * scale, gap * scale, smooth * scale, lip * scale)


def _growth(step_size: float, smooth: np.ndarray, k: np.ndarray) -> np.ndarray:
    return (step_size * smooth[:, None] + 1.0) ** k[None, :] - 1.0


@dataclass(frozen=True)
class DriftReport:
    full_gap: np.ndarray      # (T, N, K+1) ||w_n^k - v^k||
    full_bound: np.ndarray    # (N, K+1)
    batch_gap: np.ndarray     # (T, N, K+1) ||w~_n^k - w_n^k||
    batch_bound: np.ndarray   # (N, K+1)

    @property
    def full_violations(self) -> int:
        return int(np.sum(self.full_gap > self.full_bound[None] * (1 + 1e-9) + 1e-12))

    @property
    def batch_mean_gap(self) -> np.ndarray:
        return self.batch_gap.mean(axis=0)


def check_drift_bounds(traj: FlTrajectories, stats: DataStats, step_size: float | None = None) -> DriftReport:
    beta = traj.step_size if step_size is None else step_size
    task = traj.task
    recs = traj.tracked()
    K = traj.local_epochs
    k = np.arange(K + 1)
    growth = _growth(beta, stats.smoothness, k)
    full_bound = stats.delta[:, None] / stats.smoothness[:, None] * growth
    batch = np.sqrt(np.asarray(task.batch_sizes, dtype=float))
    batch_bound = (stats.sigma / (stats.smoothness * batch))[:, None] * growth
    full_gap = np.array([np.linalg.norm(r.full - r.central[None], axis=2) for r in recs])
    batch_gap = np.array([np.linalg.norm(r.tilde - r.full, axis=2) for r in recs])
    return DriftReport(full_gap, full_bound, batch_gap, batch_bound)


@dataclass(frozen=True)
class DivergenceReport:
    divergence: np.ndarray    # (T, M) ||w^_m - v^K||
    bound: np.ndarray         # (M,)

    @property
    def violations(self) -> int:
        return int(np.sum(self.divergence > self.bound[None]))

    @property
    def mean(self) -> np.ndarray:
        return self.divergence.mean(axis=0)


def check_divergence(traj: FlTrajectories, bound: Sequence[float]) -> DivergenceReport:
    recs = traj.tracked()
    task = traj.task
    K = traj.local_epochs
    div = np.array([[np.linalg.norm(gateway_aggregate(task, m, r.tilde[:, K]) - r.central[K])
                     for m in range(task.n_gateways)] for r in recs])
    return DivergenceReport(div, np.asarray(bound, dtype=float))


def participation_shares(task: SyntheticTask, rates: Sequence[float]) -> np.ndarray:
    """Per-device share of the rate-weighted batch mass."""
    mass = np.array([rates[task.gateway_of[n]] * task.batch_sizes[n] for n in range(task.n_devices)], dtype=float)
    return mass / mass.sum()


@dataclass(frozen=True)
class ConvergenceReport:
    family: LossFamily
    empirical: float
    bound: float
    terms: dict

    @property
    def holds(self) -> bool:
        return self.empirical <= self.bound

    def to_dict(self) -> dict:
        return {"family": self.family.value, "empirical": self.empirical, "bound": self.bound,
                "holds": self.holds, **self.terms}


def convergence_report(traj: FlTrajectories, stats: DataStats, rates: Sequence[float]) -> ConvergenceReport:
    """Observed optimality measure next to the corresponding theoretical bound.

    Convex: F(W^T) - F(w*) against the bound built from the measured
    constants; an inactive (non-positive) denominator yields an infinite
    bound.  Non-convex: mean squared pooled gradient against the sum of its
    three bound terms.
    """
    task = traj.task
    recs = traj.tracked()
    if not recs:
        raise ValueError("report needs tracked rounds")
    T = len(recs)
    beta, K = traj.step_size, traj.local_epochs
    xi = participation_shares(task, rates)
    L = float(np.max(stats.smoothness))
    if task.family is LossFamily.CONVEX:
        w_star = task.optimum()
        f_star = task.global_loss(w_star)
        final = traj.model
        empirical = task.global_loss(final) - f_star
        omega = min(1.0 / max(float(np.sum((r.start - w_star) ** 2)), 1e-300) for r in recs)
        eps = min(task.global_loss(r.central[K]) - f_star for r in recs)
        phi = omega * (1.0 - beta * L / 2.0)
        rho, delta = float(np.max(stats.lipschitz)), float(np.max(stats.delta))
        batch = np.sqrt(np.asarray(task.batch_sizes, dtype=float))
        drift = rho * (delta + float(np.sum(xi * stats.sigma / batch))) * ((beta * L + 1.0) ** K - 1.0)
        mismatch = beta * (delta + float(np.sum(np.abs(xi - task.pool_weights) * stats.lipschitz)))
        denom = beta * phi - (drift + mismatch) / (eps ** 2 * K * L) if eps > 0 else -math.inf
        bound = 1.0 / (T * denom) if denom > 0 else math.inf
        terms = {"omega": omega, "epsilon": eps, "phi": phi, "denominator": denom, "vacuous": not denom > 0}
        return ConvergenceReport(task.family, empirical, bound, terms)
    N = task.n_devices
    sq = np.array([[[float(np.sum(task.grad(n, r.tilde[n, k]) ** 2)) for k in range(K)] for n in range(N)]
                   for r in recs])  # (T, N, K)
    w2 = xi ** 2
    first = 2.0 / (K * beta * T) * (task.global_loss(recs[0].start) - task.global_loss(traj.model))
    second = L * beta * N / T * float(np.sum(w2[None, :, None] * sq))
    cum = np.concatenate([np.zeros((T, N, 1)), np.cumsum(sq, axis=2)[:, :, :-1]], axis=2)  # sum_{j<k}
    kk = np.arange(K)[None, None, :]
    third = N * beta ** 2 / (K * T) * float(np.sum(w2[None, :, None] * stats.smoothness[None, :, None] ** 2
                                                   * beta ** 2 * kk * cum))
    empirical = float(np.mean([np.sum(task.global_grad(r.start) ** 2) for r in recs]))
    return ConvergenceReport(task.family, empirical, first + second + third,
                             {"descent": first, "variance": second, "drift": third})
