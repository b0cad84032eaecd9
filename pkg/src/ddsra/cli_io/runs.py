"""Launching configured experiments and persisting their traces and plot series."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .. import __version__
from ..core import brute_force_assignment
from ..fl_kernel import task_for_environment
from ..sim_harness import RoundTrace, Scenario, Summary, build_scenario, run_experiment, summarize
from .config import ScenarioConfig

TRACE_FORMAT = "ddsra-trace"
TRACE_VERSION = 1


@dataclass(frozen=True)
class RunResult:
    policy: str
    V: float | None           # None for baselines, which ignore V
    seed: int
    rates: np.ndarray
    summary: Summary
    traces: list[RoundTrace]

    @property
    def label(self) -> str:
        v = "" if self.V is None else f"_V{self.V:g}"
        return f"{self.policy}{v}_seed{self.seed}"

    def summary_record(self) -> dict:
        rec = {"policy": self.policy, "V": self.V, "seed": self.seed}
        rec.update(self.summary.to_dict())
        rec["min_participation"] = float(np.min(self.summary.participation))
        rec["target_rates"] = self.rates.tolist()
        return _clean(rec)


def _clean(obj):
    # JSON has no NaN/inf; write them as null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def scenario_for(config: ScenarioConfig, seed: int) -> Scenario:
    env = config.environment()
    task = task_for_environment(env, seed=seed, **config.task_kwargs())
    return build_scenario(env, task, config.step_size, stats=config.fixed_stats(),
                          warmup_rounds=config.stats.warmup_rounds, seed=seed)


def run_one(config: ScenarioConfig, policy: str, seed: int, V: float | None = None,
            scenario: Scenario | None = None) -> RunResult:
    """One (policy, V, seed) experiment; fully determined by its arguments."""
    scenario = scenario or scenario_for(config, seed)
    ddsra = policy == "ddsra"
    if ddsra and V is None:
        raise ValueError("ddsra needs a V")
    pol = config.policy(policy, V if ddsra else 0.0)
    traces = run_experiment(scenario, pol, config.rounds, seed=seed, train=config.train)
    return RunResult(policy, V if ddsra else None, seed, scenario.rates,
                     summarize(traces, scenario.n_gateways), traces)


def run_batch(config: ScenarioConfig, policies: Sequence[str] | None = None,
              V_values: Sequence[float] | None = None, seeds: Sequence[int] | None = None) -> list[RunResult]:
    """Every policy for every seed; DDSRA once per V, baselines once per seed."""
    policies = list(policies or config.policies)
    V_values = list(V_values or config.V)
    out = []
    for seed in seeds or config.seeds:
        scenario = scenario_for(config, seed)
        for policy in policies:
            for V in (V_values if policy == "ddsra" else [None]):
                out.append(run_one(config, policy, seed, V, scenario))
    return out


# -- traces ---------------------------------------------------------------------

def trace_header(config: ScenarioConfig, result: RunResult) -> dict:
    return {
        "format": TRACE_FORMAT, "version": TRACE_VERSION, "code_version": __version__,
        "config_hash": config.digest(), "policy": result.policy, "V": result.V,
        "seed": result.seed, "rounds": config.rounds, "config": config.model_dump(mode="json"),
    }


def write_trace(path: str | Path, config: ScenarioConfig, result: RunResult) -> Path:
    """JSON Lines: a header object, then one object per round."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_clean(trace_header(config, result)), sort_keys=True) + "\n")
        for tr in result.traces:
            fh.write(json.dumps(_clean(tr.to_record()), sort_keys=True) + "\n")
    return path


def read_trace(path: str | Path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ValueError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != TRACE_FORMAT:
        raise ValueError(f"{path} is not a trace file")
    if header.get("version") != TRACE_VERSION:
        raise ValueError(f"{path}: unsupported trace version {header.get('version')}")
    return header, [json.loads(line) for line in lines[1:]]


def replay(path: str | Path) -> RunResult:
    """Re-run the experiment a trace file describes."""
    from .config import parse_config

    header, _ = read_trace(path)
    config = parse_config(header["config"])
    return run_one(config, header["policy"], header["seed"], header["V"])


# -- oracle check -----------------------------------------------------------------

def oracle_mismatches(result: RunResult, rel_tol: float = 1e-9) -> list[int]:
    """Rounds whose channel assignment misses the exhaustive-search optimum.

    Only meaningful for DDSRA traces; exhaustive search is over all injective
    channel-to-gateway maps, so keep M small.
    """
    if result.policy != "ddsra":
        return []
    bad = []
    for tr in result.traces:
        delays = np.array(tr.delays)
        best, _ = brute_force_assignment(delays, np.array(tr.queues), result.V)
        if not math.isfinite(best):
            continue
        if tr.objective > best + rel_tol * max(1.0, abs(best)):
            bad.append(tr.t)
    return bad


# -- plot series ----------------------------------------------------------------

def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if isinstance(x, float) and not math.isfinite(x) else
                        (repr(x) if isinstance(x, float) else x) for x in row])
    return path


def _v(result: RunResult) -> str:
    return "" if result.V is None else repr(float(result.V))


def emit_plot_data(results: Sequence[RunResult], out_dir: str | Path) -> list[Path]:
    """CSV series behind the participation, loss, latency and per-policy figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [
        _write_csv(out / "participation.csv",
                   ("policy", "V", "seed", "gateway", "target_rate", "participation", "success"),
                   ((r.policy, _v(r), r.seed, m, float(r.rates[m]), float(r.summary.participation[m]),
                     float(r.summary.success[m]))
                    for r in results for m in range(len(r.rates)))),
        _write_csv(out / "loss.csv", ("policy", "V", "seed", "round", "global_loss"),
                   ((r.policy, _v(r), r.seed, t, float(x)) for r in results
                    for t, x in enumerate(r.summary.loss_curve))),
        _write_csv(out / "latency.csv", ("policy", "V", "seed", "round", "latency", "cumulative_latency"),
                   ((r.policy, _v(r), r.seed, tr.t, tr.latency, float(c)) for r in results
                    for tr, c in zip(r.traces, r.summary.cumulative_latency))),
    ]
    groups: dict[tuple[str, str], list[RunResult]] = {}
    for r in results:
        groups.setdefault((r.policy, _v(r)), []).append(r)
    rows = []
    for (policy, v), rs in groups.items():
        part = np.mean([r.summary.participation for r in rs], axis=0)
        succ = np.mean([r.summary.success for r in rs], axis=0)
        rows += [(policy, v, len(rs), m, float(part[m]), float(succ[m])) for m in range(len(part))]
    files.append(_write_csv(out / "participation_by_policy.csv",
                            ("policy", "V", "n_seeds", "gateway", "participation", "success"), rows))
    return files
