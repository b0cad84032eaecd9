"""Configuration files, experiment launching, trace files and plot series."""

from .config import (
    ConfigError,
    ScenarioConfig,
    default_config,
    dump_config,
    load_config,
    parse_config,
)
from .runs import (
    RunResult,
    emit_plot_data,
    oracle_mismatches,
    read_trace,
    replay,
    run_batch,
    run_one,
    scenario_for,
    write_trace,
)

__all__ = [
    "ConfigError", "RunResult", "ScenarioConfig", "default_config", "dump_config", "emit_plot_data",
    "load_config", "oracle_mismatches", "parse_config", "read_trace", "replay", "run_batch", "run_one",
    "scenario_for", "write_trace",
]
