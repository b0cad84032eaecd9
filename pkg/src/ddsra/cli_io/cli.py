"""Command line: ``ddsra run --config cfg.json --policy ddsra --V 1000 --out results/``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from .. import __version__
from .config import POLICY_NAMES, ConfigError, dump_config, load_config, parse_config
from .runs import RunResult, emit_plot_data, oracle_mismatches, run_batch, write_trace

log = logging.getLogger("ddsra")

EXIT_ORACLE = 3


def _float_list(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _u64(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddsra", description="Gateway scheduling and resource allocation experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run experiments and write traces")
    run.add_argument("--config", type=Path, help="JSON configuration (default: bundled reference deployment)")
    run.add_argument("--policy", choices=POLICY_NAMES + ("all",), default="ddsra")
    run.add_argument("--rounds", type=int, help="rounds per experiment (overrides the config)")
    run.add_argument("--V", type=float, help="trade-off weight for ddsra (overrides the config)")
    run.add_argument("--sweep-V", type=_float_list, metavar="a,b,c", help="run ddsra once per listed V")
    run.add_argument("--seed", type=_u64, action="append", help="seed (repeatable; overrides the config)")
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--format", choices=("table", "jsonl"), default="table", help="summary format on stdout")
    run.add_argument("--no-train", action="store_true", help="skip FL training (latency and participation only)")
    run.add_argument("--oracle-check", action="store_true",
                     help="verify every ddsra channel assignment against exhaustive search")

    show = sub.add_parser("config", help="print the effective configuration")
    show.add_argument("--config", type=Path)
    return parser


def _table(rows: Sequence[dict]) -> str:
    cols = ("policy", "V", "seed", "rounds", "mean_latency", "min_participation", "energy_failures", "final_loss")
    cells = [[_fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(x.ljust(w) for x, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    updates = {}
    if args.rounds is not None:
        if args.rounds < 0:
            raise ConfigError("--rounds must be non-negative")
        updates["rounds"] = args.rounds
    if args.seed:
        updates["seeds"] = args.seed
    if args.no_train:
        updates["train"] = False
    if args.sweep_V:
        updates["V"] = args.sweep_V
    elif args.V is not None:
        updates["V"] = [args.V]
    if updates:
        config = parse_config({**config.model_dump(mode="json"), **updates})
    policies = list(POLICY_NAMES) if args.policy == "all" else [args.policy]

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.json")
    results: list[RunResult] = run_batch(config, policies)
    records = []
    failed = False
    for res in results:
        write_trace(out / f"{res.label}.trace.jsonl", config, res)
        rec = res.summary_record()
        if args.oracle_check and res.policy == "ddsra":
            bad = oracle_mismatches(res)
            rec["oracle_mismatches"] = len(bad)
            if bad:
                failed = True
                log.error("%s: assignment differs from exhaustive search in rounds %s", res.label, bad[:10])
        records.append(rec)
    with (out / "summary.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    emit_plot_data(results, out / "plot_data")
    if args.format == "table":
        print(_table(records))
    else:
        for rec in records:
            print(json.dumps(rec, sort_keys=True))
    return EXIT_ORACLE if failed else 0


def main(argv: Sequence[str] | None = None) -> int:
    level = getattr(logging, os.environ.get("DDSRA_LOG_LEVEL", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "config":
            sys.stdout.write(dump_config(load_config(args.config)))
            return 0
        return _run(args)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"ddsra: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
