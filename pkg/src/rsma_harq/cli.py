"""Command line front end for SNR sweeps."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .sim import SCHEMES, SimConfig, emit_plot_data, emit_results, load_config, run_sweep, snr_grid


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rsma-harq",
        description="Monte Carlo throughput / PER / MER / latency sweeps for RSMA with HARQ.",
    )
    p.add_argument("--config", help="file of 'field = value' lines; flags override it")
    p.add_argument("--scheme", help=f"comma separated subset of {','.join(SCHEMES)} or 'all'")
    p.add_argument("--snr-min", type=float)
    p.add_argument("--snr-max", type=float)
    p.add_argument("--snr-step", type=float)
    p.add_argument("--drops", type=int, help="drops per SNR point")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--max-retx", type=int, choices=(1, 2), help="retransmissions per packet, all streams")
    p.add_argument("--retx-fraction", type=float)
    p.add_argument("--target-eps", type=float, help="size retransmissions for this average backtrack PER")
    p.add_argument("--mcs-table", help="MCS table file (.json pairs or 'modulation rate' lines)")
    p.add_argument("--backoff-db", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="results.csv", help="results file")
    p.add_argument("--format", choices=("csv", "json"), default=None)
    p.add_argument("--emit-plot-data", metavar="DIR", help="also write per-plot CSVs into DIR")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> tuple[SimConfig, list[str]]:
    values = load_config(args.config) if args.config else {}
    grid = values.get("snr_grid_db", SimConfig.snr_grid_db)
    if any(x is not None for x in (args.snr_min, args.snr_max, args.snr_step)):
        lo = args.snr_min if args.snr_min is not None else min(grid)
        hi = args.snr_max if args.snr_max is not None else max(grid)
        step = args.snr_step if args.snr_step is not None else 5.0
        values["snr_grid_db"] = snr_grid(lo, hi, step)
    flag_fields = {
        "drops": "num_realizations",
        "seed": "master_seed",
        "retx_fraction": "retx_fraction",
        "target_eps": "target_eps",
        "mcs_table": "mcs_table",
        "backoff_db": "backoff_db",
        "workers": "workers",
    }
    for flag, name in flag_fields.items():
        v = getattr(args, flag)
        if v is not None:
            values[name] = v
    if args.max_retx is not None:
        values["max_retx_common"] = args.max_retx
        values["max_retx_private"] = (args.max_retx,)
    schemes_text = args.scheme if args.scheme is not None else values.pop("scheme", "all")
    values.pop("scheme", None)
    schemes = list(SCHEMES) if schemes_text == "all" else [s.strip() for s in schemes_text.split(",")]
    bad = [s for s in schemes if s not in SCHEMES]
    if bad:
        raise ValueError(f"unknown scheme(s) {bad}; choose from {SCHEMES}")
    return SimConfig(scheme=schemes[0], **values), schemes


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        base, schemes = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    fmt = args.format or ("json" if args.out.endswith(".json") else "csv")
    results = []
    for s in schemes:
        res = run_sweep(replace(base, scheme=s))
        for p in res.points:
            logging.info("%-8s %5.1f dB  throughput %.4f  latency %s  (%.1fs)",
                         s, p.snr_db, p.throughput, p.latency, p.wall_time)
        results.append(res)
    try:
        emit_results(results, fmt, args.out)
        if args.emit_plot_data:
            emit_plot_data(results, args.emit_plot_data)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0
