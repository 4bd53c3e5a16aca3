"""``tokensim`` command line: simulate, sweep, plot, validate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import io
from .montecarlo import (
    RunResult,
    ScenarioConfig,
    aggregate,
    preset,
    resolve_workers,
    run_sweep,
    with_overrides,
)

log = logging.getLogger("tokensim")


def _default_out() -> str:
    return os.environ.get("TOKENSIM_OUT", "results")


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="override scenario.master_seed")
    p.add_argument("--out", default=None, help="output directory (default: $TOKENSIM_OUT or ./results)")
    p.add_argument("--runs", type=int, help="override the Monte Carlo run count")
    p.add_argument("--timesteps", type=int, help="override the number of simulated days")
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: CPU count; 1 forces serial execution)")
    p.add_argument("--no-noise", action="store_true", help="deterministic arrivals, no price shocks")
    p.add_argument("--no-replenish", action="store_true", help="platform fees go to the treasury")
    p.add_argument("--no-behavior", action="store_true", help="disable developers, users and fees")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tokensim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario from a config file")
    p.add_argument("--config", required=True)
    _add_run_options(p)

    p = sub.add_parser("sweep", help="run a preset or a list of scenarios and chart the outcomes")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=("table1", "table2"))
    src.add_argument("--configs", nargs="+", metavar="PATH")
    p.add_argument("--no-charts", action="store_true")
    _add_run_options(p)

    p = sub.add_parser("plot", help="chart one variable from CSV files")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="CSV")
    p.add_argument("--var", required=True, choices=sorted(io.CHART_LABELS))
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="check a config file and print it with defaults filled in")
    p.add_argument("--config", required=True)
    return parser


def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    return with_overrides(
        config,
        master_seed=args.seed,
        runs=args.runs,
        timesteps=args.timesteps,
        noise=False if args.no_noise else None,
        replenish=False if args.no_replenish else None,
        behavior=False if args.no_behavior else None,
    )


def _run(configs: Sequence[ScenarioConfig], args, out: Path, chart_name: Optional[str]) -> int:
    out.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(args.workers)

    def write_runs(config, runs):
        io.write_timeseries_csv(runs, out / io.scenario_filename(config))

    entries = run_sweep(configs, workers=workers, on_scenario=write_runs)
    manifest = {"scenarios": []}
    ok = []
    for entry in entries:
        cfg = entry.config
        item = {
            "name": cfg.name,
            "initial_pool_xns": cfg.initial_pool_xns,
            "decay_rate_per_day": cfg.decay_rate_per_day,
            "runs": cfg.runs,
            "timesteps": cfg.timesteps,
            "master_seed": cfg.master_seed,
            "toggles": {"noise": cfg.noise, "replenish": cfg.replenish, "behavior": cfg.behavior},
        }
        if entry.error is not None:
            item["error"] = entry.error
            print(f"error: scenario {cfg.name} A0={cfg.initial_pool_xns:g}: {entry.error}", file=sys.stderr)
        else:
            mean_file = io.scenario_filename(cfg, "_mean")
            io.write_timeseries_csv(entry.aggregate, out / mean_file)
            item.update(runs_csv=io.scenario_filename(cfg), mean_csv=mean_file,
                        steps_executed=entry.aggregate.runs * entry.aggregate.mean.shape[0],
                        max_supply_drift=entry.max_supply_drift,
                        max_identity_error=entry.max_identity_error)
            ok.append(entry.aggregate)
        manifest["scenarios"].append(item)
    if chart_name is not None and ok:
        manifest["charts"] = []
        for var in io.OUTCOMES:
            name = f"{chart_name}_{var}.svg"
            io.render_line_chart(ok, var, out / name)
            manifest["charts"].append(name)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return 0 if len(ok) == len(entries) else 1


def cmd_simulate(args) -> int:
    config = _apply_overrides(io.load_scenario_config(args.config), args)
    return _run([config], args, Path(args.out or _default_out()), None)


def cmd_sweep(args) -> int:
    if args.preset:
        configs = [_apply_overrides(c, args) for c in preset(args.preset)]
        chart_name = args.preset
    else:
        configs = [_apply_overrides(io.load_scenario_config(p), args) for p in args.configs]
        chart_name = "sweep"
    return _run(configs, args, Path(args.out or _default_out()), None if args.no_charts else chart_name)


def cmd_plot(args) -> int:
    results = {}
    for path in args.inputs:
        runs = io.read_timeseries_csv(path)
        if "mean" in runs:
            results[Path(path).stem] = io.aggregate_from_records(runs["mean"])
        else:
            results[Path(path).stem] = aggregate(
                None, [RunResult(r, io.records_to_array(recs)) for r, recs in sorted(runs.items())])
    io.render_line_chart(results, args.var, args.out)
    return 0


def cmd_validate(args) -> int:
    config = io.load_scenario_config(args.config)
    sys.stdout.write(io.dump_scenario_config(config))
    return 0


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "plot": cmd_plot, "validate": cmd_validate}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (io.ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
