"""``v2xsim`` command line: run scenarios, render figures, list presets."""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, Configs, apply_overrides, parse_config
from .engine import Simulation
from .mobility import SCENARIOS, build_scenario

log = logging.getLogger("v2xsim")

SEED_ENV = "V2XSIM_SEED"


def resolve_config(args) -> Configs:
    text = Path(args.config).read_text() if args.config else ""
    cfg = parse_config(text)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    over = []
    if args.scenario:
        over.append(f"scenario.name={args.scenario}")
    if args.dcc:
        over.append(f"sim.dcc_enabled={args.dcc}")
    if args.duration_ms is not None:
        over.append(f"sim.duration_ms={args.duration_ms}")
    if args.seed is not None:
        over.append(f"sim.seed={args.seed}")
    elif os.environ.get(SEED_ENV):
        over.append(f"sim.seed={os.environ[SEED_ENV]}")
    return apply_overrides(cfg, over) if over else cfg


def execute(cfg: Configs, out: Path) -> dict:
    """Run one configuration and write its artifacts into ``out``."""
    from .outputs import write_run

    started = dt.datetime.now(dt.timezone.utc)
    fleet = build_scenario(cfg.scenario.build(), cfg.sim.seed)
    result = Simulation(fleet, cfg.sim, cfg.sps, cfg.dcc, cfg.channel, cfg.grid).run()
    finished = dt.datetime.now(dt.timezone.utc)
    return write_run(result, cfg, out, started, finished)


def _execute_job(job):
    cfg, out = job
    execute(cfg, out)
    return str(out)


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    if not args.seeds:
        log.info("running %s (%d UEs), dcc=%s, seed=%d, %d ms", cfg.scenario.name,
                 cfg.scenario.build().vehicle_count, cfg.sim.dcc_enabled, cfg.sim.seed, cfg.sim.duration_ms)
        execute(cfg, out)
        print(out)
        return 0
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    jobs = [(replace(cfg, sim=replace(cfg.sim, seed=s)), out / f"seed-{s}") for s in seeds]
    for c, _ in jobs:
        c.validate()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for path in pool.map(_execute_job, jobs):
                print(path)
    else:
        for job in jobs:
            print(_execute_job(job))
    return 0


def cmd_plot(args) -> int:
    from .plots import FIGURES, render

    figures = FIGURES if args.figure == "all" else [args.figure]
    for f in figures:
        out = args.output if args.output and len(figures) == 1 else None
        print(render(args.input, f, out, ue=args.ue))
    return 0


def cmd_scenarios(args) -> int:
    print(f"{'name':<14} {'vehicles':>8} {'veh/km/lane':>11} {'speed km/h':>10}")
    for sc in SCENARIOS.values():
        print(f"{sc.name:<14} {sc.vehicle_count:>8} {sc.density_per_km_lane:>11g} {sc.speed_kmh:>10g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="v2xsim", description="C-V2X mode 4 sidelink simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario and write CSV/JSON artifacts")
    r.add_argument("--scenario", choices=sorted(SCENARIOS) + ["custom"])
    r.add_argument("--dcc", choices=("on", "off"))
    r.add_argument("--seed", type=int, help=f"RNG seed (falls back to ${SEED_ENV}, then the config)")
    r.add_argument("--duration-ms", type=int)
    r.add_argument("--config", help="line-oriented key = value config file")
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seeds", help="comma-separated seeds; writes OUT/seed-N per seed")
    r.add_argument("--jobs", type=int, default=1, help="parallel runs for --seeds")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plot", help="render an SVG figure from a run directory")
    pl.add_argument("--in", dest="input", required=True)
    pl.add_argument("--figure", required=True, choices=("fig1", "fig3", "fig4", "fig5", "fig6", "fig7", "all"))
    pl.add_argument("--output", help="SVG path (default: <in>/<figure>.svg)")
    pl.add_argument("--ue", type=int, help="UE shown in fig7 (default: first UE)")
    pl.set_defaults(func=cmd_plot)

    s = sub.add_parser("scenarios", help="list scenario presets")
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, FileExistsError, OSError) as e:
        print(f"v2xsim: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
