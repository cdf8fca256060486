"""Command line: run a config, sweep a scenario, or report on results."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from ..core import ExtFaasError
from .io import load_config, write_outputs
from .report import format_summary, report
from .scenarios import SCENARIOS, ScenarioConfig, default_config, run_scenario

log = logging.getLogger("extfaas")


def _value(text: str):
    return yaml.safe_load(text)


def _run(cfg: ScenarioConfig, out: str | None) -> Path:
    out_dir = Path(out or cfg.out_dir)
    log.info("running %s: %s=%s strategies=%s", cfg.scenario, cfg.sweep_axis, cfg.sweep_values, cfg.strategy)
    rows = run_scenario(cfg)
    for p in write_outputs(cfg, rows, out_dir):
        print(p)
    return out_dir


def run_suite(out: str | Path, seed: int | None = None) -> list[Path]:
    """Every scenario with its defaults, one subdirectory each."""
    dirs = []
    for name in SCENARIOS:
        cfg = default_config(name)
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed)
        d = Path(out) / name
        write_outputs(cfg, run_scenario(cfg), d)
        dirs.append(d)
    return dirs


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="extfaas", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run the scenario described by a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")

    s = sub.add_parser("sweep", help="run a scenario from its defaults, flags overriding config keys")
    s.add_argument("--scenario", required=True, choices=SCENARIOS)
    s.add_argument("--strategy", nargs="+", help="S-M, S-H, DYN (sched_skew: round-robin, packing, DYN)")
    s.add_argument("--values", nargs="+", type=_value, help="sweep values")
    s.add_argument("--config", help="config file to start from instead of the defaults")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    a = sub.add_parser("suite", help="run every scenario with its defaults")
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int)

    rep = sub.add_parser("report", help="summarize results.csv files under a directory")
    rep.add_argument("--in", dest="in_dir", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.cmd == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = dataclasses.replace(cfg, seed=args.seed)
            _run(cfg, args.out)
        elif args.cmd == "sweep":
            cfg = load_config(args.config) if args.config else default_config(args.scenario)
            if cfg.scenario != args.scenario:
                raise ExtFaasError(f"config is for {cfg.scenario!r}, not {args.scenario!r}")
            over = {}
            if args.strategy:
                over["strategy"] = args.strategy
            if args.values:
                over["sweep_values"] = args.values
            if args.seed is not None:
                over["seed"] = args.seed
            _run(dataclasses.replace(cfg, **over), args.out)
        elif args.cmd == "suite":
            for d in run_suite(args.out, args.seed):
                print(d)
        else:
            print(format_summary(report(args.in_dir)))
    except (ExtFaasError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
