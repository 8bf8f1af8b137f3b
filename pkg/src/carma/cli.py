"""Command line entry point: ``carma {validate,run,solve,benchmark,simulate}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .experiment import (
    ConfigError,
    load_solution,
    parse_config,
    read_config_mapping,
    run,
    run_montecarlo,
    validate,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3
OUT_ENV = "CARMA_OUT_DIR"

log = logging.getLogger("carma")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="YAML config file, or a bundled name (case1, case2, case3)")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    runner = argparse.ArgumentParser(add_help=False)
    runner.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    runner.add_argument("--seed", type=int, help="seed for the solver and the simulation")

    ap = argparse.ArgumentParser(prog="carma", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("validate", parents=[common], help="check a config and exit")
    p = sub.add_parser("run", parents=[common, runner], help="run the requested schemes")
    p.add_argument("--scheme", help="comma separated subset of NOM,TOLL,CARMA")
    sub.add_parser("solve", parents=[common, runner], help="karma equilibrium only")
    sub.add_parser("benchmark", parents=[common, runner], help="closed-form NOM and TOLL only")
    p = sub.add_parser("simulate", parents=[common, runner],
                       help="Monte Carlo run from a saved solution")
    p.add_argument("--solution", required=True, help="solution.npz written by run or solve")
    p.add_argument("--days", type=int, help="override montecarlo.days")
    return ap


def _out_dir(args, cfg) -> str:
    if getattr(args, "out", None):
        return args.out
    return os.environ.get(OUT_ENV) or cfg.output.directory


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        raw = read_config_mapping(args.config)
    except (OSError, yaml.YAMLError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_CONFIG

    problems = validate(raw)
    if problems:
        for p in problems:
            print(f"invalid config: {p}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = parse_config(raw)
    if args.command == "validate":
        if not args.quiet:
            print(f"{args.config}: ok")
        return EXIT_OK

    schemes = None
    if args.command == "run" and args.scheme:
        schemes = [s.strip() for s in args.scheme.split(",") if s.strip()]
    elif args.command == "solve":
        schemes = ["CARMA"]
    elif args.command == "benchmark":
        schemes = ["NOM", "TOLL"]
    try:
        cfg = cfg.with_overrides(seed=args.seed, schemes=schemes)
        problems = validate(cfg)
        if problems:
            for p in problems:
                print(f"invalid config: {p}", file=sys.stderr)
            return EXIT_CONFIG
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(_out_dir(args, cfg))

    try:
        if args.command == "simulate":
            saved = load_solution(args.solution)
            mc = cfg.montecarlo
            if args.days is not None:
                mc = replace(mc, days=args.days)
                if mc.burn_in >= args.days:
                    # keep most of a short run for statistics
                    mc = replace(mc, burn_in=args.days // 10)
                    log.info("burn-in shortened to %d days", mc.burn_in)
            cfg = replace(cfg, montecarlo=replace(mc, enabled=True))
            files: list[Path] = []
            res = run_montecarlo(cfg, saved.d_star, saved.pi_star, out, files)
            if not args.quiet:
                print(f"mean queue delay {res.mean_queue_delay:.4f} min, "
                      f"mean cost {res.mean_cost:.4f}; wrote {len(files)} tables to {out}")
            return EXIT_OK
        result = run(cfg, out, quiet=args.quiet)
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if not args.quiet:
        for r in result.fairness:
            if r["type"] == "system":
                print(f"{r['scheme']:>5}: delay -{100 * r['delay_reduction']:.1f}%  "
                      f"cost -{100 * r['normalized_cost_reduction']:.1f}% vs NOM")
        print(f"wrote {len(result.files)} tables to {out}")
    if not result.converged:
        d = result.solution.diagnostics
        print(f"solver did not converge (stationarity {d['stationarity']:.2e}, "
              f"gap {d['optimality']:.2e}); outputs hold the best iterate", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
