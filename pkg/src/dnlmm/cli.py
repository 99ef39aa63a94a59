"""Command-line entry point: ``run``, ``preset``, ``theory`` and ``validate``."""
from __future__ import annotations

import argparse
import json
import sys

from .harness import (ConfigError, ExperimentError, load_config, run_experiment, run_theory,
                      validate_config)
from .presets import PRESETS, preset


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _print_summary(rs) -> None:
    for lab, res in rs.results.items():
        line = f"{lab:32s} steady {res.steady_db:9.3f} dB  diverged {res.diverged}/{res.trials}"
        th = res.theory
        if th is not None:
            line += f"  theory {th.error or f'{th.steady_db:9.3f} dB'}"
        print(line)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.trials is not None:
        cfg.run.trials = args.trials
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.workers is not None:
        cfg.run.workers = args.workers
    cfg.run.__post_init__()
    rs = run_experiment(cfg, out_dir=args.out, theory=True if args.theory else None,
                        log=None if args.quiet else _log)
    _print_summary(rs)
    return 0


def cmd_preset(args) -> int:
    cfg = preset(args.name)
    if args.trials is not None:
        cfg.run.trials = args.trials
    if args.iterations is not None:
        cfg.run.iterations = args.iterations
    cfg.run.__post_init__()
    if args.dump_config:
        cfg.save(args.dump_config)
        return 0
    rs = run_experiment(cfg, out_dir=args.out or f"results/{args.name}",
                        log=None if args.quiet else _log)
    _print_summary(rs)
    return 0


def cmd_theory(args) -> int:
    cfg = load_config(args.config)
    report = run_theory(cfg, args.out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    problems = validate_config(cfg)
    for p in problems:
        print(f"problem: {p}")
    if not problems:
        print(f"ok: {len(cfg.algorithms)} algorithms, config digest {cfg.digest()}")
    return 1 if problems else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnlmm", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment file (JSON or TOML)")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--theory", action="store_true", help="also evaluate the analytical model")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="run a named figure experiment")
    p.add_argument("--name", required=True, choices=sorted(PRESETS))
    p.add_argument("--out")
    p.add_argument("--trials", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--dump-config", metavar="FILE", help="write the preset as JSON and exit")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("theory", help="theory-only evaluation of an experiment file")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("validate", help="check an experiment file without running it")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
