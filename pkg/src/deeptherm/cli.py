"""Command-line entry point: ``deeptherm run`` and ``deeptherm selftest``."""
from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, DeepThermError


def _run(args: argparse.Namespace) -> int:
    from .pipeline import load_config, run

    cfg = load_config(args.config)
    mitigation = args.mitigation.replace("-", "_") if args.mitigation else None
    cfg = cfg.with_overrides(mode=args.mode, workers=args.workers, seed=args.seed, out=args.out,
                             mitigation=mitigation)
    result = run(cfg)
    print(f"{cfg.experiment}: wrote {len(result.files)} files to {result.out}")
    print(json.dumps(result.summary, sort_keys=True))
    return 0


def _selftest(args: argparse.Namespace) -> int:
    from .acceptance import invariant_checks, run_all

    checks = invariant_checks()
    for c in checks:
        print(c.line())
    ok = all(c.passed for c in checks)
    if args.acceptance or args.criteria:
        numbers = [int(x) for x in args.criteria.split(",")] if args.criteria else None
        results = run_all(numbers)
        ok = ok and all(c.passed for c in results)
        print(f"{sum(c.passed for c in results)}/{len(results)} acceptance criteria passed")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    from .pipeline import MODES

    parser = argparse.ArgumentParser(prog="deeptherm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--mode", choices=MODES)
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--mitigation", choices=("inverse", "as-written", "none"))
    p_run.set_defaults(func=_run)

    p_self = sub.add_parser("selftest", help="check module invariants (and optionally the acceptance criteria)")
    p_self.add_argument("--acceptance", action="store_true", help="also run all acceptance criteria (minutes)")
    p_self.add_argument("--criteria", help="comma-separated criterion numbers to run, e.g. 1,4,9")
    p_self.set_defaults(func=_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DeepThermError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
