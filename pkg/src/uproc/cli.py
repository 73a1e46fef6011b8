"""Command-line entry point.

Each subcommand runs one scenario kind from a TOML config:

    uproc check       --config cfg.toml --out out/ [--workers k]
    uproc verify-fclt --config cfg.toml --out out/
    uproc rgg         --config cfg.toml --out out/
    uproc changepoint --config cfg.toml --out out/
    uproc diag        --config cfg.toml --out out/
    uproc product     --config cfg.toml --out out/

Exit status is 0 iff every acceptance gate configured in the file passes.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import emit_plotdata, load_config, run_config

SUBCOMMANDS = {
    "check": "condition_check",
    "verify-fclt": "fclt_verify",
    "rgg": "rgg",
    "changepoint": "changepoint",
    "diag": "diag_dominant",
    "product": "product_verify",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uproc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the TOML config")
        p.add_argument("--out", default=None, help="artifact output directory")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel replicate workers")
        p.add_argument("--plotdata", action="store_true",
                       help="also emit long-format plotting CSVs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    expected = SUBCOMMANDS[args.command]
    actual = cfg.get("scenario", {}).get("kind")
    if actual != expected:
        print(f"error: subcommand {args.command!r} expects scenario.kind = "
              f"{expected!r}, config has {actual!r}", file=sys.stderr)
        return 2
    try:
        report = run_config(cfg, args.out, workers=args.workers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.plotdata and args.out:
        emit_plotdata(report, args.out)
    summary = {k: v for k, v in report.items()
               if k in ("scenario", "pass", "verdicts", "config_hash")}
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0 if report.get("pass", False) else 1


if __name__ == "__main__":
    sys.exit(main())
