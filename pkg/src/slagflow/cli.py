"""Command-line entry point: ``slagflow run | verify | sweep``."""
from __future__ import annotations

import argparse
import logging
import sys

from .experiment import SWEEP_PARAMS, cmd_run, cmd_sweep, cmd_verify


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slagflow",
        description="Generalized Lagrangian mean curvature flow of graphs over tori and spheres.",
    )
    parser.add_argument("--out", default=".", help="directory all output paths are relative to")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate one configured flow")
    p.add_argument("config", help="TOML experiment configuration")

    p = sub.add_parser("verify", help="run an identity-check suite")
    p.add_argument("suite", choices=["angle", "commutation", "gradient", "residuals", "oracle_cases"])

    p = sub.add_parser("sweep", help="repeat a run over values of one parameter")
    p.add_argument("config")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated list, e.g. 0.05,0.1,0.2")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "run":
        return cmd_run(args.config, args.out)
    if args.command == "verify":
        return cmd_verify(args.suite, args.out)
    values = [v for v in args.values.split(",") if v.strip()]
    return cmd_sweep(args.config, args.param, values, args.out)


if __name__ == "__main__":
    sys.exit(main())
