"""Command line entry point: ``satom <experiment> <scenario> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_scenario
from .errors import SatomError
from .experiments import SUBCOMMANDS, run_experiment, write_outputs

log = logging.getLogger("satom")

HELP = {
    "reliability": "reliability curves of the typical and pooled cipher-module schemes",
    "mttf": "MTTF table over the configured N1 and N2 ranges",
    "mtd-trace": "router event trace of data frames and MTD update rounds",
    "dos-sim": "routing-field enumeration against an access router",
    "tpt-sim": "transmission-path tracing with and without per-hop replacement",
    "ta-sim": "frequency-table traffic analysis against dynamic updating",
    "fallback": "timeliness and exploitability of the delayed fallback",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satom", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("scenario", help="scenario JSON file (bundled names such as fig6.scenario also work)")
        p.add_argument("--sweep", metavar="KEY=A:B:C", help="run over a start:stop:step grid of a numeric key")
        p.add_argument("--out", default=f"out/{name}", help="output directory (default: %(default)s)")
        p.add_argument("--trials", type=int, help="override engine.trials")
        p.add_argument("--seed", type=int, help="override engine.master_seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_scenario(args.scenario)
        result = run_experiment(cfg, args.experiment, sweep=args.sweep, trials=args.trials, seed=args.seed)
        paths = write_outputs(result, args.out)
    except (SatomError, FileNotFoundError, ValueError) as exc:
        print(f"satom {args.experiment}: error: {exc}", file=sys.stderr)
        return 2
    for line in result.summary:
        print(line)
    for p in paths:
        log.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
