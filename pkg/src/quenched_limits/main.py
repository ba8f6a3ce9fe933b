""" quenched-limits - Main entry point

Runs one experiment of the quenched limit-theorem pipeline from an INI
config: the subcommand names the experiment kind, artifacts go to the
output directory and the exit status reports whether every tolerance check
passed.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from tabulate import tabulate

from .config import KINDS, parse_config
from .errors import ConfigError, SchemaMismatch
from .runner import RunSummary, run
from .visualize import SCHEMAS, emit_plot

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
)
logger = logging.getLogger("quenched-limits")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quenched-limits",
        description="Quenched spectral method and limit-theorem experiments for random interval maps",
    )
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="path to the INI experiment config")
        p.add_argument("--out", default=None,
                       help="output directory (overrides QUENCHED_LIMITS_OUTPUT and [output] directory)")
        p.add_argument("--workers", type=int, default=None, help="worker threads (overrides the config)")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        mode = p.add_mutually_exclusive_group()
        mode.add_argument("--strict", dest="strict", action="store_true", default=True,
                          help="unknown config keys are errors (default)")
        mode.add_argument("--lenient", dest="strict", action="store_false",
                          help="unknown config keys are logged and ignored")

    p = sub.add_parser("plot", help="render an SVG from an existing CSV artifact")
    p.add_argument("csv", help="CSV artifact written by a previous run")
    p.add_argument("--kind", required=True, choices=sorted(SCHEMAS), help="artifact kind")
    p.add_argument("--out", default=None, help="SVG path (default: next to the CSV)")
    return parser


def print_summary(summary: RunSummary) -> None:
    rows = [[c.name, c.status, c.measured, c.tolerance, c.note] for c in summary.checks]
    print(tabulate(rows, headers=["check", "status", "measured", "tolerance", "note"], tablefmt="github"))
    print(f"\n{summary.kind}: {summary.status} - {summary.message}")
    for path in summary.artifacts:
        print(f"  wrote {path}")


def main(argv: Optional[List[str]] = None) -> None:
    """Main entry point for the quenched-limits CLI."""
    args = build_parser().parse_args(argv)

    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
        logger.debug("Debug logging enabled")

    try:
        if args.command == "plot":
            path = emit_plot(args.csv, args.kind, args.out)
            print(f"wrote {path}")
            return

        text = Path(args.config).read_text(encoding="utf-8")
        plan = parse_config(text, strict=args.strict, kind=args.command)
        plan = plan.with_overrides(seed=args.seed, workers=args.workers)
        summary = run(plan, out_dir=args.out)
        print_summary(summary)
        sys.exit(summary.exit_code)
    except KeyboardInterrupt:
        logger.info("Run stopped by user")
        sys.exit(130)
    except (ConfigError, SchemaMismatch, OSError) as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        sys.exit(2)
    except Exception as e:
        logger.error(f"Run error: {str(e)}")
        sys.exit(1)


if __name__ == "__main__":
    main()
