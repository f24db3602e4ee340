"""Command line entry point: ``aoisched {run,sweep,validate}``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure
(some cell diverged, or a validation check failed). Results that were
produced are written either way.
"""

import argparse
import logging
import sys

from ._validation import ConfigurationError
from .harness import run_experiment, validate_oracles
from .io import parse_config, write_results, write_validation

logger = logging.getLogger("aoisched")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; config/usage problems map to 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="aoisched", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_text in (
        ("run", "run the configured policies at the configured rate"),
        ("sweep", "run the configured policies over sweep.lambda"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="experiment config (INI)")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    cmd = sub.add_parser("validate", help="run the oracle checks")
    cmd.add_argument("--out", required=True, help="output directory")
    return parser


def _experiment(args):
    try:
        spec = parse_config(args.config)
    except (ConfigurationError, OSError) as exc:
        print(f"aoisched: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "sweep" and spec.lambda_sweep is None:
        print("aoisched: config error: sweep requires sweep.lambda", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run" and spec.lambda_sweep is not None:
        logger.info("ignoring sweep.lambda for 'run'")
        spec.lambda_sweep = None

    result = run_experiment(spec, n_jobs=args.jobs)
    paths = write_results(result.summaries, args.out, [p.kind for p in spec.policies])
    for row in result.aggregates:
        logger.info("%-9s lambda=%-6g mean AoI %.4f (sd %.4f, n=%d)", row.policy.value,
                    row.lam, row.mean_aoi, row.std_aoi, row.replications)
    logger.info("wrote %s", ", ".join(paths))
    if result.failed:
        print(f"aoisched: {len(result.failed)} of {len(result.summaries)} cells failed",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _validate(args):
    results = validate_oracles()
    path = write_validation(results, args.out)
    for r in results:
        print(f"{r.name:28s} {r.status}  measured={r.measured:.3g} tol={r.tolerance:.3g}")
    logger.info("wrote %s", path)
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return _validate(args)
    return _experiment(args)


if __name__ == "__main__":
    sys.exit(main())
