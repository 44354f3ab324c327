"""DeconfoundLab — command-line entry point.

Usage::

    python -m app.main [--preset NAME] [--config FILE] [--<field> VALUE ...] <subcommand> ...

Subcommands: ``gen-expert``, ``train``, ``eval``, ``compare``, ``validate``.
Exit codes: 0 success, 1 usage error, 2 validation failure, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from app.errors import (
    ConfigError,
    DimensionMismatchError,
    ImpossibleEvidenceError,
    NumericalAbort,
    SpecValidationError,
)

logger = logging.getLogger("deconfound")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class _UsageParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for validation."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    from app.cli.commands import ALGORITHMS, POLICY_CHOICES
    from app.config import FIELD_NAMES

    parser = _UsageParser(prog="deconfound", description="Deconfounded imitation learning lab")
    parser.add_argument("--preset", help="Named preset from forge.json")
    parser.add_argument("--config", help="KEY=value config file")
    overrides = parser.add_argument_group("config overrides")
    for name in FIELD_NAMES:
        overrides.add_argument(f"--{name.replace('_', '-')}", dest=name, metavar="VALUE", default=None)

    sub = parser.add_subparsers(dest="command", required=True, parser_class=_UsageParser)

    gen = sub.add_parser("gen-expert", help="Generate the expert dataset")
    gen.add_argument("--dataset", help="Output JSONL (default: <output_dir>/expert.jsonl)")

    train = sub.add_parser("train", help="Train an imitator once per seed")
    train.add_argument("--algo", choices=ALGORITHMS, required=True)
    train.add_argument("--dataset", help="Expert JSONL (default: <output_dir>/expert.jsonl)")
    train.add_argument("--family", help="Family JSON instead of the registered environment")

    ev = sub.add_parser("eval", help="Evaluate a policy over every seed")
    ev.add_argument("--policy", choices=POLICY_CHOICES, required=True)
    ev.add_argument("--checkpoint", help="Checkpoint path; '{seed}' is replaced per seed")
    ev.add_argument("--algo", choices=ALGORITHMS, help="Use <output_dir>/<algo>/seed<k>/checkpoint.json")
    ev.add_argument("--sampling", action="store_true", help="Act by posterior sampling instead of the exact marginal")
    ev.add_argument("--raster", action="store_true", help="Write raster.csv and traces.jsonl for the first seed")
    ev.add_argument("--label", help="Report directory name under <output_dir>/eval/")
    ev.add_argument("--family", help="Family JSON instead of the registered environment")

    cmp_ = sub.add_parser("compare", help="Diff two evaluation summaries (a - b)")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")
    cmp_.add_argument("--min-diff", action="append", metavar="METRIC=VALUE")
    cmp_.add_argument("--max-abs-diff", action="append", metavar="METRIC=VALUE")

    val = sub.add_parser("validate", help="Validate a family and expert")
    val.add_argument("--family", help="Family JSON instead of the registered environment")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    from app.cli import commands
    from app.config import FIELD_NAMES, load_run_config

    if args.command == "compare":
        return commands.cmd_compare(args.report_a, args.report_b, args.min_diff, args.max_abs_diff)

    config = load_run_config(
        preset=args.preset,
        config_path=args.config,
        overrides={name: getattr(args, name) for name in FIELD_NAMES},
    )
    logging.getLogger().setLevel(config.log_level.upper())
    logger.debug("Run config: %s", config.to_dict())

    if args.command == "gen-expert":
        return commands.cmd_gen_expert(config, args.dataset)
    if args.command == "train":
        return commands.cmd_train(config, args.algo, args.dataset, args.family)
    if args.command == "eval":
        return commands.cmd_eval(
            config,
            args.policy,
            checkpoint=args.checkpoint,
            algo=args.algo,
            sampling=args.sampling,
            raster=args.raster,
            label=args.label,
            family_path=args.family,
        )
    return commands.cmd_validate(config, args.family)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse *argv*, run the subcommand and map failures to exit codes."""
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )

    try:
        return _dispatch(args)
    except NumericalAbort as exc:
        logger.error("Numerical abort: %s", exc)
        return EXIT_NUMERICAL
    except ImpossibleEvidenceError as exc:
        logger.error("Impossible evidence: %s", exc)
        return EXIT_NUMERICAL
    except (SpecValidationError, DimensionMismatchError) as exc:
        logger.error("Validation failed: %s", exc)
        return EXIT_VALIDATION
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_USAGE
    except (KeyError, FileNotFoundError) as exc:
        logger.error("%s", exc.args[0] if exc.args else exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
