"""
Command-line entry point: fedce <subcommand> --config <path> [overrides].

Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error.
Failures also print one JSON line on stderr.
"""
import argparse
import json
import sys
from typing import List, Optional

import structlog

from fedce import __version__
from fedce.api.commands import COMMANDS
from fedce.core.config import load_experiment_config, parse_experiment_config, settings
from fedce.core.logging import setup_logging
from fedce.exceptions.errors import FedCEError
from fedce.models.experiment import Algorithm, ExperimentConfig

logger = structlog.get_logger("fedce")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedce", description="Federated contribution-estimation simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, handler in COMMANDS.items():
        sub = subparsers.add_parser(name, help=(handler.__doc__ or "").strip().splitlines()[0])
        sub.add_argument("--config", required=True, help="experiment YAML file")
        sub.add_argument("--seed", type=int, default=None, help="replaces the first configured seed")
        sub.add_argument("--out", default=None, help="output directory")
        sub.add_argument(
            "--algorithm", choices=[a.value for a in Algorithm], default=None, help="algorithm override"
        )
        if name == "run":
            sub.add_argument("--export-federation", default=None, help="write the federation as JSON lines")
    return parser


def apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Apply CLI flags on top of the file config and re-validate."""
    data = config.model_dump(mode="json")
    if args.seed is not None:
        data["seeds"] = [args.seed] + list(data["seeds"][1:])
    if args.out is not None:
        data["output_dir"] = args.out
    if args.algorithm is not None:
        data["algorithm"] = args.algorithm
    return parse_experiment_config(data, source="command line")


def _error_line(error: BaseException, exit_code: int) -> str:
    return json.dumps(
        {"error": type(error).__name__, "message": str(error), "exit_code": exit_code}, sort_keys=True
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(env=settings.ENV, log_level=settings.LOG_LEVEL, log_format=settings.LOG_FORMAT)

    try:
        config = apply_overrides(load_experiment_config(args.config), args)
        handler = COMMANDS[args.command]
        logger.info("command_started", command=args.command, config=args.config, seeds=config.seeds)
        if args.command == "run":
            code = handler(config, export_federation=args.export_federation)
        else:
            code = handler(config)
        logger.info("command_finished", command=args.command, exit_code=code)
        return code
    except FedCEError as e:
        logger.error("command_failed", command=args.command, error=type(e).__name__, message=str(e))
        print(_error_line(e, e.exit_code), file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("unhandled_error", command=args.command)
        print(_error_line(e, 3), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
