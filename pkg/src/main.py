"""
Console entry point for the feature learning workbench.

    sfw preprocess --config configs/smoke_synthetic.toml
    sfw train --config configs/color_grayscale.toml --set n_runs=1
    sfw reproduce-table stdp-beta --config configs/stdp_beta_sweep.toml
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog
from pydantic import ValidationError

from src.cli.registry import CommandRegistry
from src.config import get_settings
from src.models.run import RunConfig
from src.services.pipeline_service import TABLES
from src.utils.observability import setup_observability, write_metrics

logger = structlog.get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def build_parser(registry: CommandRegistry) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfw",
        description="Unsupervised feature learning workbench: STDP spiking networks vs sparse auto-encoders",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="flat TOML run configuration")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one configuration key (repeatable)",
    )

    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for schema in registry.schemas():
        sub = subparsers.add_parser(schema["name"], parents=[common], help=schema["description"])
        if schema["name"] == "reproduce-table":
            sub.add_argument("table", choices=list(TABLES), help="table to reproduce")
    return parser


def command_input(args: argparse.Namespace) -> Dict[str, Any]:
    data: Dict[str, Any] = {"config": args.config, "overrides": args.overrides}
    if getattr(args, "table", None) is not None:
        data["table"] = args.table
    return data


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one command and return its exit status."""
    settings = get_settings()
    setup_observability(settings.log_level, settings.log_format)
    registry = CommandRegistry(settings)
    args = build_parser(registry).parse_args(argv)

    # Config problems are reported before any stage runs
    try:
        RunConfig.from_file(args.config, args.overrides)
    except (ValidationError, ValueError, OSError) as e:
        logger.error("Invalid run configuration", config=str(args.config), error=str(e))
        print(json.dumps({"success": False, "error": str(e), "error_type": "validation_error"}, indent=2))
        return EXIT_CONFIG

    result = registry.get(args.command).execute(command_input(args))
    print(json.dumps(result, indent=2, default=str))

    if settings.metrics_enabled and settings.metrics_textfile is not None:
        write_metrics(settings.metrics_textfile)

    if not result.get("success", False):
        logger.error("Command unsuccessful", command=args.command, error_type=result.get("error_type"))
        return EXIT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
