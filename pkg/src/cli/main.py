"""
PFML Indoor Localization - Command Line
Simulation, calibration, landmark evaluation and localization runs
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import structlog
from pydantic import ValidationError

from src.services.experiment_service import ExperimentService, load_run_config
from src.utils.config import settings
from src.utils.errors import RuntimeDegeneracyError

logger = structlog.get_logger()

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_DEGENERATE = 3


def configure_logging(level: Optional[str] = None):
    level_no = logging.getLevelName((level or settings.LOG_LEVEL).upper())
    if not isinstance(level_no, int):
        level_no = logging.INFO
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level_no),
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfml", description="PFML indoor localization experiments")
    parser.add_argument("--config", type=Path, help="JSON run config")
    parser.add_argument("--seed", type=int, help="Root seed (overrides config)")
    parser.add_argument("--out", type=Path, help="Output directory (overrides config)")
    parser.add_argument("--log-level", help="Log level (default from PFML_LOG_LEVEL)")

    subparsers = parser.add_subparsers(dest="command", required=True, help="Command to run")
    subparsers.add_parser("simulate", help="Write environment, survey DBs, reference points and test trace")
    subparsers.add_parser("survey", help="Write the room-labelled fingerprint survey DB")
    subparsers.add_parser("fit-ranging", help="Fit per-anchor LDPL/NLR constants from reference points")
    subparsers.add_parser("evaluate-landmark", help="Cross-validated room classification accuracy")
    localize = subparsers.add_parser("localize", help="Run PFML, NLST or KNN over the test trace")
    localize.add_argument("--method", choices=["pfml", "nlst", "knn"], help="Overrides config method")
    subparsers.add_parser("survey-time", help="Offline survey effort in minutes")
    subparsers.add_parser("report", help="Comparison table and error CDF from report JSONs")
    return parser


def run(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, args.seed, args.out)
    if getattr(args, "method", None):
        config = config.model_copy(update={"method": args.method})
    service = ExperimentService(config)

    if args.command == "simulate":
        paths = service.simulate()
        for path in paths.values():
            print(path)
    elif args.command == "survey":
        print(service.survey())
    elif args.command == "fit-ranging":
        _, table = service.fit_ranging()
        print(table.to_string(index=False))
    elif args.command == "evaluate-landmark":
        print(service.evaluate_landmark().to_string(index=False))
    elif args.command == "localize":
        report = service.localize()
        print(f"{report.method}: mean {report.mean_error:.3f} m, sd {report.sd_error:.3f} m, "
              f"p90 {report.p90_error:.3f} m over {len(report.per_point_errors)} points")
    elif args.command == "survey-time":
        print(f"{service.survey_time():.2f} min")
    elif args.command == "report":
        print(service.report().to_string(index=False))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run(args)
    except RuntimeDegeneracyError as e:
        logger.error("run_degenerate", command=args.command, error=str(e))
        return EXIT_DEGENERATE
    except (ValidationError, ValueError, FileNotFoundError) as e:
        logger.error("invalid_input", command=args.command, error=str(e))
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
