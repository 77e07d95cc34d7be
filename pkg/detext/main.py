"""Command-line entry point."""

import argparse
import json
import logging
import secrets
import sys
import uuid
from datetime import datetime, timezone
from typing import Optional, Sequence

from config.settings import LOG_FORMAT, LOG_LEVEL, METRICS_PORT
from detext.commands import COMMANDS
from detext.context import command_var, run_id_var, seed_var
from detext.errors import DeTextError
from detext.run_config import load_run_config
from detext.services.metrics import start_exporter

logger = logging.getLogger(__name__)

TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class ContextFilter(logging.Filter):
    """Copy run-scoped context variables onto every record."""

    def filter(self, record):
        record.run_id = run_id_var.get()
        record.command = command_var.get()
        record.seed = seed_var.get()
        return True


class JsonFormatter(logging.Formatter):
    def format(self, record):
        log_obj = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "message": record.getMessage(),
            "logger": record.name,
        }
        for key in ("run_id", "command", "seed"):
            value = getattr(record, key, None)
            if value is not None:
                log_obj[key] = value
        if record.exc_info:
            log_obj["exception"] = self.formatException(record.exc_info)
        return json.dumps(log_obj)


def setup_logging(level: str = LOG_LEVEL, fmt: str = LOG_FORMAT) -> None:
    """One stderr handler; stdout stays free for command output."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter() if fmt == "json" else logging.Formatter(TEXT_FORMAT))
    handler.addFilter(ContextFilter())
    logging.basicConfig(level=level.upper(), handlers=[handler], force=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detext", description="Representation-based deep text ranking")
    parser.add_argument("--config", help="TOML run config")
    parser.add_argument("--seed", type=int, help="seed for every random draw (logged when absent)")
    parser.add_argument("--out", help="output directory (overrides [output] dir)")
    parser.add_argument("--log-level", default=LOG_LEVEL, type=str.upper,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in COMMANDS.values():
        module.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors, which is also the config-error code
        return int(e.code or 0)

    setup_logging(args.log_level)
    run_id_var.set(uuid.uuid4().hex[:12])
    command_var.set(args.command)

    try:
        config = load_run_config(args.config)
        seed = args.seed if args.seed is not None else config.seed
        if seed is None:
            seed = secrets.randbelow(2**31)
            logger.warning(f"No seed given; using seed={seed}")
        seed_var.set(seed)
        config = config.with_seed(seed)
        if args.out:
            config = config.with_output(args.out)

        start_exporter(METRICS_PORT)
        logger.info(f"Running {args.command} with seed={seed}")
        return COMMANDS[args.command].run(args, config)
    except DeTextError as e:
        logger.error(f"{e.code}: {e.message}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return 4


if __name__ == "__main__":
    sys.exit(main())
