# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from typing import Sequence
import argparse
import copy
import logging
import logging.config
import sys

from mautrix.util.logging import TraceLogger

from primflow.errors import ConfigError, PrimflowError

from .commands import CommandEvent, UsageError, command_handlers
from .config import Config
from .version import version

log: TraceLogger = logging.getLogger("primflow.cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="primflow",
        description="Learn motion primitive dictionaries and generate trajectories with them.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    parser.add_argument(
        "-c", "--config", default="config.yaml", help="the path to your config file"
    )
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a config option, may be repeated",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log at debug level")
    subparsers = parser.add_subparsers(dest="command", metavar="command", required=True)
    handlers = sorted(
        command_handlers.values(), key=lambda h: (h.help_section.order, h.name)
    )
    for handler in handlers:
        sub = subparsers.add_parser(
            handler.name,
            help=handler.help_text,
            description=f"{handler.help_section.name}: {handler.help_text}",
        )
        for argument in handler.arguments:
            sub.add_argument(*argument.flags, **argument.kwargs)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if not e.code else 1

    config = Config(args.config)
    try:
        config.load()
        config.update(save=False)
        config.override(args.set)
    except ConfigError as e:
        print(f"Invalid configuration: {e}", file=sys.stderr)
        return 1
    logging.config.dictConfig(copy.deepcopy(config["logging"]))
    if args.verbose:
        logging.getLogger("primflow").setLevel(logging.DEBUG)

    handler = command_handlers[args.command]
    evt = CommandEvent(
        command=args.command, args=args, config=config, log=log.getChild(args.command)
    )
    try:
        return handler(evt)
    except UsageError as e:
        log.error(f"{args.command}: {e}")
        return 1
    except PrimflowError as e:
        log.error(f"{args.command} failed: {e}")
        log.debug("Traceback", exc_info=True)
        return 2
    except Exception:
        log.exception(f"Unexpected error in {args.command}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
