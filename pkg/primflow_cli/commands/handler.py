# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from __future__ import annotations

from typing import Any, Callable, NamedTuple
import argparse
import json
import sys

from attr import dataclass
import attr

from mautrix.util.logging import TraceLogger

from primflow.errors import PrimflowError

from ..config import Config


class UsageError(PrimflowError):
    pass


@dataclass(frozen=True)
class HelpSection:
    name: str
    order: int
    description: str


class Argument(NamedTuple):
    flags: tuple
    kwargs: dict


def arg(*flags: str, **kwargs: Any) -> Argument:
    return Argument(flags, kwargs)


@dataclass
class CommandEvent:
    command: str
    args: argparse.Namespace
    config: Config
    log: TraceLogger

    def reply(self, text: str) -> None:
        print(text, file=sys.stdout)

    def reply_json(self, data: Any) -> None:
        print(json.dumps(_plain(data), indent=2), file=sys.stdout)


def _plain(data: Any) -> Any:
    if hasattr(data, "serialize"):
        return data.serialize()
    elif isinstance(data, dict):
        return {key: _plain(value) for key, value in data.items()}
    elif isinstance(data, (list, tuple)):
        return [_plain(value) for value in data]
    return data


CommandFunc = Callable[[CommandEvent], "int | None"]


@dataclass
class CommandHandler:
    name: str
    func: CommandFunc
    help_section: HelpSection
    help_text: str
    arguments: list = attr.ib(factory=list)

    def __call__(self, evt: CommandEvent) -> int:
        return self.func(evt) or 0


command_handlers: dict[str, CommandHandler] = {}


def command_handler(
    *,
    name: str | None = None,
    help_section: HelpSection,
    help_text: str,
    arguments: list[Argument] | None = None,
) -> Callable[[CommandFunc], CommandHandler]:
    """Register a subcommand. The name defaults to the function name with dashes."""

    def decorator(func: CommandFunc) -> CommandHandler:
        command = name or func.__name__.replace("_", "-")
        handler = CommandHandler(command, func, help_section, help_text, arguments or [])
        command_handlers[command] = handler
        return handler

    return decorator
