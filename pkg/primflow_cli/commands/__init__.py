from . import data, diagnostics, evaluation, generation, training
from .handler import CommandEvent, CommandHandler, UsageError, command_handler, command_handlers

__all__ = [
    "CommandEvent",
    "CommandHandler",
    "UsageError",
    "command_handler",
    "command_handlers",
]
