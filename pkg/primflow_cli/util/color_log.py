# Copyright (c) 2026 primflow contributors
#
# This Source Code Form is subject to the terms of the Mozilla Public
# License, v. 2.0. If a copy of the MPL was not distributed with this
# file, You can obtain one at http://mozilla.org/MPL/2.0/.
from mautrix.util.logging.color import (
    MXID_COLOR,
    PREFIX,
    RESET,
    ColorFormatter as BaseColorFormatter,
)

PRIMFLOW_COLOR = PREFIX + "36;1m"  # cyan
CLI_COLOR = PREFIX + "35;1m"  # magenta


class ColorFormatter(BaseColorFormatter):
    def _color_name(self, module: str) -> str:
        if module.startswith("primflow.cli"):
            return CLI_COLOR + "primflow.cli" + RESET + _suffix(module, "primflow.cli")
        if module.startswith("primflow"):
            return PRIMFLOW_COLOR + "primflow" + RESET + _suffix(module, "primflow")
        return super()._color_name(module)


def _suffix(module: str, prefix: str) -> str:
    rest = module[len(prefix) + 1 :]
    return "." + MXID_COLOR + rest + RESET if rest else ""
