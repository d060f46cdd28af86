"""Version of the running code: the release number on a tagged commit, otherwise a dev build."""
from __future__ import annotations

import os
import shutil
import subprocess

from . import __version__

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

git_env = {
    "PATH": os.environ["PATH"],
    "HOME": os.environ.get("HOME", ""),
    "LANG": "C",
    "LC_ALL": "C",
}


def git(*args: str) -> str | None:
    try:
        out = subprocess.check_output(
            ["git", *args], cwd=ROOT, stderr=subprocess.DEVNULL, env=git_env
        )
    except (subprocess.SubprocessError, OSError):
        return None
    return out.strip().decode("ascii")


def dev_version(base: str, revision: str) -> str:
    if not base.endswith("+dev"):
        base += "+dev"
    return f"{base}.{revision}"


if os.path.exists(os.path.join(ROOT, ".git")) and shutil.which("git"):
    git_revision = git("rev-parse", "--short=8", "HEAD") or "unknown"
    git_tag = git("describe", "--exact-match", "--tags")
else:
    git_revision = "unknown"
    git_tag = None

if git_tag and git_tag.lstrip("v").replace("-", "") == __version__:
    version = __version__
else:
    version = dev_version(__version__, git_revision)
