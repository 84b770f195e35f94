"""File helpers: atomic text writes and float formatting for CSV exports."""

from __future__ import annotations

import contextlib
import json
import os
import tempfile
from pathlib import Path


def fmt(x) -> str:
    """Nine significant digits, used for reports and metric exports."""
    return format(float(x), ".9g")


def fmt_exact(x) -> str:
    """Seventeen significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


@contextlib.contextmanager
def atomic_writer(path, mode: str = "w"):
    """Write to a temporary sibling, then rename over ``path`` on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        kwargs = {"newline": "", "encoding": "utf-8"} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    with atomic_writer(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
