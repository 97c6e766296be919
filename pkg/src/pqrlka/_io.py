"""Small file helpers shared by the pipeline stages."""
from __future__ import annotations

import contextlib
import os
import tempfile
from pathlib import Path


class DataFormatError(ValueError):
    """Raised when an input file does not follow the expected layout."""


@contextlib.contextmanager
def atomic_write(path, mode: str = "w", **kwargs):
    """Write to a temp file next to ``path`` and rename it into place on success.

    A failure inside the block leaves any previous file at ``path`` untouched.
    """
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
