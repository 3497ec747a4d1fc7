"""Versioned plain-text persistence helpers.

Every artifact file starts with a ``hybrid-ids <kind> v<N>`` line (behind a
``# `` prefix for comma-separated files). Floats are written with ``repr``
so reload is bit-exact.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError


def version_line(kind: str, version: int = 1) -> str:
    return f"hybrid-ids {kind} v{version}"


def check_version(line: str, kind: str, version: int = 1) -> None:
    expected = version_line(kind, version)
    got = line.strip().lstrip("# ").strip()
    if got != expected:
        raise FormatError(f"expected format line '{expected}', got '{line.strip()}'")


def atomic_write(path: str | Path, text: str) -> None:
    """Write via temp file + rename so readers never see partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)  # mkstemp defaults to 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def parse_floats(text: str, expected: int | None = None) -> np.ndarray:
    parts = text.split()
    if expected is not None and len(parts) != expected:
        raise FormatError(f"expected {expected} values, got {len(parts)}")
    return np.array([float(p) for p in parts], dtype=np.float64)


def stats_fingerprint(mean: np.ndarray, stddev: np.ndarray) -> str:
    """Short content hash identifying a standardization fit."""
    payload = (fmt_floats(mean) + "\n" + fmt_floats(stddev)).encode()
    return hashlib.sha256(payload).hexdigest()[:12]
