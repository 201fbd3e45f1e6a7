"""Shared helpers: RFC 3339 timestamps, atomic file writes, file digests."""

from __future__ import annotations

import hashlib
import os
import tempfile
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Iterator


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    raw = text.strip()
    # Python 3.10 fromisoformat rejects the Z suffix.
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        stamp = datetime.fromisoformat(raw)
    except ValueError:
        raise ValueError(f"bad RFC 3339 timestamp: {text!r}") from None
    if stamp.tzinfo is None:
        raise ValueError(f"timestamp lacks a UTC offset: {text!r}")
    return stamp.astimezone(timezone.utc)


def format_rfc3339(stamp: datetime) -> str:
    """Render an aware datetime as RFC 3339 with a Z suffix."""
    stamp = stamp.astimezone(timezone.utc)
    if stamp.microsecond:
        return stamp.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")


@contextmanager
def atomic_write(path: str | Path, newline: str | None = "\n") -> Iterator[IO[str]]:
    """Write a text file via a same-directory temp file and a final rename.

    The destination is either fully written or untouched; readers never see a
    partial file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline=newline) as handle:
            yield handle
        os.replace(tmp_name, path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def sha256_file(path: str | Path) -> str:
    """Hex SHA-256 digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
