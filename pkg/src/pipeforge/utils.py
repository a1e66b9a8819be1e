"""Utility functions for pipeforge: identifiers, canonical JSON, files and locks."""

from __future__ import annotations

import contextlib
import hashlib
import json
import os
import re
import tempfile
import time
from collections.abc import Iterable, Iterator, Mapping
from decimal import Decimal
from pathlib import Path
from typing import Any, Optional, Union

from jsonschema import Draft202012Validator

from .errors import LockTimeout, MalformedDocument, SchemaViolation, StorageFailure
from .logging import get_logger
from .values import to_plain

_logger = get_logger()

_IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_\-]*$")
_SAFE_NAME_RE = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")


def sanitize_id(name: str) -> str:
    """Convert a name to a filesystem-safe identifier.

    Lowercase, spaces and path separators become hyphens, and only alphanumeric
    characters, hyphens and underscores are kept.

    Parameters
    ----------
    name : str
        Name to sanitize (can contain spaces, paths, special characters)

    Returns
    -------
    str
        Sanitized id containing only lowercase alphanumeric characters,
        hyphens, and underscores

    Examples
    --------
    >>> sanitize_id("Daily Revenue")
    'daily-revenue'
    >>> sanitize_id("raw/iot")
    'raw-iot'
    >>> sanitize_id("Build Project!")
    'build-project-'
    """
    sanitized = name.lower()

    # Replace spaces and path separators with hyphens
    sanitized = sanitized.replace(" ", "-")
    sanitized = sanitized.replace("/", "-")
    sanitized = sanitized.replace("\\", "-")

    # Keep only alphanumeric, hyphens, and underscores
    return "".join(c if c.isalnum() or c in ("-", "_") else "-" for c in sanitized)


def is_identifier(name: Any) -> bool:
    """Return True if ``name`` is a valid artifact identifier.

    Identifiers start with a letter or underscore and contain letters, digits,
    underscores and hyphens only, so they are always safe as directory names.
    """
    return isinstance(name, str) and bool(_IDENTIFIER_RE.match(name))


def is_safe_name(name: Any) -> bool:
    """Return True if ``name`` can be used as a single file name (batch and run ids)."""
    return isinstance(name, str) and bool(_SAFE_NAME_RE.match(name)) and ".." not in name


def format_duration(secs: float) -> str:
    """Format seconds into a human-readable duration string.

    Parameters
    ----------
    secs : float
        Number of seconds to format

    Returns
    -------
    str
        Human-readable string like "452ms", "2.4s", "1m 23s", "2h 5m", "1d 3h", "2w 3d"

    Examples
    --------
    >>> format_duration(0.5)
    '500ms'
    >>> format_duration(90)
    '1m 30s'
    >>> format_duration(3661)
    '1h 1m'
    """
    # Handle negative values (clock skew)
    if secs < 0:
        return ""

    if secs < 1:
        return f"{secs * 1000:.0f}ms"

    if secs < 60:
        return f"{secs:.1f}s"

    mins, secs_remainder = divmod(int(secs), 60)
    if mins < 60:
        return f"{mins}m {secs_remainder}s"

    hrs, mins_remainder = divmod(mins, 60)
    if hrs < 24:
        return f"{hrs}h {mins_remainder}m"

    days, hrs_remainder = divmod(hrs, 24)
    if days < 7:
        return f"{days}d {hrs_remainder}h"

    weeks, days_remainder = divmod(days, 7)
    return f"{weeks}w {days_remainder}d" if days_remainder else f"{weeks}w"


def format_time_ago(secs: float) -> str:
    """Format elapsed seconds as time-ago string.

    Examples
    --------
    >>> format_time_ago(30)
    '30s ago'
    >>> format_time_ago(259200)
    '3d ago'
    """
    if secs < 0:
        return ""

    if secs < 60:
        return f"{int(secs)}s ago"

    mins = int(secs) // 60
    if mins < 60:
        return f"{mins}m ago"

    hrs = mins // 60
    if hrs < 24:
        return f"{hrs}h ago"

    days = hrs // 24
    if days < 7:
        return f"{days}d ago"

    weeks = days // 7
    return f"{weeks}w ago"


# --------------------------------------------------------------------------- #
# Canonical JSON and digests
# --------------------------------------------------------------------------- #
def _encode(value: Any, indent: Optional[int], depth: int) -> str:
    """JSON text for a ``to_plain`` value; decimals become exact number tokens."""
    if isinstance(value, Decimal):
        return format(value, "f")
    if isinstance(value, dict):
        colon = ":" if indent is None else ": "
        parts = [
            json.dumps(key, ensure_ascii=False) + colon + _encode(value[key], indent, depth + 1) for key in sorted(value)
        ]
        return _join(parts, "{", "}", indent, depth)
    if isinstance(value, list):
        return _join([_encode(item, indent, depth + 1) for item in value], "[", "]", indent, depth)
    return json.dumps(value, ensure_ascii=False)


def _join(parts: list[str], opening: str, closing: str, indent: Optional[int], depth: int) -> str:
    if not parts:
        return opening + closing
    if indent is None:
        return opening + ",".join(parts) + closing
    inner = "\n" + " " * (indent * (depth + 1))
    return opening + inner + ("," + inner).join(parts) + "\n" + " " * (indent * depth) + closing


def canonical_json(value: Any) -> str:
    """Serialize ``value`` canonically: sorted keys, compact separators, UTF-8 text.

    Decimals are written as exact JSON numbers, never through float; dates and
    timestamps as ISO-8601 text.
    Serializing the same value twice always yields identical text.

    Examples
    --------
    >>> canonical_json({"b": 1, "a": [True, None]})
    '{"a":[true,null],"b":1}'
    """
    return _encode(to_plain(value), None, 0)


def pretty_json(value: Any) -> str:
    """Serialize for humans (sorted keys, indented) with the same value mapping as canonical_json."""
    return _encode(to_plain(value), 2, 0)


def sha256_hex(data: Union[str, bytes]) -> str:
    """SHA-256 hex digest of text (UTF-8) or bytes."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest_of(value: Any) -> str:
    """Digest of the canonical JSON serialization of ``value``."""
    return sha256_hex(canonical_json(value))


def loads(text: Union[str, bytes]) -> Any:
    """Parse JSON with decimals preserved exactly.

    Raises
    ------
    MalformedDocument
        If the text is not well-formed JSON.
    """
    try:
        return json.loads(text, parse_float=Decimal)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"not well-formed JSON: {exc}") from exc


# --------------------------------------------------------------------------- #
# Files
# --------------------------------------------------------------------------- #
def atomic_write_text(path: Path, text: str) -> None:
    """Write ``text`` to ``path`` so readers never observe a partial file.

    The content goes to a temporary file in the same directory which then replaces
    the target in one rename.

    Raises
    ------
    StorageFailure
        If the file cannot be written.
    """
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, path)
        except BaseException:
            with contextlib.suppress(OSError):
                os.unlink(tmp_name)
            raise
    except OSError as exc:
        raise StorageFailure(f"cannot write {path}: {exc}") from exc


def write_new_bytes(path: Path, data: bytes) -> None:
    """Create ``path`` with ``data``; fails if the file already exists."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "xb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
    except OSError as exc:
        raise StorageFailure(f"cannot create {path}: {exc}") from exc


def read_text(path: Path) -> str:
    """Read a UTF-8 text file, wrapping OS errors in StorageFailure."""
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageFailure(f"cannot read {path}: {exc}") from exc


def read_bytes(path: Path) -> bytes:
    """Read a file's bytes, wrapping OS errors in StorageFailure."""
    try:
        return path.read_bytes()
    except OSError as exc:
        raise StorageFailure(f"cannot read {path}: {exc}") from exc


def read_json(path: Path) -> Any:
    """Load a JSON file with decimals preserved."""
    return loads(read_text(path))


def write_json(path: Path, value: Any) -> None:
    """Atomically write ``value`` as canonical JSON followed by a newline."""
    atomic_write_text(path, canonical_json(value) + "\n")


def append_ndjson(path: Path, items: Iterable[Any]) -> None:
    """Append one canonical JSON line per item to ``path``."""
    lines = "".join(canonical_json(item) + "\n" for item in items)
    if not lines:
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8", newline="\n") as handle:
            handle.write(lines)
            handle.flush()
            os.fsync(handle.fileno())
    except OSError as exc:
        raise StorageFailure(f"cannot append to {path}: {exc}") from exc


def iter_ndjson(path: Path) -> Iterator[Any]:
    """Yield the JSON value of each non-blank line of ``path`` (nothing if absent)."""
    if not path.exists():
        return
    for number, line in enumerate(read_text(path).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            yield loads(line)
        except MalformedDocument as exc:
            raise StorageFailure(f"{path}:{number}: corrupt line") from exc


# --------------------------------------------------------------------------- #
# Locks
# --------------------------------------------------------------------------- #
@contextlib.contextmanager
def advisory_lock(path: Path, timeout: float = 10.0, poll_interval: float = 0.05) -> Iterator[None]:
    """Hold an advisory lock file for the duration of the ``with`` block.

    Parameters
    ----------
    path : Path
        Lock file path; created exclusively and removed on exit.
    timeout : float
        Seconds to wait for a competing holder before giving up.

    Raises
    ------
    LockTimeout
        If the lock is still held by someone else after ``timeout`` seconds.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    deadline = time.monotonic() + timeout
    while True:
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            if time.monotonic() >= deadline:
                raise LockTimeout(f"lock {path} held by another writer") from None
            time.sleep(poll_interval)
        except OSError as exc:
            raise StorageFailure(f"cannot create lock {path}: {exc}") from exc
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        _logger.debug(f"Acquired lock {path}")
        yield
    finally:
        with contextlib.suppress(OSError):
            os.unlink(path)
        _logger.debug(f"Released lock {path}")


def ensure_mapping(value: Any, what: str) -> Mapping[str, Any]:
    """Return ``value`` if it is a JSON object, else raise MalformedDocument."""
    if not isinstance(value, Mapping):
        raise MalformedDocument(f"{what} must be a JSON object")
    return value


def check_schema(document: Any, validator: Draft202012Validator, what: str, error: type = SchemaViolation) -> None:
    """Validate a parsed JSON document against a JSON Schema.

    Only the first error (ordered by document path) is reported, prefixed with the
    path where it occurred.

    Raises
    ------
    SchemaViolation
        (or ``error``) if the document does not satisfy the schema.
    """
    errors = sorted(validator.iter_errors(document), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        first = errors[0]
        where = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise error(f"{what}: {where}: {first.message}")
