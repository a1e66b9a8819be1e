"""Package logger for pipeforge.

Every module logs through the single ``pipeforge`` logger obtained with
``get_logger()``. A NullHandler keeps the engine quiet until an application
opts in with ``setup_logging()`` or configures the standard ``logging`` tree
itself.

Records carry a ``run_id`` attribute: the id bound by ``run_context()`` while a
pipeline run is in progress, ``"-"`` otherwise. The default format prints it.

Example:
    from pipeforge import setup_logging
    setup_logging(level="INFO")
"""

from __future__ import annotations

import contextvars
import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Literal, Optional, TextIO, Union

_LOGGER_NAME = "pipeforge"
_NO_RUN = "-"
_DEFAULT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(run_id)s] %(funcName)s:%(lineno)d - %(message)s"

_current_run: contextvars.ContextVar[str] = contextvars.ContextVar("pipeforge_run_id", default=_NO_RUN)


class _RunIdFilter(logging.Filter):
    """Stamp the bound run id on each record (never drops a record)."""

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "run_id"):
            record.run_id = _current_run.get()
        return True


_logger = logging.getLogger(_LOGGER_NAME)
_logger.addHandler(logging.NullHandler())
_logger.addFilter(_RunIdFilter())


@contextmanager
def run_context(run_id: str) -> Iterator[str]:
    """Bind ``run_id`` to every record logged inside the block."""
    token = _current_run.set(run_id)
    try:
        yield run_id
    finally:
        _current_run.reset(token)


def current_run_id() -> Optional[str]:
    """The run id bound by the innermost ``run_context``, if any."""
    value = _current_run.get()
    return None if value == _NO_RUN else value


def setup_logging(
    level: Union[Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], int] = "DEBUG",
    format_string: Optional[str] = None,
    stream: Optional[TextIO] = None,
) -> None:
    """Attach one console handler to the pipeforge logger.

    Calling it again replaces the previous handler.

    Parameters
    ----------
    level : str or int
        Logging level name or number. Default: "DEBUG"
    format_string : Optional[str]
        Record format. The default includes the time, level, run id, function and line.
    stream : Optional[TextIO]
        Destination; stderr when omitted so that command output on stdout stays
        machine-readable.

    Examples
    --------
    >>> from pipeforge import setup_logging
    >>> setup_logging(level="INFO")
    >>> setup_logging(level="WARNING", format_string="%(levelname)s [%(run_id)s] %(message)s")
    """
    numeric = getattr(logging, level.upper()) if isinstance(level, str) else level
    disable_logging()
    _logger.setLevel(numeric)
    handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    handler.setLevel(numeric)
    handler.setFormatter(logging.Formatter(format_string or _DEFAULT_FORMAT))
    _logger.addHandler(handler)


def disable_logging() -> None:
    """Close and detach every handler except the NullHandler."""
    for handler in list(_logger.handlers):
        if isinstance(handler, logging.NullHandler):
            continue
        handler.close()
        _logger.removeHandler(handler)
    if not any(isinstance(h, logging.NullHandler) for h in _logger.handlers):
        _logger.addHandler(logging.NullHandler())


def get_logger() -> logging.Logger:
    """The shared ``pipeforge`` logger; modules keep it as ``_logger = get_logger()``."""
    return _logger
