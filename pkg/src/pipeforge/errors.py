"""Exception hierarchy for pipeforge.

Every error raised on purpose by the engine derives from PipeforgeError so callers
(and the CLI) can separate data-condition failures from programming bugs.
"""

from __future__ import annotations

from collections.abc import Iterable
from typing import Optional


class PipeforgeError(Exception):
    """Base class for all pipeforge errors."""


# --------------------------------------------------------------------------- #
# Argument and document errors
# --------------------------------------------------------------------------- #
class InvalidArgument(PipeforgeError, ValueError):
    """An operation was called with arguments violating its precondition."""


class MalformedDocument(InvalidArgument):
    """A document is not well-formed JSON (or CSV/NDJSON where applicable)."""


class SchemaViolation(InvalidArgument):
    """A well-formed document does not satisfy the structural schema or type invariants."""


class TypeMismatch(InvalidArgument):
    """A value cannot be interpreted as the declared datatype."""


class UnknownField(InvalidArgument):
    """A referenced field is not declared by the governing schema."""


class InvalidWindow(InvalidArgument):
    """A retention or measurement window is out of range."""


class InvalidSpec(InvalidArgument):
    """A pipeline spec is structurally valid but violates a pattern obligation."""


class ParseError(InvalidArgument):
    """Text could not be parsed.

    Attributes
    ----------
    position : int
        Zero-based character offset where parsing failed.
    expected : frozenset[str]
        Descriptions of the tokens that would have been accepted at that position.
    """

    def __init__(self, message: str, position: int = 0, expected: Optional[Iterable[str]] = None) -> None:
        self.position = position
        self.expected = frozenset(expected or ())
        detail = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{message} at position {position}{detail}")


class PlanError(InvalidArgument):
    """A transform plan fails static checks.

    Attributes
    ----------
    step_index : Optional[int]
        Index of the offending plan step, or None for template-level problems.
    reason : str
        Human-readable reason.
    """

    def __init__(self, reason: str, step_index: Optional[int] = None) -> None:
        self.step_index = step_index
        self.reason = reason
        where = f"step {step_index}: " if step_index is not None else ""
        super().__init__(f"{where}{reason}")


class FixtureError(InvalidArgument):
    """A benchmark fixture lacks what the harness needs."""


# --------------------------------------------------------------------------- #
# Lookup and conflict errors
# --------------------------------------------------------------------------- #
class NotFound(PipeforgeError, LookupError):
    """A named artifact does not exist."""


class UnknownSource(NotFound):
    """A raw source id (or metric source) is not registered."""


class UnknownSegment(NotFound):
    """A raw segment id does not exist."""


class DanglingReference(NotFound):
    """A pipeline spec references an artifact that is not registered."""


class VersionConflict(PipeforgeError):
    """A version is not strictly greater than the latest stored version."""


class DuplicateSource(PipeforgeError):
    """A raw source id is already registered."""


class DuplicateMetric(PipeforgeError):
    """A metric id/version is already defined."""


# --------------------------------------------------------------------------- #
# Data-state errors
# --------------------------------------------------------------------------- #
class MissingKeyField(InvalidArgument):
    """An incoming record lacks a value for one of the table key fields."""


class NonMonotonicLoadTimestamp(InvalidArgument):
    """A load timestamp does not advance past the existing versions of a key."""


class UnparseablePayload(InvalidArgument):
    """A raw payload does not parse under its registered format."""


class UnresolvablePin(PipeforgeError):
    """A transform input pin cannot be resolved against the stores."""


class ExecutionError(PipeforgeError):
    """A transform plan failed while executing."""


class DigestMismatch(PipeforgeError):
    """A replayed dataset does not reproduce its recorded content digest."""


class ClockSkew(InvalidArgument):
    """The supplied current time precedes the latest batch timestamp."""


# --------------------------------------------------------------------------- #
# Storage errors
# --------------------------------------------------------------------------- #
class StorageFailure(PipeforgeError):
    """Reading or writing the workspace failed."""


class IntegrityError(StorageFailure):
    """A stored artifact no longer matches its recorded digest."""


class LockTimeout(StorageFailure):
    """An advisory lock could not be acquired in time."""
