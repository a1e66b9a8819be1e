"""Datatype coercion, normalization and ordering for contract-typed values.

The closed datatype set is: integer, decimal, text, boolean, date, timestamp.
Decimals are fixed-point with four fractional digits (round-half-even) so that
arithmetic and digests are identical on every platform.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from datetime import date, datetime, timezone
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from typing import Any, Optional

from .errors import TypeMismatch

DATATYPES = ("integer", "decimal", "text", "boolean", "date", "timestamp")

DECIMAL_QUANTUM = Decimal("0.0001")

_INTEGER_RE = re.compile(r"^[+-]?\d+$")
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_TRUE = {"true", "1"}
_FALSE = {"false", "0"}


def is_missing(value: Any) -> bool:
    """Return True for values treated as missing (None)."""
    return value is None


def quantize(value: Decimal) -> Decimal:
    """Round a decimal to the engine's fixed-point precision."""
    return value.quantize(DECIMAL_QUANTUM, rounding=ROUND_HALF_EVEN)


def utc_now() -> datetime:
    """Current time as an aware UTC datetime."""
    return datetime.now(timezone.utc)


def parse_timestamp(value: Any) -> datetime:
    """Parse a timestamp-like value into an aware UTC datetime.

    Accepts datetimes (naive ones are taken as UTC), dates (midnight UTC) and ISO-8601
    text with a ``Z`` suffix or numeric offset. Date-only text maps to midnight UTC.

    Raises
    ------
    TypeMismatch
        If the value is not a recognizable timestamp.
    """
    if isinstance(value, datetime):
        if value.tzinfo is None:
            return value.replace(tzinfo=timezone.utc)
        return value.astimezone(timezone.utc)
    if isinstance(value, date):
        return datetime(value.year, value.month, value.day, tzinfo=timezone.utc)
    if isinstance(value, str):
        text = value.strip()
        if _DATE_RE.match(text):
            return parse_timestamp(_parse_date_text(text))
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        try:
            return parse_timestamp(datetime.fromisoformat(text))
        except ValueError as exc:
            raise TypeMismatch(f"not a timestamp: {value!r}") from exc
    raise TypeMismatch(f"not a timestamp: {value!r}")


def format_timestamp(value: datetime) -> str:
    """Render a timestamp as ISO-8601 UTC with a ``Z`` suffix."""
    ts = parse_timestamp(value)
    text = ts.replace(tzinfo=None).isoformat()
    if "T" not in text:
        text += "T00:00:00"
    return text + "Z"


def parse_date(value: Any) -> date:
    """Parse a date-like value (``YYYY-MM-DD`` text, date, or datetime)."""
    if isinstance(value, datetime):
        return parse_timestamp(value).date()
    if isinstance(value, date):
        return value
    if isinstance(value, str) and _DATE_RE.match(value.strip()):
        return _parse_date_text(value.strip())
    raise TypeMismatch(f"not a date: {value!r}")


def _parse_date_text(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError as exc:
        raise TypeMismatch(f"not a date: {text!r}") from exc


def to_decimal(value: Any) -> Decimal:
    """Interpret a numeric value (or numeric text) as a quantized Decimal."""
    if isinstance(value, bool):
        raise TypeMismatch(f"not a decimal: {value!r}")
    if isinstance(value, Decimal):
        if not value.is_finite():
            raise TypeMismatch(f"not a decimal: {value!r}")
        return quantize(value)
    if isinstance(value, int):
        return quantize(Decimal(value))
    if isinstance(value, (float, str)):
        try:
            result = Decimal(str(value).strip())
        except InvalidOperation as exc:
            raise TypeMismatch(f"not a decimal: {value!r}") from exc
        if not result.is_finite():
            raise TypeMismatch(f"not a decimal: {value!r}")
        return quantize(result)
    raise TypeMismatch(f"not a decimal: {value!r}")


def coerce(value: Any, datatype: str) -> Any:
    """Convert a raw scalar into the typed value for ``datatype``.

    Missing values pass through as None.

    Raises
    ------
    TypeMismatch
        If the value cannot be interpreted as the datatype.
    """
    if value is None:
        return None
    if datatype == "integer":
        return _coerce_integer(value)
    if datatype == "decimal":
        return to_decimal(value)
    if datatype == "text":
        if isinstance(value, str):
            return value
        if isinstance(value, (int, Decimal, float)) and not isinstance(value, bool):
            return str(to_plain(value))
        raise TypeMismatch(f"not text: {value!r}")
    if datatype == "boolean":
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.strip().lower() in _TRUE | _FALSE:
            return value.strip().lower() in _TRUE
        raise TypeMismatch(f"not a boolean: {value!r}")
    if datatype == "date":
        return parse_date(value)
    if datatype == "timestamp":
        return parse_timestamp(value)
    raise TypeMismatch(f"unknown datatype {datatype!r}")


def _coerce_integer(value: Any) -> int:
    if isinstance(value, bool):
        raise TypeMismatch(f"not an integer: {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and _INTEGER_RE.match(value.strip()):
        return int(value.strip())
    if isinstance(value, (Decimal, float)):
        dec = Decimal(str(value))
        if dec.is_finite() and dec == dec.to_integral_value():
            return int(dec)
    raise TypeMismatch(f"not an integer: {value!r}")


def to_plain(value: Any) -> Any:
    """Return the canonical JSON-ready form of a value (recursively for containers).

    Numbers become int when integral, otherwise a quantized Decimal; dates and
    timestamps become ISO text. ``20`` and ``20.0`` therefore normalize identically.
    """
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        return value
    if isinstance(value, (Decimal, float)):
        dec = to_decimal(value)
        if dec == dec.to_integral_value():
            return int(dec)
        return dec.normalize()
    if isinstance(value, datetime):
        return format_timestamp(value)
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return sorted((to_plain(v) for v in value), key=sort_key)
    return value


def sort_key(value: Any) -> tuple:
    """Total-order key across mixed scalars; missing sorts first."""
    if value is None:
        return (0,)
    if isinstance(value, bool):
        return (1, int(value))
    if isinstance(value, (int, Decimal, float)):
        return (2, Decimal(str(value)) if isinstance(value, float) else Decimal(value))
    if isinstance(value, datetime):
        return (3, format_timestamp(value))
    if isinstance(value, date):
        return (3, value.isoformat())
    if isinstance(value, str):
        return (4, value)
    return (5, repr(value))


def row_sort_key(row: Mapping[str, Any], fields: Optional[list[str]] = None) -> tuple:
    """Sort key for a row over ``fields`` (all keys in sorted order when omitted)."""
    names = fields if fields is not None else sorted(row)
    return tuple(sort_key(row.get(name)) for name in names)
