"""Tests for datatype coercion and value normalization."""

from datetime import date, datetime, timedelta, timezone
from decimal import Decimal

import pytest

from pipeforge.errors import TypeMismatch
from pipeforge.values import (
    coerce,
    format_timestamp,
    parse_date,
    parse_timestamp,
    row_sort_key,
    sort_key,
    to_decimal,
    to_plain,
)


class TestCoerce:
    """Tests for coerce()."""

    def test_missing_passes_through(self):
        """None stays None for every datatype."""
        for datatype in ("integer", "decimal", "text", "boolean", "date", "timestamp"):
            assert coerce(None, datatype) is None

    def test_integer(self):
        """Integral text and integral decimals become ints."""
        assert coerce("42", "integer") == 42
        assert coerce(" -7 ", "integer") == -7
        assert coerce(Decimal("3.0"), "integer") == 3

    @pytest.mark.parametrize("value", ["4.5", "abc", True, Decimal("1.25")])
    def test_integer_rejects(self, value):
        """Non-integral or non-numeric values are type mismatches."""
        with pytest.raises(TypeMismatch):
            coerce(value, "integer")

    def test_decimal_quantized(self):
        """Decimals carry four fractional digits, rounded half-even."""
        assert coerce("20", "decimal") == Decimal("20.0000")
        assert coerce("0.00005", "decimal") == Decimal("0.0000")
        assert coerce("0.00015", "decimal") == Decimal("0.0002")

    @pytest.mark.parametrize("value", ["twenty", "NaN", "Infinity", False])
    def test_decimal_rejects(self, value):
        """Non-finite and non-numeric values are type mismatches."""
        with pytest.raises(TypeMismatch):
            coerce(value, "decimal")

    def test_text_accepts_numbers(self):
        """Numbers read as text keep their plain form."""
        assert coerce(1001, "text") == "1001"
        assert coerce(Decimal("20.50"), "text") == "20.5"

    def test_boolean(self):
        """true/false/1/0 in any case."""
        assert coerce("TRUE", "boolean") is True
        assert coerce("0", "boolean") is False
        with pytest.raises(TypeMismatch):
            coerce("yes", "boolean")

    def test_date_and_timestamp(self):
        """Date text and ISO timestamps parse."""
        assert coerce("2025-08-26", "date") == date(2025, 8, 26)
        assert coerce("2025-08-26T10:00:00Z", "timestamp") == datetime(2025, 8, 26, 10, tzinfo=timezone.utc)
        with pytest.raises(TypeMismatch):
            coerce("26/08/2025", "date")

    def test_unknown_datatype(self):
        """Unknown datatypes are rejected."""
        with pytest.raises(TypeMismatch):
            coerce("x", "money")


class TestTimestamps:
    """Tests for timestamp parsing and formatting."""

    def test_offsets_normalize_to_utc(self):
        """Numeric offsets are converted to UTC."""
        ts = parse_timestamp("2025-08-26T02:00:00+02:00")
        assert ts == datetime(2025, 8, 26, tzinfo=timezone.utc)
        assert ts.utcoffset() == timedelta(0)

    def test_naive_is_utc(self):
        """Naive datetimes are taken as UTC."""
        assert parse_timestamp(datetime(2025, 8, 26)).tzinfo is not None

    def test_date_only_is_midnight(self):
        """Date-only text maps to midnight UTC."""
        assert format_timestamp(parse_timestamp("2025-08-27")) == "2025-08-27T00:00:00Z"

    def test_parse_date_from_datetime(self):
        """parse_date accepts datetimes."""
        assert parse_date(datetime(2025, 8, 28, 23, 59, tzinfo=timezone.utc)) == date(2025, 8, 28)

    def test_garbage_rejected(self):
        """Unparseable text raises TypeMismatch."""
        with pytest.raises(TypeMismatch):
            parse_timestamp("yesterday")


class TestPlainAndOrdering:
    """Tests for to_plain() and the sort keys."""

    def test_plain_numbers(self):
        """20 and 20.0 normalize identically."""
        assert to_plain(Decimal("20.0")) == to_plain(20) == 20
        assert to_plain(Decimal("20.50")) == Decimal("20.5")

    def test_plain_containers(self):
        """Containers are normalized recursively; sets are sorted."""
        assert to_plain({"d": date(2025, 8, 26), "xs": [Decimal("1.0")]}) == {"d": "2025-08-26", "xs": [1]}
        assert to_plain({3, 1, 2}) == [1, 2, 3]

    def test_missing_sorts_first(self):
        """None sorts before every other value."""
        values = ["b", 3, None, Decimal("1.5"), True]
        assert sorted(values, key=sort_key) == [None, True, Decimal("1.5"), 3, "b"]

    def test_row_sort_key(self):
        """Rows order by the listed fields."""
        rows = [{"a": 2, "b": "x"}, {"a": 1, "b": "y"}, {"a": None, "b": "z"}]
        assert [r["b"] for r in sorted(rows, key=lambda r: row_sort_key(r, ["a"]))] == ["z", "y", "x"]

    def test_to_decimal_rejects_bool(self):
        """Booleans are not numbers."""
        with pytest.raises(TypeMismatch):
            to_decimal(True)
