"""Tests for utility functions."""

from decimal import Decimal

import pytest
from jsonschema import Draft202012Validator

from pipeforge.errors import LockTimeout, MalformedDocument, SchemaViolation, StorageFailure
from pipeforge.utils import (
    advisory_lock,
    append_ndjson,
    atomic_write_text,
    canonical_json,
    check_schema,
    digest_of,
    format_duration,
    format_time_ago,
    is_identifier,
    is_safe_name,
    iter_ndjson,
    loads,
    pretty_json,
    read_json,
    sanitize_id,
    sha256_hex,
    write_json,
    write_new_bytes,
)


class TestSanitizeId:
    """Tests for sanitize_id() function."""

    def test_sanitize_basic_string(self):
        """Spaces become hyphens and case is folded."""
        assert sanitize_id("Daily Revenue") == "daily-revenue"
        assert sanitize_id("Customer Transactions") == "customer-transactions"

    def test_sanitize_path_separators(self):
        """Both slash styles become hyphens."""
        assert sanitize_id("raw/iot") == "raw-iot"
        assert sanitize_id("exports\\2025-08-26.csv") == "exports-2025-08-26-csv"

    def test_sanitize_special_characters(self):
        """Anything outside alphanumerics, hyphen and underscore is replaced."""
        assert sanitize_id("Batch #7!") == "batch--7-"
        assert sanitize_id("v1.2.3") == "v1-2-3"

    def test_sanitize_keeps_clean_ids(self):
        """Clean ids pass through unchanged."""
        assert sanitize_id("batch_0001") == "batch_0001"
        assert sanitize_id("etlt-2025") == "etlt-2025"

    def test_sanitize_empty_string(self):
        """Empty input stays empty."""
        assert sanitize_id("") == ""


class TestIdentifiers:
    """Tests for is_identifier() and is_safe_name()."""

    def test_identifiers(self):
        """Identifiers start with a letter or underscore."""
        assert is_identifier("customer_transactions")
        assert is_identifier("_private-1")
        assert not is_identifier("1table")
        assert not is_identifier("a b")
        assert not is_identifier("../etc")
        assert not is_identifier(None)

    def test_safe_names(self):
        """Safe names may start with a digit and contain dots, never '..'."""
        assert is_safe_name("2025-08-26.batch")
        assert is_safe_name("batch_customer_transactions")
        assert not is_safe_name("a/b")
        assert not is_safe_name("a..b")
        assert not is_safe_name("")


class TestFormatDuration:
    """Tests for format_duration() function."""

    def test_milliseconds(self):
        """Sub-second durations render as milliseconds."""
        assert format_duration(0.5) == "500ms"
        assert format_duration(0.0) == "0ms"

    def test_seconds(self):
        """One decimal place below a minute."""
        assert format_duration(1.0) == "1.0s"
        assert format_duration(30.5) == "30.5s"

    def test_larger_units(self):
        """Two-unit rendering from minutes to weeks."""
        assert format_duration(90) == "1m 30s"
        assert format_duration(3661) == "1h 1m"
        assert format_duration(90000) == "1d 1h"
        assert format_duration(604800) == "1w"
        assert format_duration(691200) == "1w 1d"

    def test_negative_values(self):
        """Negative values (clock skew) render empty."""
        assert format_duration(-1.0) == ""


class TestFormatTimeAgo:
    """Tests for format_time_ago() function."""

    def test_units(self):
        """Single largest unit, truncated."""
        assert format_time_ago(59.9) == "59s ago"
        assert format_time_ago(60) == "1m ago"
        assert format_time_ago(3600) == "1h ago"
        assert format_time_ago(259200) == "3d ago"
        assert format_time_ago(1209600) == "2w ago"

    def test_negative_values(self):
        """Negative values render empty."""
        assert format_time_ago(-60) == ""


class TestCanonicalJson:
    """Tests for canonical serialization and digests."""

    def test_sorted_compact(self):
        """Keys are sorted and separators compact."""
        assert canonical_json({"b": 1, "a": [True, None]}) == '{"a":[true,null],"b":1}'

    def test_numbers_normalize(self):
        """Integral decimals become ints, others keep four-digit precision."""
        assert canonical_json({"x": Decimal("20.0")}) == '{"x":20}'
        assert canonical_json({"x": Decimal("20.50")}) == '{"x":20.5}'
        assert canonical_json({"x": Decimal("0.00005")}) == '{"x":0}'
        assert canonical_json({"x": Decimal("0.00015")}) == '{"x":0.0002}'

    def test_large_decimals_are_exact(self):
        """Decimals past float precision serialize digit for digit and read back unchanged."""
        text = canonical_json({"v": Decimal("1234567890123.4567")})
        assert text == '{"v":1234567890123.4567}'
        assert loads(text) == {"v": Decimal("1234567890123.4567")}
        assert canonical_json([Decimal("98765432109876543.2100")]) == "[98765432109876543.21]"
        assert digest_of({"v": Decimal("1234567890123.4567")}) != digest_of({"v": Decimal("1234567890123.4568")})

    def test_pretty_json_keeps_decimals_exact(self):
        """The indented form writes the same exact number tokens."""
        assert pretty_json({"v": [Decimal("1234567890123.4567")]}) == '{\n  "v": [\n    1234567890123.4567\n  ]\n}'

    def test_digest_stable_across_key_order(self):
        """Insertion order never changes the digest."""
        assert digest_of({"a": 1, "b": 2}) == digest_of({"b": 2, "a": 1})
        assert digest_of({"a": 1}) == sha256_hex('{"a":1}')

    def test_pretty_json_has_no_trailing_newline(self):
        """pretty_json is indented and sorted."""
        text = pretty_json({"b": 1, "a": 2})
        assert text == '{\n  "a": 2,\n  "b": 1\n}'

    def test_loads_preserves_decimals(self):
        """Floats are parsed as Decimal."""
        assert loads('{"amount": 20.25}') == {"amount": Decimal("20.25")}

    def test_loads_rejects_malformed(self):
        """Malformed text raises MalformedDocument."""
        with pytest.raises(MalformedDocument):
            loads("{not json")


class TestFiles:
    """Tests for atomic writes and NDJSON helpers."""

    def test_write_and_read_json(self, tmp_path):
        """write_json writes canonical text plus a newline."""
        path = tmp_path / "nested" / "doc.json"
        write_json(path, {"b": 1, "a": Decimal("1.5")})
        assert path.read_text(encoding="utf-8") == '{"a":1.5,"b":1}\n'
        assert read_json(path) == {"a": Decimal("1.5"), "b": 1}

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        """Only the target file remains after a write."""
        atomic_write_text(tmp_path / "x.txt", "one")
        atomic_write_text(tmp_path / "x.txt", "two")
        assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]
        assert (tmp_path / "x.txt").read_text(encoding="utf-8") == "two"

    def test_write_new_bytes_refuses_overwrite(self, tmp_path):
        """Existing files are never replaced."""
        write_new_bytes(tmp_path / "segment-1.csv", b"a\n")
        with pytest.raises(StorageFailure):
            write_new_bytes(tmp_path / "segment-1.csv", b"b\n")
        assert (tmp_path / "segment-1.csv").read_bytes() == b"a\n"

    def test_ndjson_append_and_iterate(self, tmp_path):
        """Appended items come back in order; blank lines are skipped."""
        path = tmp_path / "log.ndjson"
        append_ndjson(path, [{"n": 1}, {"n": 2}])
        append_ndjson(path, [])
        with open(path, "a", encoding="utf-8") as handle:
            handle.write("\n")
        append_ndjson(path, [{"n": 3}])
        assert [item["n"] for item in iter_ndjson(path)] == [1, 2, 3]

    def test_iter_ndjson_missing_file(self, tmp_path):
        """An absent file yields nothing."""
        assert list(iter_ndjson(tmp_path / "absent.ndjson")) == []

    def test_iter_ndjson_corrupt_line(self, tmp_path):
        """A corrupt line is a storage failure."""
        path = tmp_path / "bad.ndjson"
        path.write_text('{"n": 1}\n{oops\n', encoding="utf-8")
        with pytest.raises(StorageFailure, match=":2:"):
            list(iter_ndjson(path))


class TestAdvisoryLock:
    """Tests for advisory_lock()."""

    def test_lock_released_on_exit(self, tmp_path):
        """The lock file exists only inside the block."""
        lock = tmp_path / "locks" / "t.lock"
        with advisory_lock(lock):
            assert lock.exists()
        assert not lock.exists()

    def test_competing_holder_times_out(self, tmp_path):
        """A second holder gives up after the timeout."""
        lock = tmp_path / "t.lock"
        with advisory_lock(lock):
            with pytest.raises(LockTimeout):
                with advisory_lock(lock, timeout=0):
                    pass
        assert not lock.exists()


class TestCheckSchema:
    """Tests for check_schema()."""

    SCHEMA = {"type": "object", "required": ["name"], "properties": {"name": {"type": "string"}}}

    def test_valid_document(self):
        """A valid document passes silently."""
        check_schema({"name": "x"}, Draft202012Validator(self.SCHEMA), "doc")

    def test_error_names_location(self):
        """The first error is reported with its document path."""
        with pytest.raises(SchemaViolation, match="doc: name:"):
            check_schema({"name": 3}, Draft202012Validator(self.SCHEMA), "doc")

    def test_root_error(self):
        """Errors at the root are reported as <root>."""
        with pytest.raises(SchemaViolation, match="doc: <root>:"):
            check_schema({}, Draft202012Validator(self.SCHEMA), "doc")

    def test_custom_error_type(self):
        """Callers can choose the raised type."""
        with pytest.raises(MalformedDocument):
            check_schema({}, Draft202012Validator(self.SCHEMA), "doc", error=MalformedDocument)
