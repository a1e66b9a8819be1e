"""Tests for versioned tables, as-of queries and the last-write-wins baseline table."""

import random
from datetime import datetime, timedelta, timezone
from decimal import Decimal

import pytest

from pipeforge.errors import (
    IntegrityError,
    InvalidArgument,
    InvalidWindow,
    MissingKeyField,
    NonMonotonicLoadTimestamp,
    NotFound,
    UnknownField,
)
from pipeforge.values import parse_timestamp
from pipeforge.versioned_store import (
    LastWriteWinsTable,
    PartialVersioningPolicy,
    VersionedRow,
    VersionedTable,
    apply_batch,
    configure_partial_versioning,
    current,
    history,
    query_asof,
)


def _amounts(rows):
    return {key["transaction_id"]: payload["amount"] for key, payload in rows}


@pytest.fixture
def table(workspace):
    return VersionedTable.create(workspace, "transactions", ["transaction_id"])


@pytest.fixture
def loaded(table, transaction_rows):
    """The transactions table after all three daily loads, plus their reports."""
    reports = [apply_batch(table, rows, day) for day, rows in transaction_rows]
    return table, reports


class TestApplyBatch:
    """Tests for apply_batch()."""

    def test_daily_reports(self, loaded):
        """New keys insert, repeats are unchanged, changes close and insert."""
        _, reports = loaded
        counts = [(r.inserted, r.closed, r.unchanged) for r in reports]
        assert counts == [(2, 0, 0), (1, 0, 1), (1, 1, 0)]
        assert reports[2].load_ts == datetime(2025, 8, 28, tzinfo=timezone.utc)

    def test_reapply_is_unchanged(self, loaded, transaction_rows):
        """Re-applying a batch at a later load_ts changes nothing."""
        table, _ = loaded
        report = table.apply_batch(transaction_rows[2][1], "2025-08-29")
        assert (report.inserted, report.closed, report.unchanged) == (0, 0, 1)
        assert len(table.segment_files()) == 3

    def test_numeric_normalization(self, table):
        """20 and 20.0 are the same value."""
        table.apply_batch([{"transaction_id": "T1", "amount": 20}], "2025-08-26")
        report = table.apply_batch([{"transaction_id": "T1", "amount": Decimal("20.0")}], "2025-08-27")
        assert (report.inserted, report.unchanged) == (0, 1)

    def test_missing_key(self, table):
        """Records must carry every key field."""
        with pytest.raises(MissingKeyField):
            table.apply_batch([{"amount": 5}], "2025-08-26")

    def test_non_monotonic(self, loaded):
        """load_ts must advance past the key's latest valid_from."""
        table, _ = loaded
        with pytest.raises(NonMonotonicLoadTimestamp):
            table.apply_batch([{"transaction_id": "T002", "amount": 99}], "2025-08-28")
        with pytest.raises(NonMonotonicLoadTimestamp):
            table.apply_batch([{"transaction_id": "T001", "amount": 1}], "2025-08-20")

    def test_duplicate_key_in_batch(self, table):
        """One key twice at the same load_ts is rejected and nothing is written."""
        with pytest.raises(NonMonotonicLoadTimestamp):
            table.apply_batch([{"transaction_id": "T1", "amount": 1}, {"transaction_id": "T1", "amount": 2}], "2025-08-26")
        assert table.rows() == []

    def test_metadata_fields_rejected(self, table):
        """Payloads cannot carry valid_from/valid_to."""
        with pytest.raises(InvalidArgument):
            table.apply_batch([{"transaction_id": "T1", "valid_to": "2025-01-01"}], "2025-08-26")

    def test_closed_rows_never_rewritten(self, loaded):
        """Earlier segment files are untouched by later loads."""
        table, _ = loaded
        first = table.segment_files()[0]
        before = first.read_bytes()
        table.apply_batch([{"transaction_id": "T001", "amount": 51}], "2025-08-30")
        assert first.read_bytes() == before


class TestQueryAsof:
    """Tests for query_asof() and current()."""

    def test_as_of_first_day(self, loaded):
        """The first day's state is T001/50 and T002/20."""
        table, _ = loaded
        assert _amounts(query_asof(table, "2025-08-26")) == {"T001": 50, "T002": 20}

    def test_as_of_last_day(self, loaded):
        """The final state has the corrected T002."""
        table, _ = loaded
        rows = query_asof(table, "2025-08-28")
        assert rows == [
            ({"transaction_id": "T001"}, {"transaction_id": "T001", "amount": 50}),
            ({"transaction_id": "T002"}, {"transaction_id": "T002", "amount": 25}),
            ({"transaction_id": "T003"}, {"transaction_id": "T003", "amount": 30}),
        ]

    def test_intra_day(self, loaded):
        """Timestamps between loads see the earlier load."""
        table, _ = loaded
        assert _amounts(query_asof(table, "2025-08-27T23:59:59Z")) == {"T001": 50, "T002": 20, "T003": 30}

    def test_before_history(self, loaded):
        """Nothing is visible before the first load."""
        table, _ = loaded
        assert query_asof(table, "2025-08-25") == []

    def test_current(self, loaded, workspace):
        """current() is the open rows and matches the latest as-of."""
        table, _ = loaded
        assert current(table) == query_asof(table, "2030-01-01")
        assert _amounts(current(table)) == {"T001": 50, "T002": 25, "T003": 30}
        assert current(VersionedTable.create(workspace, "empty", ["id"])) == []

    def test_reopened_table_reads_same(self, loaded, workspace):
        """A fresh handle folds the same committed state."""
        table, _ = loaded
        assert VersionedTable.open(workspace, "transactions").query_asof("2025-08-27") == table.query_asof("2025-08-27")

    def test_stray_segment_ignored(self, loaded):
        """Segment files not listed in the manifest are invisible."""
        table, _ = loaded
        stray = table.segment_files()[0].parent / "segment-99.ndjson"
        stray.write_text('{"event":"insert","key":{"transaction_id":"T9"},"payload":{},"ts":"2025-08-26T00:00:00Z"}\n')
        assert "T9" not in _amounts(table.query_asof("2025-08-28"))

    def test_tampered_segment(self, loaded):
        """A segment that no longer matches its digest is an integrity error."""
        table, _ = loaded
        with open(table.segment_files()[0], "a", encoding="utf-8") as handle:
            handle.write("\n")
        with pytest.raises(IntegrityError):
            table.query_asof("2025-08-28")


class TestHistory:
    """Tests for history()."""

    def test_corrected_key(self, loaded):
        """T002 has a closed first version and an open second one."""
        table, _ = loaded
        chain = history(table, "T002")
        assert [(row.payload["amount"], row.valid_from.day, row.valid_to and row.valid_to.day) for row in chain] == [
            (20, 26, 28),
            (25, 28, None),
        ]

    def test_key_forms(self, loaded):
        """Keys may be given as scalar, tuple or mapping."""
        table, _ = loaded
        assert history(table, "T003") == history(table, ("T003",)) == history(table, {"transaction_id": "T003"})

    def test_unknown_key(self, loaded):
        """Unknown keys have an empty history."""
        table, _ = loaded
        assert history(table, "T404") == []

    def test_intervals_meet(self, table):
        """Three changes leave three closed versions meeting the next valid_from."""
        for day, amount in zip(range(1, 5), (10, 11, 12, 13)):
            table.apply_batch([{"transaction_id": "T1", "amount": amount}], f"2025-09-0{day}")
        chain = table.history("T1")
        assert [row.is_open for row in chain] == [False, False, False, True]
        for earlier, later in zip(chain, chain[1:]):
            assert earlier.valid_to == later.valid_from

    def test_row_invariants(self):
        """valid_to must follow valid_from and payloads exclude metadata."""
        ts = parse_timestamp("2025-08-26")
        with pytest.raises(InvalidArgument):
            VersionedRow(("T1",), {}, ts, ts)
        with pytest.raises(InvalidArgument):
            VersionedRow(("T1",), {"valid_from": "x"}, ts)


class TestModelEquivalence:
    """Random update sequences against a brute-force event model."""

    @staticmethod
    def _model_asof(events, t):
        state = {}
        for key, payload, ts in events:
            if ts <= t:
                state[key] = payload
        return {key: state[key]["amount"] for key in sorted(state)}

    @pytest.mark.parametrize("seed", range(12))
    def test_random_sequences(self, workspace, seed):
        """query_asof equals the linear-scan model at and between every load."""
        rng = random.Random(seed)
        table = VersionedTable.create(workspace, f"model_{seed}", ["transaction_id"])
        keys = [f"K{i}" for i in range(rng.randint(1, 10))]
        start = datetime(2025, 1, 1, tzinfo=timezone.utc)
        events = []
        loads = []
        operations = 0
        step = 0
        while operations < 50:
            step += 1
            ts = start + timedelta(days=step, hours=rng.randint(0, 12))
            batch = [{"transaction_id": k, "amount": rng.randint(0, 3)} for k in rng.sample(keys, rng.randint(1, len(keys)))]
            operations += len(batch)
            table.apply_batch(batch, ts)
            events.extend((r["transaction_id"], r, ts) for r in batch)
            loads.append(ts)

        for ts in loads:
            for instant in (ts, ts + timedelta(minutes=30)):
                rows = table.query_asof(instant)
                assert {k["transaction_id"]: p["amount"] for k, p in rows} == self._model_asof(events, instant)
        for key in keys:
            assert sum(1 for row in table.history(key) if row.is_open) <= 1

    def test_historical_answers_stable(self, loaded):
        """Later loads never change earlier as-of answers."""
        table, _ = loaded
        before = table.query_asof("2025-08-27")
        table.apply_batch([{"transaction_id": "T003", "amount": 31}, {"transaction_id": "T004", "amount": 1}], "2025-09-01")
        assert table.query_asof("2025-08-27") == before


class TestPartialVersioning:
    """Tests for configure_partial_versioning() and compaction."""

    def test_untracked_change_is_unchanged(self, table):
        """Only tracked fields open new versions."""
        table.apply_batch([{"transaction_id": "T1", "amount": 5, "email": "a@x.io"}], "2025-08-26")
        configure_partial_versioning(table, PartialVersioningPolicy(tracked_fields=("amount",)))
        report = table.apply_batch([{"transaction_id": "T1", "amount": 5, "email": "b@x.io"}], "2025-08-27")
        assert (report.inserted, report.unchanged) == (0, 1)
        report = table.apply_batch([{"transaction_id": "T1", "amount": 6, "email": "b@x.io"}], "2025-08-28")
        assert (report.inserted, report.closed) == (1, 1)

    def test_policy_persists(self, table, workspace):
        """The policy is stored in the manifest."""
        table.apply_batch([{"transaction_id": "T1", "amount": 5}], "2025-08-26")
        table.configure_partial_versioning(PartialVersioningPolicy(("amount",), 2))
        assert VersionedTable.open(workspace, "transactions").policy == PartialVersioningPolicy(("amount",), 2)

    def test_unknown_field(self, table):
        """Tracked fields must exist."""
        table.apply_batch([{"transaction_id": "T1", "amount": 5}], "2025-08-26")
        with pytest.raises(UnknownField):
            table.configure_partial_versioning(PartialVersioningPolicy(("colour",)))

    def test_degenerate_policies(self):
        """Empty tracked sets and negative windows are rejected."""
        with pytest.raises(InvalidArgument):
            PartialVersioningPolicy(tracked_fields=())
        with pytest.raises(InvalidWindow):
            PartialVersioningPolicy(retention_days=-1)

    def test_compaction_keeps_window(self, loaded):
        """Closed versions beyond the window are dropped; answers inside it hold."""
        table, _ = loaded
        table.configure_partial_versioning(PartialVersioningPolicy(retention_days=1))
        instants = ["2025-08-29", "2025-08-30", "2025-09-05"]
        before = [table.query_asof(t) for t in instants]
        report = table.compact("2025-08-30")
        assert report.dropped == 1
        assert report.cutoff == parse_timestamp("2025-08-29")
        assert [table.query_asof(t) for t in instants] == before
        assert [row.payload["amount"] for row in table.history("T002")] == [25]
        assert len(table.segment_files()) == 1
        assert table.compactions[0]["dropped"] == 1

    def test_compaction_without_policy(self, loaded):
        """Without retention nothing is dropped."""
        table, _ = loaded
        assert table.compact("2030-01-01").dropped == 0

    def test_compaction_sees_policy_from_another_handle(self, loaded, workspace):
        """A handle opened before the policy was installed compacts with the stored policy."""
        table, _ = loaded
        stale = VersionedTable.open(workspace, "transactions")
        table.configure_partial_versioning(PartialVersioningPolicy(retention_days=1))
        report = stale.compact("2025-08-30")
        assert report.dropped == 1
        assert report.cutoff == parse_timestamp("2025-08-29")
        assert VersionedTable.open(workspace, "transactions").compactions[0]["dropped"] == 1


class TestTableLifecycle:
    """Tests for create/open."""

    def test_create_errors(self, workspace):
        """Bad names, empty keys, undeclared keys and duplicates are rejected."""
        with pytest.raises(InvalidArgument):
            VersionedTable.create(workspace, "bad name", ["id"])
        with pytest.raises(InvalidArgument):
            VersionedTable.create(workspace, "t", [])
        with pytest.raises(UnknownField):
            VersionedTable.create(workspace, "t", ["id"], [{"name": "amount", "datatype": "decimal"}])
        VersionedTable.create(workspace, "t", ["id"])
        with pytest.raises(InvalidArgument):
            VersionedTable.create(workspace, "t", ["id"])

    def test_open_unknown(self, workspace):
        """Opening a missing table is NotFound."""
        with pytest.raises(NotFound):
            VersionedTable.open(workspace, "missing")

    def test_declared_fields(self, workspace):
        """Declared fields round-trip through the manifest."""
        VersionedTable.create(workspace, "t", ["id"], [{"name": "id", "datatype": "text", "required": True}])
        table = VersionedTable.open_or_create(workspace, "t", ["ignored"])
        assert [spec.name for spec in table.fields] == ["id"]
        assert table.key_fields == ["id"]


class TestLastWriteWinsTable:
    """Tests for the unversioned baseline table."""

    def test_overwrites_by_key(self, workspace, transaction_rows):
        """Only the last payload per key survives."""
        lww = LastWriteWinsTable(workspace, "baseline", ["transaction_id"])
        for _, rows in transaction_rows:
            lww.upsert(rows)
        assert [(r["transaction_id"], r["amount"]) for r in lww.rows()] == [("T001", 50), ("T002", 25), ("T003", 30)]
        assert lww.size_bytes() > 0

    def test_empty(self, workspace):
        """A fresh table is empty."""
        lww = LastWriteWinsTable(workspace, "baseline", ["id"])
        assert lww.rows() == []
        assert lww.size_bytes() == 0
