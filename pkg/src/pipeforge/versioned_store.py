"""Append-only versioned tables with valid_from/valid_to intervals and as-of queries.

Each table lives in ``tables/<name>/``: a ``manifest.json`` listing committed segment
files in order, and ``segment-<n>.ndjson`` files of row events. An ``insert`` event
opens a version at its timestamp; a ``close`` event sets the open version's
valid_to. Readers fold the events of the committed segments, so a batch becomes
visible only when the manifest is replaced at the end of ``apply_batch``.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Optional, Union

from .contract import FieldSpec, as_field_specs
from .errors import (
    IntegrityError,
    InvalidArgument,
    InvalidWindow,
    MissingKeyField,
    NonMonotonicLoadTimestamp,
    NotFound,
    StorageFailure,
    UnknownField,
)
from .logging import get_logger
from .utils import (
    canonical_json,
    is_identifier,
    iter_ndjson,
    read_bytes,
    read_json,
    sha256_hex,
    write_json,
    write_new_bytes,
)
from .values import format_timestamp, is_missing, parse_timestamp, row_sort_key, sort_key, to_plain
from .workspace import Workspace

_logger = get_logger()

METADATA_FIELDS = ("valid_from", "valid_to")

Key = tuple[Any, ...]


@dataclass(frozen=True)
class VersionedRow:
    """One version of a keyed record and its validity interval (open when valid_to is None)."""

    key: Key
    payload: Mapping[str, Any]
    valid_from: datetime
    valid_to: Optional[datetime] = None

    def __post_init__(self) -> None:
        if self.valid_to is not None and self.valid_to <= self.valid_from:
            raise InvalidArgument("valid_to must be strictly greater than valid_from")
        if any(name in self.payload for name in METADATA_FIELDS):
            raise InvalidArgument("payload cannot carry valid_from/valid_to")

    @property
    def is_open(self) -> bool:
        return self.valid_to is None

    def visible_at(self, t: datetime) -> bool:
        return self.valid_from <= t and (self.valid_to is None or self.valid_to > t)

    def to_dict(self) -> dict[str, Any]:
        return {
            "key": list(self.key),
            "payload": dict(self.payload),
            "valid_from": format_timestamp(self.valid_from),
            "valid_to": format_timestamp(self.valid_to) if self.valid_to else None,
        }


@dataclass(frozen=True)
class VersioningReport:
    """Counts of one apply_batch call."""

    inserted: int
    closed: int
    unchanged: int
    load_ts: datetime

    def __post_init__(self) -> None:
        if self.inserted < self.closed:
            raise InvalidArgument("a close always pairs with an insert")

    def to_dict(self) -> dict[str, Any]:
        return {
            "inserted": self.inserted,
            "closed": self.closed,
            "unchanged": self.unchanged,
            "load_ts": format_timestamp(self.load_ts),
        }


@dataclass(frozen=True)
class PartialVersioningPolicy:
    """Which fields create new versions, and how long closed versions are retained.

    Attributes
    ----------
    tracked_fields : Optional[tuple[str, ...]]
        Only changes in these fields open a new version (None tracks every field)
    retention_days : Optional[int]
        Closed versions whose valid_to is older than this many days are dropped by
        ``compact`` (None keeps everything)

    Raises
    ------
    InvalidArgument
        If tracked_fields is empty.
    InvalidWindow
        If retention_days is negative.
    """

    tracked_fields: Optional[tuple[str, ...]] = None
    retention_days: Optional[int] = None

    def __post_init__(self) -> None:
        if self.tracked_fields is not None:
            object.__setattr__(self, "tracked_fields", tuple(self.tracked_fields))
            if not self.tracked_fields:
                raise InvalidArgument("empty tracked field set would version nothing")
        if self.retention_days is not None:
            if isinstance(self.retention_days, bool) or not isinstance(self.retention_days, int):
                raise InvalidWindow("retention_days must be an integer")
            if self.retention_days < 0:
                raise InvalidWindow("retention_days must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "tracked_fields": list(self.tracked_fields) if self.tracked_fields is not None else None,
            "retention_days": self.retention_days,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PartialVersioningPolicy:
        tracked = data.get("tracked_fields")
        return cls(tuple(tracked) if tracked is not None else None, data.get("retention_days"))


@dataclass(frozen=True)
class CompactionReport:
    dropped: int
    cutoff: Optional[datetime]

    def to_dict(self) -> dict[str, Any]:
        return {"dropped": self.dropped, "cutoff": format_timestamp(self.cutoff) if self.cutoff else None}


class VersionedTable:
    """A versioned table stored under ``tables/<name>/``.

    Parameters
    ----------
    workspace : Workspace
        Workspace holding the table
    name : str
        Table name
    manifest : dict
        Committed manifest (use ``create`` or ``open`` rather than calling this directly)
    """

    MANIFEST: str = "manifest.json"

    def __init__(self, workspace: Workspace, name: str, manifest: dict[str, Any]) -> None:
        self.workspace = workspace
        self.name = name
        self._manifest = manifest

    def __repr__(self) -> str:
        return f"VersionedTable({self.name!r}, key_fields={self.key_fields!r})"

    # ------------------------------------------------------------------ #
    # Construction
    # ------------------------------------------------------------------ #
    @staticmethod
    def directory(workspace: Workspace, name: str) -> Path:
        return workspace.path("tables", name)

    @classmethod
    def exists(cls, workspace: Workspace, name: str) -> bool:
        return is_identifier(name) and (cls.directory(workspace, name) / cls.MANIFEST).exists()

    @classmethod
    def create(
        cls,
        workspace: Workspace,
        name: str,
        key_fields: Sequence[str],
        fields: Optional[Sequence[Union[FieldSpec, Mapping[str, Any]]]] = None,
    ) -> VersionedTable:
        """Create an empty table.

        Raises
        ------
        InvalidArgument
            If the name is invalid, key_fields is empty, or the table already exists.
        UnknownField
            If a key field is not among the declared fields.
        """
        if not is_identifier(name):
            raise InvalidArgument(f"invalid table name {name!r}")
        if not key_fields:
            raise InvalidArgument("key_fields cannot be empty")
        specs = as_field_specs(fields) if fields is not None else None
        if specs is not None:
            declared = {spec.name for spec in specs}
            missing = [k for k in key_fields if k not in declared]
            if missing:
                raise UnknownField(f"key fields not declared: {', '.join(missing)}")
        manifest = {
            "name": name,
            "key_fields": list(key_fields),
            "fields": [spec.to_dict() for spec in specs] if specs is not None else None,
            "policy": None,
            "segments": [],
            "next_segment": 1,
            "compactions": [],
        }
        with workspace.lock(f"table-{name}"):
            if cls.exists(workspace, name):
                raise InvalidArgument(f"table {name} already exists")
            write_json(cls.directory(workspace, name) / cls.MANIFEST, manifest)
        _logger.info(f"Created table {name} keyed on {', '.join(key_fields)}")
        return cls(workspace, name, manifest)

    @classmethod
    def open(cls, workspace: Workspace, name: str) -> VersionedTable:
        if not cls.exists(workspace, name):
            raise NotFound(f"no table named {name!r}")
        return cls(workspace, name, read_json(cls.directory(workspace, name) / cls.MANIFEST))

    @classmethod
    def open_or_create(
        cls,
        workspace: Workspace,
        name: str,
        key_fields: Sequence[str],
        fields: Optional[Sequence[Union[FieldSpec, Mapping[str, Any]]]] = None,
    ) -> VersionedTable:
        if cls.exists(workspace, name):
            return cls.open(workspace, name)
        return cls.create(workspace, name, key_fields, fields)

    def _reload(self) -> None:
        self._manifest = read_json(self.directory(self.workspace, self.name) / self.MANIFEST)

    # ------------------------------------------------------------------ #
    # Metadata
    # ------------------------------------------------------------------ #
    @property
    def key_fields(self) -> list[str]:
        return list(self._manifest["key_fields"])

    @property
    def fields(self) -> Optional[tuple[FieldSpec, ...]]:
        declared = self._manifest.get("fields")
        return as_field_specs(declared) if declared is not None else None

    @property
    def policy(self) -> Optional[PartialVersioningPolicy]:
        policy = self._manifest.get("policy")
        return PartialVersioningPolicy.from_dict(policy) if policy else None

    @property
    def compactions(self) -> list[dict[str, Any]]:
        return list(self._manifest.get("compactions", []))

    def known_fields(self) -> set[str]:
        """Declared field names, or every field observed in stored payloads."""
        declared = self.fields
        if declared is not None:
            return {spec.name for spec in declared}
        names = set(self.key_fields)
        for row in self.rows():
            names.update(row.payload)
        return names

    def segment_files(self) -> list[Path]:
        directory = self.directory(self.workspace, self.name)
        return [directory / entry["file"] for entry in self._manifest["segments"]]

    # ------------------------------------------------------------------ #
    # Reading
    # ------------------------------------------------------------------ #
    def _events(self) -> Iterable[dict[str, Any]]:
        directory = self.directory(self.workspace, self.name)
        for entry in self._manifest["segments"]:
            path = directory / entry["file"]
            if not path.exists():
                raise IntegrityError(f"table {self.name}: segment {entry['file']} is missing")
            if sha256_hex(read_bytes(path)) != entry["digest"]:
                raise IntegrityError(f"table {self.name}: segment {entry['file']} does not match its digest")
            yield from iter_ndjson(path)

    def _chains(self) -> dict[Key, list[VersionedRow]]:
        chains: dict[Key, list[VersionedRow]] = {}
        for event in self._events():
            key = tuple(event["key"][name] for name in self.key_fields)
            ts = parse_timestamp(event["ts"])
            chain = chains.setdefault(key, [])
            if event["event"] == "insert":
                chain.append(VersionedRow(key, dict(event["payload"]), ts))
            elif event["event"] == "close":
                if not chain or not chain[-1].is_open:
                    raise StorageFailure(f"table {self.name}: close event without an open version for {key}")
                last = chain[-1]
                chain[-1] = VersionedRow(key, last.payload, last.valid_from, ts)
            else:
                raise StorageFailure(f"table {self.name}: unknown event {event['event']!r}")
        return chains

    def rows(self) -> list[VersionedRow]:
        """Every stored version, ordered by key then valid_from."""
        chains = self._chains()
        return [row for key in sorted(chains, key=_key_order) for row in chains[key]]

    def query_asof(self, t: Any) -> list[tuple[dict[str, Any], dict[str, Any]]]:
        """Rows visible at ``t``: valid_from <= t and (valid_to absent or valid_to > t).

        Returns at most one (key, payload) pair per key, ordered by key.
        """
        ts = parse_timestamp(t)
        chains = self._chains()
        result = []
        for key in sorted(chains, key=_key_order):
            for row in chains[key]:
                if row.visible_at(ts):
                    result.append((self._key_dict(key), dict(row.payload)))
                    break
        return result

    def current(self) -> list[tuple[dict[str, Any], dict[str, Any]]]:
        """Every open version, ordered by key."""
        chains = self._chains()
        result = []
        for key in sorted(chains, key=_key_order):
            if chains[key] and chains[key][-1].is_open:
                result.append((self._key_dict(key), dict(chains[key][-1].payload)))
        return result

    def history(self, key: Any) -> list[VersionedRow]:
        """The version chain of one business key, ordered by valid_from (empty if unknown)."""
        return list(self._chains().get(self._normalize_key(key), []))

    def _key_dict(self, key: Key) -> dict[str, Any]:
        return dict(zip(self.key_fields, key))

    def _normalize_key(self, key: Any) -> Key:
        if isinstance(key, Mapping):
            return tuple(to_plain(key.get(name)) for name in self.key_fields)
        if isinstance(key, (tuple, list)):
            return tuple(to_plain(v) for v in key)
        return (to_plain(key),)

    # ------------------------------------------------------------------ #
    # Writing
    # ------------------------------------------------------------------ #
    def apply_batch(self, records: Sequence[Mapping[str, Any]], load_ts: Any) -> VersioningReport:
        """Apply one batch of keyed payloads at ``load_ts``.

        For each record: an identical payload to the key's open version is unchanged;
        a new key opens a version at load_ts; a different payload closes the open
        version at load_ts and opens a new one. Existing closed rows are never touched.

        Raises
        ------
        MissingKeyField
            If a record lacks a value for a key field.
        NonMonotonicLoadTimestamp
            If load_ts does not exceed every existing valid_from of an affected key,
            or a key appears twice in the batch.
        InvalidArgument
            If a payload carries valid_from/valid_to.
        StorageFailure
            If the segment or manifest cannot be written.
        """
        ts = parse_timestamp(load_ts)
        stamp = format_timestamp(ts)
        with self.workspace.lock(f"table-{self.name}"):
            self._reload()
            chains = self._chains()
            tracked = self.policy.tracked_fields if self.policy else None

            seen: set[Key] = set()
            events: list[dict[str, Any]] = []
            inserted = closed = unchanged = 0
            for record in records:
                payload = self._payload(record)
                key = tuple(payload[name] for name in self.key_fields)
                if key in seen:
                    raise NonMonotonicLoadTimestamp(f"key {key} appears twice at load_ts {stamp}")
                seen.add(key)
                chain = chains.get(key, [])
                if chain and chain[-1].valid_from >= ts:
                    raise NonMonotonicLoadTimestamp(
                        f"load_ts {stamp} does not advance past {format_timestamp(chain[-1].valid_from)} for key {key}"
                    )
                open_row = chain[-1] if chain and chain[-1].is_open else None
                key_doc = self._key_dict(key)
                if open_row is not None and _same(open_row.payload, payload, tracked):
                    unchanged += 1
                    continue
                if open_row is not None:
                    events.append({"event": "close", "key": key_doc, "payload": {}, "ts": stamp})
                    closed += 1
                events.append({"event": "insert", "key": key_doc, "payload": payload, "ts": stamp})
                inserted += 1

            if events:
                self._commit_segment(events, stamp)
        report = VersioningReport(inserted, closed, unchanged, ts)
        _logger.info(
            f"Table {self.name} @ {stamp}: inserted={inserted} closed={closed} unchanged={unchanged}"
        )
        return report

    def _payload(self, record: Mapping[str, Any]) -> dict[str, Any]:
        if any(name in record for name in METADATA_FIELDS):
            raise InvalidArgument("payload cannot carry valid_from/valid_to")
        for name in self.key_fields:
            if is_missing(record.get(name)):
                raise MissingKeyField(f"record lacks key field {name!r}")
        return {str(k): to_plain(v) for k, v in record.items()}

    def _commit_segment(self, events: list[dict[str, Any]], stamp: str) -> None:
        directory = self.directory(self.workspace, self.name)
        number = int(self._manifest["next_segment"])
        file_name = f"segment-{number}.ndjson"
        data = "".join(canonical_json(event) + "\n" for event in events).encode("utf-8")
        write_new_bytes(directory / file_name, data)
        manifest = dict(self._manifest)
        manifest["segments"] = [
            *self._manifest["segments"],
            {"file": file_name, "digest": sha256_hex(data), "events": len(events), "load_ts": stamp},
        ]
        manifest["next_segment"] = number + 1
        write_json(directory / self.MANIFEST, manifest)
        self._manifest = manifest

    def configure_partial_versioning(self, policy: PartialVersioningPolicy) -> PartialVersioningPolicy:
        """Install a partial versioning policy for subsequent batches and compactions.

        Raises
        ------
        UnknownField
            If a tracked field does not exist in the table.
        """
        with self.workspace.lock(f"table-{self.name}"):
            self._reload()
            if policy.tracked_fields is not None:
                known = self.known_fields()
                unknown = [name for name in policy.tracked_fields if name not in known]
                if unknown:
                    raise UnknownField(f"table {self.name} has no field(s) {', '.join(unknown)}")
            manifest = dict(self._manifest)
            manifest["policy"] = policy.to_dict()
            write_json(self.directory(self.workspace, self.name) / self.MANIFEST, manifest)
            self._manifest = manifest
        _logger.info(f"Table {self.name}: partial versioning {policy.to_dict()}")
        return policy

    def compact(self, now: Any) -> CompactionReport:
        """Drop closed versions whose valid_to is at or before ``now - retention_days``.

        As-of answers for any t at or after the cutoff are unchanged. The retained
        versions are rewritten into one consolidated segment.
        """
        at = parse_timestamp(now)
        with self.workspace.lock(f"table-{self.name}"):
            self._reload()
            policy = self.policy
            if policy is None or policy.retention_days is None:
                return CompactionReport(0, None)
            cutoff = at - timedelta(days=policy.retention_days)
            chains = self._chains()
            kept: list[VersionedRow] = []
            dropped = 0
            for key in sorted(chains, key=_key_order):
                for row in chains[key]:
                    if row.valid_to is not None and row.valid_to <= cutoff:
                        dropped += 1
                    else:
                        kept.append(row)
            if dropped == 0:
                return CompactionReport(0, cutoff)

            events = []
            for row in kept:
                key_doc = self._key_dict(row.key)
                events.append(
                    {"event": "insert", "key": key_doc, "payload": dict(row.payload), "ts": format_timestamp(row.valid_from)}
                )
                if row.valid_to is not None:
                    events.append({"event": "close", "key": key_doc, "payload": {}, "ts": format_timestamp(row.valid_to)})

            directory = self.directory(self.workspace, self.name)
            old_files = self.segment_files()
            number = int(self._manifest["next_segment"])
            file_name = f"segment-{number}.ndjson"
            data = "".join(canonical_json(event) + "\n" for event in events).encode("utf-8")
            write_new_bytes(directory / file_name, data)
            manifest = dict(self._manifest)
            manifest["segments"] = [
                {"file": file_name, "digest": sha256_hex(data), "events": len(events), "load_ts": None}
            ]
            manifest["next_segment"] = number + 1
            manifest["compactions"] = [
                *self._manifest.get("compactions", []),
                {"at": format_timestamp(at), "cutoff": format_timestamp(cutoff), "dropped": dropped},
            ]
            write_json(directory / self.MANIFEST, manifest)
            self._manifest = manifest
            for path in old_files:
                path.unlink(missing_ok=True)
        _logger.info(f"Table {self.name}: compaction dropped {dropped} version(s) closed before {format_timestamp(cutoff)}")
        return CompactionReport(dropped, cutoff)


def _same(old: Mapping[str, Any], new: Mapping[str, Any], tracked: Optional[Sequence[str]]) -> bool:
    if tracked is None:
        tracked = sorted(set(old) | set(new))
    return all(to_plain(old.get(name)) == to_plain(new.get(name)) for name in tracked)


def _key_order(key: Key) -> tuple:
    return tuple(sort_key(v) for v in key)


# --------------------------------------------------------------------------- #
# Module-level operations
# --------------------------------------------------------------------------- #
def apply_batch(table: VersionedTable, records: Sequence[Mapping[str, Any]], load_ts: Any) -> VersioningReport:
    return table.apply_batch(records, load_ts)


def query_asof(table: VersionedTable, t: Any) -> list[tuple[dict[str, Any], dict[str, Any]]]:
    return table.query_asof(t)


def current(table: VersionedTable) -> list[tuple[dict[str, Any], dict[str, Any]]]:
    return table.current()


def history(table: VersionedTable, key: Any) -> list[VersionedRow]:
    return table.history(key)


def configure_partial_versioning(table: VersionedTable, policy: PartialVersioningPolicy) -> PartialVersioningPolicy:
    return table.configure_partial_versioning(policy)


# --------------------------------------------------------------------------- #
# Baseline table
# --------------------------------------------------------------------------- #
class LastWriteWinsTable:
    """Unversioned overwrite table (``lww/<name>.json``) used by the ELT baseline.

    Upserts replace the stored payload for a key; no history is kept and nothing is
    validated. Records without a key value share the missing key.
    """

    def __init__(self, workspace: Workspace, name: str, key_fields: Sequence[str]) -> None:
        if not is_identifier(name):
            raise InvalidArgument(f"invalid table name {name!r}")
        if not key_fields:
            raise InvalidArgument("key_fields cannot be empty")
        self.workspace = workspace
        self.name = name
        self.key_fields = list(key_fields)
        self.path = workspace.path("lww", f"{name}.json")

    def _load(self) -> dict[str, dict[str, Any]]:
        if not self.path.exists():
            return {}
        return dict(read_json(self.path)["rows"])

    def upsert(self, records: Iterable[Mapping[str, Any]]) -> int:
        """Overwrite rows by key; returns the number of records written."""
        count = 0
        with self.workspace.lock(f"lww-{self.name}"):
            rows = self._load()
            for record in records:
                payload = {str(k): to_plain(v) for k, v in record.items()}
                rows[canonical_json([payload.get(k) for k in self.key_fields])] = payload
                count += 1
            write_json(self.path, {"key_fields": self.key_fields, "rows": rows})
        _logger.debug(f"LWW table {self.name}: upserted {count} record(s)")
        return count

    def rows(self) -> list[dict[str, Any]]:
        return sorted(self._load().values(), key=lambda row: row_sort_key(row, self.key_fields))

    def size_bytes(self) -> int:
        return self.path.stat().st_size if self.path.exists() else 0
