"""Raw zone: metadata-driven ingestion into immutable, load-date partitioned segments.

Also hosts hot/cool tiering, the storage cost model and tag-based masking of reads.

Layout::

    raw/<source_id>/_source.json                  registration
    raw/<source_id>/_meta.ndjson                  one line per segment, plus tier-change lines
    raw/<source_id>/<YYYY-MM-DD>/segment-<n>.<ext>
"""

from __future__ import annotations

import builtins
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union

from jsonschema import Draft202012Validator

from .errors import (
    DuplicateSource,
    IntegrityError,
    InvalidArgument,
    SchemaViolation,
    UnknownSegment,
    UnknownSource,
)
from .logging import get_logger
from .utils import (
    append_ndjson,
    check_schema,
    is_identifier,
    iter_ndjson,
    loads,
    read_bytes,
    read_json,
    sha256_hex,
    write_json,
    write_new_bytes,
)
from .validation import INPUT_FORMATS, read_records
from .values import parse_date, to_decimal
from .workspace import Workspace

_logger = get_logger()

DATE_PLACEHOLDER = "{date}"
TIERS = ("hot", "cool")
DEFAULT_BYTES_PER_GB = 10**9
DEFAULT_REDACTION_TOKEN = "«redacted»"
_CENT = Decimal("0.01")

SOURCE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["source_id", "format", "path_pattern"],
    "additionalProperties": False,
    "properties": {
        "source_id": {"type": "string", "minLength": 1},
        "format": {"enum": list(INPUT_FORMATS)},
        "path_pattern": {"type": "string"},
        "contract_name": {"type": ["string", "null"]},
        "schedule_hint": {"type": "string"},
        "access_tags": {"type": "array", "items": {"type": "string", "minLength": 1}},
    },
}
_SOURCE_VALIDATOR = Draft202012Validator(SOURCE_SCHEMA)

TIERING_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "hot_window_days": {"type": "integer", "minimum": 1},
        "hot_fraction": {"type": ["number", "string"]},
        "applies_to": {"type": "string", "minLength": 1},
    },
}
_TIERING_VALIDATOR = Draft202012Validator(TIERING_SCHEMA)


@dataclass(frozen=True)
class SourceRegistration:
    """One row of the ingestion metadata table.

    Raises
    ------
    InvalidArgument
        If the id is invalid, the format is unsupported, or the path pattern does not
        contain exactly one ``{date}`` placeholder.
    """

    source_id: str
    format: str
    path_pattern: str
    contract_name: Optional[str] = None
    schedule_hint: str = ""
    access_tags: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not is_identifier(self.source_id):
            raise InvalidArgument(f"invalid source id {self.source_id!r}")
        if self.format not in INPUT_FORMATS:
            raise InvalidArgument(f"source {self.source_id}: unsupported format {self.format!r}")
        if self.path_pattern.count(DATE_PLACEHOLDER) != 1:
            raise InvalidArgument(f"source {self.source_id}: path_pattern needs exactly one {DATE_PLACEHOLDER}")
        if self.contract_name is not None and not is_identifier(self.contract_name):
            raise InvalidArgument(f"source {self.source_id}: invalid contract name {self.contract_name!r}")
        object.__setattr__(self, "access_tags", frozenset(self.access_tags))

    @property
    def extension(self) -> str:
        return self.format

    def resolve_path(self, load_date: Any, base: Optional[Path] = None) -> Path:
        """Render the path pattern for ``load_date`` (relative to ``base`` when given)."""
        rendered = Path(self.path_pattern.replace(DATE_PLACEHOLDER, parse_date(load_date).isoformat()))
        return base / rendered if base is not None else rendered

    def to_dict(self) -> dict[str, Any]:
        return {
            "source_id": self.source_id,
            "format": self.format,
            "path_pattern": self.path_pattern,
            "contract_name": self.contract_name,
            "schedule_hint": self.schedule_hint,
            "access_tags": sorted(self.access_tags),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SourceRegistration:
        check_schema(data, _SOURCE_VALIDATOR, "source registration")
        return cls(
            source_id=data["source_id"],
            format=data["format"],
            path_pattern=data["path_pattern"],
            contract_name=data.get("contract_name"),
            schedule_hint=data.get("schedule_hint", ""),
            access_tags=frozenset(data.get("access_tags", ())),
        )


def parse_source_registration(document: Union[str, bytes]) -> SourceRegistration:
    data = loads(document)
    if not isinstance(data, Mapping):
        raise SchemaViolation("source registration: <root>: must be a JSON object")
    return SourceRegistration.from_dict(data)


@dataclass(frozen=True)
class RawSegment:
    """An immutable raw partition; only its tier may change, and only hot to cool."""

    segment_id: str
    source_id: str
    load_date: date
    size_bytes: int
    tier: str = "hot"
    access_tags: frozenset[str] = frozenset()
    content_digest: str = ""
    file: str = ""

    def __post_init__(self) -> None:
        if self.tier not in TIERS:
            raise InvalidArgument(f"segment {self.segment_id}: unknown tier {self.tier!r}")
        if self.size_bytes < 0:
            raise InvalidArgument(f"segment {self.segment_id}: negative size")
        object.__setattr__(self, "load_date", parse_date(self.load_date))
        object.__setattr__(self, "access_tags", frozenset(self.access_tags))

    def to_dict(self) -> dict[str, Any]:
        return {
            "segment_id": self.segment_id,
            "source_id": self.source_id,
            "load_date": self.load_date.isoformat(),
            "size_bytes": self.size_bytes,
            "tier": self.tier,
            "access_tags": sorted(self.access_tags),
            "content_digest": self.content_digest,
            "file": self.file,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RawSegment:
        return cls(
            segment_id=data["segment_id"],
            source_id=data["source_id"],
            load_date=parse_date(data["load_date"]),
            size_bytes=int(data["size_bytes"]),
            tier=data.get("tier", "hot"),
            access_tags=frozenset(data.get("access_tags", ())),
            content_digest=data.get("content_digest", ""),
            file=data.get("file", ""),
        )


@dataclass(frozen=True)
class TieringPolicy:
    """Keep segments hot by age (``hot_window_days``) or by newest byte share (``hot_fraction``).

    Exactly one of the two must be set. ``applies_to`` is a source id or ``"all"``.
    """

    hot_window_days: Optional[int] = None
    hot_fraction: Optional[Fraction] = None
    applies_to: str = "all"

    def __post_init__(self) -> None:
        if (self.hot_window_days is None) == (self.hot_fraction is None):
            raise InvalidArgument("tiering policy needs exactly one of hot_window_days or hot_fraction")
        if self.hot_window_days is not None and (
            isinstance(self.hot_window_days, bool) or not isinstance(self.hot_window_days, int) or self.hot_window_days < 1
        ):
            raise InvalidArgument("hot_window_days must be a positive integer")
        if self.hot_fraction is not None:
            fraction = Fraction(str(self.hot_fraction))
            if not 0 < fraction <= 1:
                raise InvalidArgument("hot_fraction must be in (0, 1]")
            object.__setattr__(self, "hot_fraction", fraction)

    def applies(self, segment: RawSegment) -> bool:
        return self.applies_to == "all" or self.applies_to == segment.source_id

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"applies_to": self.applies_to}
        if self.hot_window_days is not None:
            data["hot_window_days"] = self.hot_window_days
        if self.hot_fraction is not None:
            data["hot_fraction"] = str(self.hot_fraction)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TieringPolicy:
        check_schema(data, _TIERING_VALIDATOR, "tiering policy", error=InvalidArgument)
        fraction = data.get("hot_fraction")
        return cls(
            hot_window_days=data.get("hot_window_days"),
            hot_fraction=Fraction(str(fraction)) if fraction is not None else None,
            applies_to=data.get("applies_to", "all"),
        )


@dataclass(frozen=True)
class TieringReport:
    """Segments moved to cool and per-tier byte totals after the pass."""

    moved: tuple[str, ...]
    hot_bytes: int
    cool_bytes: int
    segments: tuple[RawSegment, ...] = field(default=(), repr=False)

    @property
    def total_bytes(self) -> int:
        return self.hot_bytes + self.cool_bytes

    def to_dict(self) -> dict[str, Any]:
        return {"moved": list(self.moved), "hot_bytes": self.hot_bytes, "cool_bytes": self.cool_bytes}


@dataclass(frozen=True)
class CostRates:
    """Storage and compute prices (currency per GB-month and per day).

    Defaults are the Azure Blob pay-as-you-go figures.
    """

    hot_per_gb_month: Decimal = Decimal("0.021")
    cool_per_gb_month: Decimal = Decimal("0.00099")
    compute_per_day: Decimal = Decimal("0")
    days_per_month: int = 30

    def __post_init__(self) -> None:
        for name in ("hot_per_gb_month", "cool_per_gb_month", "compute_per_day"):
            value = Decimal(str(getattr(self, name)))
            if value < 0:
                raise InvalidArgument(f"{name} must be >= 0")
            object.__setattr__(self, name, value)
        if isinstance(self.days_per_month, bool) or not isinstance(self.days_per_month, int) or self.days_per_month < 1:
            raise InvalidArgument("days_per_month must be a positive integer")
        if self.hot_per_gb_month < self.cool_per_gb_month:
            raise InvalidArgument("hot rate must be >= cool rate")

    def with_compute(self, compute_per_day: Any) -> CostRates:
        return CostRates(self.hot_per_gb_month, self.cool_per_gb_month, Decimal(str(compute_per_day)), self.days_per_month)

    def to_dict(self) -> dict[str, Any]:
        return {
            "hot_per_gb_month": str(self.hot_per_gb_month),
            "cool_per_gb_month": str(self.cool_per_gb_month),
            "compute_per_day": str(self.compute_per_day),
            "days_per_month": self.days_per_month,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CostRates:
        unknown = set(data) - {"hot_per_gb_month", "cool_per_gb_month", "compute_per_day", "days_per_month"}
        if unknown:
            raise SchemaViolation(f"unknown cost rate keys: {', '.join(sorted(unknown))}")
        defaults = cls()
        return cls(
            hot_per_gb_month=Decimal(str(data.get("hot_per_gb_month", defaults.hot_per_gb_month))),
            cool_per_gb_month=Decimal(str(data.get("cool_per_gb_month", defaults.cool_per_gb_month))),
            compute_per_day=Decimal(str(data.get("compute_per_day", defaults.compute_per_day))),
            days_per_month=int(data.get("days_per_month", defaults.days_per_month)),
        )


def load_cost_rates(workspace: Workspace) -> CostRates:
    """Rates from ``config/cost_rates.json``, or the defaults when absent."""
    if workspace.cost_rates_path.exists():
        return CostRates.from_dict(read_json(workspace.cost_rates_path))
    return CostRates()


@dataclass(frozen=True)
class CostReport:
    """Exact per-day costs; round only for presentation via ``rounded``."""

    hot_per_day: Decimal
    cool_per_day: Decimal
    compute_per_day: Decimal
    total_per_day: Decimal

    def rounded(self) -> dict[str, Decimal]:
        """Every amount rounded half-up to cents."""
        return {
            "hot_per_day": self.hot_per_day.quantize(_CENT, rounding=ROUND_HALF_UP),
            "cool_per_day": self.cool_per_day.quantize(_CENT, rounding=ROUND_HALF_UP),
            "compute_per_day": self.compute_per_day.quantize(_CENT, rounding=ROUND_HALF_UP),
            "total_per_day": self.total_per_day.quantize(_CENT, rounding=ROUND_HALF_UP),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "exact": {
                "hot_per_day": str(self.hot_per_day),
                "cool_per_day": str(self.cool_per_day),
                "compute_per_day": str(self.compute_per_day),
                "total_per_day": str(self.total_per_day),
            },
            "rounded": {name: f"{value:.2f}" for name, value in self.rounded().items()},
        }


def estimate_cost(
    bytes_hot: Union[int, Decimal],
    bytes_cool: Union[int, Decimal],
    rates: CostRates,
    bytes_per_gb: int = DEFAULT_BYTES_PER_GB,
) -> CostReport:
    """Daily storage and compute cost of an inventory.

    hot/day = GB_hot x hot_rate / days_per_month, cool/day likewise, and
    total = hot + cool + compute_per_day.

    Raises
    ------
    InvalidArgument
        If a byte count is negative.
    """
    hot = to_decimal(bytes_hot) if not isinstance(bytes_hot, Decimal) else bytes_hot
    cool = to_decimal(bytes_cool) if not isinstance(bytes_cool, Decimal) else bytes_cool
    if hot < 0 or cool < 0:
        raise InvalidArgument("byte counts must be non-negative")
    gb = Decimal(bytes_per_gb)
    hot_per_day = hot / gb * rates.hot_per_gb_month / rates.days_per_month
    cool_per_day = cool / gb * rates.cool_per_gb_month / rates.days_per_month
    total = hot_per_day + cool_per_day + rates.compute_per_day
    return CostReport(hot_per_day, cool_per_day, rates.compute_per_day, total)


def estimate_cost_gb(gb_hot: Any, gb_cool: Any, rates: CostRates) -> CostReport:
    """``estimate_cost`` with sizes already in GB."""
    return estimate_cost(Decimal(str(gb_hot)), Decimal(str(gb_cool)), rates, bytes_per_gb=1)


def apply_tiering(inventory: Sequence[RawSegment], policy: TieringPolicy, now: Any) -> TieringReport:
    """Compute which segments go cool under ``policy`` (pure; nothing is persisted).

    ``hot_window_days``: segments with load_date < now - window move to cool.
    ``hot_fraction``: segments are taken newest first (ties by segment_id) while the
    running total fits in fraction x applicable bytes; the rest move to cool.
    Cool segments never come back to hot. Bytes and segment count are conserved.
    """
    today = parse_date(now)
    cool_ids: set[str] = set()
    applicable = [s for s in inventory if policy.applies(s)]
    if policy.hot_window_days is not None:
        horizon = today - timedelta(days=policy.hot_window_days)
        cool_ids = {s.segment_id for s in applicable if s.load_date < horizon}
    else:
        assert policy.hot_fraction is not None
        budget = policy.hot_fraction * sum(s.size_bytes for s in applicable)
        ordered = sorted(applicable, key=lambda s: (-s.load_date.toordinal(), s.segment_id))
        used = 0
        filling = True
        for segment in ordered:
            if segment.tier == "cool":
                continue
            if filling and used + segment.size_bytes <= budget:
                used += segment.size_bytes
            else:
                filling = False
                cool_ids.add(segment.segment_id)

    moved = []
    after = []
    for segment in inventory:
        if segment.tier == "hot" and segment.segment_id in cool_ids:
            moved.append(segment.segment_id)
            segment = replace(segment, tier="cool")
        after.append(segment)
    hot = sum(s.size_bytes for s in after if s.tier == "hot")
    cool = sum(s.size_bytes for s in after if s.tier == "cool")
    return TieringReport(tuple(sorted(moved)), hot, cool, tuple(after))


class MaskedReader:
    """Read handle that replaces masked field values with the redaction token."""

    def __init__(self, zone: RawZone, segment: RawSegment, masked_fields: frozenset[str], token: str) -> None:
        self._zone = zone
        self.segment = segment
        self.masked_fields = masked_fields
        self.token = token

    def records(self) -> list[dict[str, Any]]:
        rows = self._zone.read_records(self.segment.segment_id)
        return [{k: (self.token if k in self.masked_fields else v) for k, v in row.items()} for row in rows]


class RawZone:
    """The raw landing zone of a workspace."""

    def __init__(self, workspace: Workspace) -> None:
        self.workspace = workspace
        self.root = workspace.path("raw")

    def _source_dir(self, source_id: str) -> Path:
        return self.root / source_id

    def _meta_path(self, source_id: str) -> Path:
        return self._source_dir(source_id) / "_meta.ndjson"

    # Sources ----------------------------------------------------------- #
    def register_source(self, reg: SourceRegistration) -> SourceRegistration:
        """Persist a source registration.

        Raises
        ------
        DuplicateSource
            If the source id is already registered.
        """
        path = self._source_dir(reg.source_id) / "_source.json"
        with self.workspace.lock(f"raw-{reg.source_id}"):
            if path.exists():
                raise DuplicateSource(f"source {reg.source_id} is already registered")
            write_json(path, reg.to_dict())
        _logger.info(f"Registered raw source {reg.source_id} ({reg.format}, {reg.path_pattern})")
        return reg

    def get_source(self, source_id: str) -> SourceRegistration:
        path = self._source_dir(source_id) / "_source.json"
        if not is_identifier(source_id) or not path.exists():
            raise UnknownSource(f"no raw source named {source_id!r}")
        return SourceRegistration.from_dict(read_json(path))

    def has_source(self, source_id: str) -> bool:
        return is_identifier(source_id) and (self._source_dir(source_id) / "_source.json").exists()

    def sources(self) -> list[SourceRegistration]:
        if not self.root.is_dir():
            return []
        return [self.get_source(p.name) for p in sorted(self.root.iterdir()) if (p / "_source.json").exists()]

    # Ingest ------------------------------------------------------------ #
    def ingest_raw(self, source_id: str, payload: bytes, load_date: Any) -> RawSegment:
        """Land ``payload`` as a new hot segment under ``raw/<source>/<load_date>/``.

        Only a structural parse is done; no contract validation.

        Raises
        ------
        UnknownSource
            If the source is not registered.
        UnparseablePayload
            If the payload does not parse under the registered format.
        StorageFailure
            If the segment cannot be written.
        """
        reg = self.get_source(source_id)
        day = parse_date(load_date)
        read_records(payload, reg.format, source=source_id)
        digest = sha256_hex(payload)
        with self.workspace.lock(f"raw-{source_id}"):
            partition = self._source_dir(source_id) / day.isoformat()
            existing = sorted(partition.glob("segment-*")) if partition.is_dir() else []
            number = len(existing) + 1
            name = f"segment-{number:04d}"
            file_path = partition / f"{name}.{reg.extension}"
            write_new_bytes(file_path, payload)
            segment = RawSegment(
                segment_id=f"{source_id}/{day.isoformat()}/{name}",
                source_id=source_id,
                load_date=day,
                size_bytes=len(payload),
                tier="hot",
                access_tags=reg.access_tags,
                content_digest=digest,
                file=str(file_path.relative_to(self.root)),
            )
            append_ndjson(self._meta_path(source_id), [{"kind": "segment", **segment.to_dict()}])
        _logger.info(f"Ingested {segment.segment_id} ({segment.size_bytes} bytes)")
        return segment

    # Inventory --------------------------------------------------------- #
    def _source_segments(self, source_id: str) -> builtins.list[RawSegment]:
        segments: dict[str, RawSegment] = {}
        for line in iter_ndjson(self._meta_path(source_id)):
            if line.get("kind") == "segment":
                segments[line["segment_id"]] = RawSegment.from_dict(line)
            elif line.get("kind") == "tier" and line["segment_id"] in segments:
                current = segments[line["segment_id"]]
                segments[line["segment_id"]] = replace(current, tier=line["tier"])
        return sorted(segments.values(), key=lambda s: s.segment_id)

    def segments(self, source_id: Optional[str] = None) -> builtins.list[RawSegment]:
        """Current segment inventory, ordered by segment id."""
        if source_id is not None:
            self.get_source(source_id)
            return self._source_segments(source_id)
        result = []
        for reg in self.sources():
            result.extend(self._source_segments(reg.source_id))
        return result

    def get_segment(self, segment_id: str) -> RawSegment:
        source_id = segment_id.split("/", 1)[0]
        if self.has_source(source_id):
            for segment in self._source_segments(source_id):
                if segment.segment_id == segment_id:
                    return segment
        raise UnknownSegment(f"no raw segment {segment_id!r}")

    def segments_asof(self, source_id: str, as_of: Any) -> builtins.list[RawSegment]:
        """Segments of ``source_id`` loaded on or before the date of ``as_of``."""
        day = parse_date(as_of)
        return [s for s in self.segments(source_id) if s.load_date <= day]

    # Reads ------------------------------------------------------------- #
    def read_segment(self, segment_id: str) -> bytes:
        """Unmasked segment bytes, verified against the digest recorded at ingest.

        Raises
        ------
        UnknownSegment
            If the segment does not exist.
        IntegrityError
            If the stored bytes no longer match the recorded digest.
        """
        segment = self.get_segment(segment_id)
        data = read_bytes(self.root / segment.file)
        if sha256_hex(data) != segment.content_digest:
            raise IntegrityError(f"segment {segment_id} does not match its recorded digest")
        return data

    def read_records(self, segment_id: str) -> builtins.list[dict[str, Any]]:
        """Privileged unmasked read of a segment's records."""
        segment = self.get_segment(segment_id)
        reg = self.get_source(segment.source_id)
        return [record.values for record in read_records(self.read_segment(segment_id), reg.format, segment_id)]

    def apply_access_policy(
        self,
        segment: Union[RawSegment, str],
        tags: Iterable[str],
        masking: Mapping[str, Iterable[str]],
    ) -> MaskedReader:
        """Masked reader for a segment.

        Fields named by ``masking[tag]`` for any tag in ``tags`` or in the segment's
        own access tags are replaced by the redaction token.

        Raises
        ------
        UnknownSegment
            If the segment does not exist.
        """
        segment_id = segment.segment_id if isinstance(segment, RawSegment) else segment
        stored = self.get_segment(segment_id)
        active = set(tags) | set(stored.access_tags)
        masked = frozenset(name for tag in sorted(active) for name in masking.get(tag, ()))
        return MaskedReader(self, stored, masked, self.workspace.settings.redaction_token)

    # Tiering ----------------------------------------------------------- #
    def apply_tiering(self, policy: TieringPolicy, now: Any) -> TieringReport:
        """Run a tiering pass over the whole inventory and persist tier changes."""
        with self.workspace.lock("raw-tiering"):
            inventory = self.segments()
            report = apply_tiering(inventory, policy, now)
            stamp = parse_date(now).isoformat()
            by_source: dict[str, builtins.list[dict[str, Any]]] = {}
            for segment_id in report.moved:
                source_id = segment_id.split("/", 1)[0]
                by_source.setdefault(source_id, []).append(
                    {"kind": "tier", "segment_id": segment_id, "tier": "cool", "at": stamp}
                )
            for source_id, lines in by_source.items():
                with self.workspace.lock(f"raw-{source_id}"):
                    append_ndjson(self._meta_path(source_id), lines)
        _logger.info(
            f"Tiering pass moved {len(report.moved)} segment(s); hot={report.hot_bytes} cool={report.cool_bytes} bytes"
        )
        return report

    def tier_totals(self) -> tuple[int, int]:
        inventory = self.segments()
        hot = sum(s.size_bytes for s in inventory if s.tier == "hot")
        return hot, sum(s.size_bytes for s in inventory) - hot


def apply_access_policy(
    zone: RawZone, segment: Union[RawSegment, str], tags: Iterable[str], masking: Mapping[str, Iterable[str]]
) -> MaskedReader:
    return zone.apply_access_policy(segment, tags, masking)
