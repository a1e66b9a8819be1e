"""Data quality SLIs, SLO evaluation, alerts and the append-only SLI history.

Ratios are exact ``Fraction`` values and freshness is exact ``Decimal`` seconds, so
threshold comparisons never depend on float rounding.
"""

from __future__ import annotations

import builtins
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Optional, Union

from jsonschema import Draft202012Validator

from .errors import ClockSkew, InvalidArgument, NotFound, SchemaViolation
from .logging import get_logger
from .utils import append_ndjson, check_schema, is_identifier, iter_ndjson, loads, read_json, write_json
from .validation import BatchSummary, BatchVerdict
from .values import format_timestamp, parse_timestamp, to_plain, utc_now
from .workspace import Workspace

_logger = get_logger()

SLI_NAMES = ("freshness", "completeness", "accuracy", "adherence")
ONE = Fraction(1)


# --------------------------------------------------------------------------- #
# SLI computations
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class SliResult:
    """A ratio SLI; ``vacuous`` marks an empty denominator reported as 1."""

    value: Fraction
    vacuous: bool = False
    note: str = ""

    def __float__(self) -> float:
        return float(self.value)


def _fraction(value: Any, what: str) -> Fraction:
    try:
        result = Fraction(str(value)) if not isinstance(value, Fraction) else value
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidArgument(f"{what}: not a number: {value!r}") from exc
    return result


def _count(value: Any, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise InvalidArgument(f"{what} must be a non-negative integer")
    return value


def compute_freshness(latest_batch_ts: Any, now: Any) -> Decimal:
    """Seconds between the latest batch and ``now``.

    Examples
    --------
    >>> compute_freshness("2025-08-25T12:00:00Z", "2025-08-28T12:00:00Z")
    Decimal('259200')

    Raises
    ------
    ClockSkew
        If ``now`` is earlier than the latest batch.
    """
    latest = parse_timestamp(latest_batch_ts)
    current = parse_timestamp(now)
    if current < latest:
        raise ClockSkew(f"now {format_timestamp(current)} precedes latest batch {format_timestamp(latest)}")
    delta = current - latest
    return Decimal(delta.days * 86400 + delta.seconds) + Decimal(delta.microseconds) / Decimal(10**6)


def compute_completeness(received: int, expected: int) -> SliResult:
    """received / expected; 0 of 0 is vacuously complete and surplus clamps to 1."""
    received = _count(received, "received")
    expected = _count(expected, "expected")
    if expected == 0:
        if received == 0:
            return SliResult(ONE, vacuous=True, note="no records expected")
        return SliResult(ONE, note=f"surplus: {received} received, none expected")
    if received > expected:
        return SliResult(ONE, note=f"surplus: {received} received, {expected} expected")
    return SliResult(Fraction(received, expected))


def compute_accuracy(violations: int, total: int) -> SliResult:
    """1 - violations / total, with violations counted per record.

    Raises
    ------
    InvalidArgument
        If violations exceed total.
    """
    violations = _count(violations, "violations")
    total = _count(total, "total")
    if violations > total:
        raise InvalidArgument(f"{violations} violating records out of {total}")
    if total == 0:
        return SliResult(ONE, vacuous=True, note="no records")
    return SliResult(1 - Fraction(violations, total))


def accuracy_from_verdict(verdict: BatchVerdict, counts_soft: bool = False) -> SliResult:
    """Accuracy of one batch: records with a hard violation (or any warning when
    ``counts_soft``) count once, however many rules they break."""
    violating = sum(
        1 for v in verdict.record_verdicts if v.hard_violations or (counts_soft and v.soft_warnings)
    )
    return compute_accuracy(violating, len(verdict.record_verdicts))


def compute_adherence(batch_log: Iterable[Union[BatchVerdict, BatchSummary]]) -> SliResult:
    """Share of batches with V = 0; soft-only batches are compliant."""
    batches = list(batch_log)
    if not batches:
        return SliResult(ONE, vacuous=True, note="no batches")
    compliant = sum(1 for b in batches if b.total_hard_violations == 0)
    return SliResult(Fraction(compliant, len(batches)))


@dataclass(frozen=True)
class ExpectationSpec:
    """What a complete delivery looks like: a fixed record count, or one record per
    expected value of a reference dimension (e.g. every store)."""

    count: Optional[int] = None
    dimension: Optional[str] = None
    expected_values: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "expected_values", tuple(self.expected_values))
        if (self.count is None) == (self.dimension is None):
            raise InvalidArgument("expectation needs exactly one of count or dimension")
        if self.count is not None:
            _count(self.count, "expected count")
        if self.dimension is not None and not is_identifier(self.dimension):
            raise InvalidArgument(f"invalid expectation dimension {self.dimension!r}")

    def to_dict(self) -> dict[str, Any]:
        if self.count is not None:
            return {"count": self.count}
        return {"dimension": self.dimension, "expected_values": to_plain(list(self.expected_values))}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ExpectationSpec:
        unknown = set(data) - {"count", "dimension", "expected_values"}
        if unknown:
            raise InvalidArgument(f"unknown expectation keys: {', '.join(sorted(unknown))}")
        return cls(
            count=data.get("count"),
            dimension=data.get("dimension"),
            expected_values=tuple(data.get("expected_values", ())),
        )


def measure_completeness(records: Sequence[Mapping[str, Any]], expectation: ExpectationSpec) -> SliResult:
    """Completeness of ``records`` against an expectation spec."""
    if expectation.count is not None:
        return compute_completeness(len(records), expectation.count)
    expected = {str(to_plain(v)) for v in expectation.expected_values}
    seen = {str(to_plain(r.get(expectation.dimension))) for r in records if r.get(expectation.dimension) is not None}
    result = compute_completeness(len(expected & seen), len(expected))
    missing = sorted(expected - seen)
    if missing:
        return replace(result, note=f"missing {expectation.dimension}: {', '.join(missing)}")
    return result


# --------------------------------------------------------------------------- #
# Samples, SLOs and alerts
# --------------------------------------------------------------------------- #
def _unit_interval(value: Optional[Fraction], what: str) -> None:
    if value is not None and not 0 <= value <= 1:
        raise InvalidArgument(f"{what} must be within [0, 1], got {value}")


def _fraction_text(value: Optional[Fraction]) -> Optional[str]:
    return None if value is None else str(value)


@dataclass(frozen=True)
class SliSample:
    """One measurement of a dataset's four SLIs; an SLI that was not measured is None."""

    dataset: str
    at: datetime
    freshness_seconds: Optional[Decimal] = None
    completeness: Optional[Fraction] = None
    accuracy: Optional[Fraction] = None
    adherence: Optional[Fraction] = None
    window: str = ""
    latest_batch_at: Optional[datetime] = None
    notes: tuple[str, ...] = ()
    out_of_order: bool = False

    def __post_init__(self) -> None:
        if not is_identifier(self.dataset):
            raise InvalidArgument(f"invalid dataset name {self.dataset!r}")
        object.__setattr__(self, "at", parse_timestamp(self.at))
        if self.latest_batch_at is not None:
            object.__setattr__(self, "latest_batch_at", parse_timestamp(self.latest_batch_at))
        if self.freshness_seconds is not None:
            seconds = Decimal(str(self.freshness_seconds))
            if seconds < 0:
                raise InvalidArgument("freshness must be >= 0")
            object.__setattr__(self, "freshness_seconds", seconds)
        for name in ("completeness", "accuracy", "adherence"):
            value = getattr(self, name)
            if value is not None:
                value = _fraction(value, name)
                _unit_interval(value, name)
                object.__setattr__(self, name, value)
        object.__setattr__(self, "notes", tuple(self.notes))

    def value(self, sli: str) -> Optional[Union[Decimal, Fraction]]:
        if sli == "freshness":
            return self.freshness_seconds
        return getattr(self, sli)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "at": format_timestamp(self.at),
            "freshness_seconds": to_plain(self.freshness_seconds),
            "completeness": _fraction_text(self.completeness),
            "accuracy": _fraction_text(self.accuracy),
            "adherence": _fraction_text(self.adherence),
            "window": self.window,
            "latest_batch_at": format_timestamp(self.latest_batch_at) if self.latest_batch_at else None,
            "notes": list(self.notes),
            "out_of_order": self.out_of_order,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SliSample:
        def frac(name: str) -> Optional[Fraction]:
            value = data.get(name)
            return None if value is None else Fraction(str(value))

        freshness = data.get("freshness_seconds")
        return cls(
            dataset=data["dataset"],
            at=parse_timestamp(data["at"]),
            freshness_seconds=Decimal(str(freshness)) if freshness is not None else None,
            completeness=frac("completeness"),
            accuracy=frac("accuracy"),
            adherence=frac("adherence"),
            window=data.get("window", ""),
            latest_batch_at=parse_timestamp(data["latest_batch_at"]) if data.get("latest_batch_at") else None,
            notes=tuple(data.get("notes", ())),
            out_of_order=bool(data.get("out_of_order", False)),
        )


SLO_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["dataset"],
    "additionalProperties": False,
    "properties": {
        "dataset": {"type": "string", "minLength": 1},
        "max_freshness_seconds": {"type": ["number", "null"], "minimum": 0},
        "min_completeness": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "min_accuracy": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "min_adherence": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    },
}
_SLO_VALIDATOR = Draft202012Validator(SLO_SCHEMA)


@dataclass(frozen=True)
class SloConfig:
    """Per-dataset thresholds; an absent threshold is not evaluated."""

    dataset: str
    max_freshness_seconds: Optional[Decimal] = None
    min_completeness: Optional[Fraction] = None
    min_accuracy: Optional[Fraction] = None
    min_adherence: Optional[Fraction] = None

    def __post_init__(self) -> None:
        if not is_identifier(self.dataset):
            raise InvalidArgument(f"invalid dataset name {self.dataset!r}")
        if self.max_freshness_seconds is not None:
            seconds = Decimal(str(self.max_freshness_seconds))
            if seconds < 0:
                raise InvalidArgument("max_freshness_seconds must be >= 0")
            object.__setattr__(self, "max_freshness_seconds", seconds)
        for name in ("min_completeness", "min_accuracy", "min_adherence"):
            value = getattr(self, name)
            if value is not None:
                value = _fraction(value, name)
                _unit_interval(value, name)
                object.__setattr__(self, name, value)

    def threshold(self, sli: str) -> Optional[Union[Decimal, Fraction]]:
        return self.max_freshness_seconds if sli == "freshness" else getattr(self, f"min_{sli}")

    def to_dict(self) -> dict[str, Any]:
        def number(value: Optional[Fraction]) -> Any:
            return None if value is None else to_plain(Decimal(value.numerator) / Decimal(value.denominator))

        return {
            "dataset": self.dataset,
            "max_freshness_seconds": to_plain(self.max_freshness_seconds),
            "min_completeness": number(self.min_completeness),
            "min_accuracy": number(self.min_accuracy),
            "min_adherence": number(self.min_adherence),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> SloConfig:
        check_schema(data, _SLO_VALIDATOR, "slo config")
        return cls(
            dataset=data["dataset"],
            max_freshness_seconds=data.get("max_freshness_seconds"),
            min_completeness=data.get("min_completeness"),
            min_accuracy=data.get("min_accuracy"),
            min_adherence=data.get("min_adherence"),
        )


def parse_slo(document: Union[str, bytes]) -> SloConfig:
    data = loads(document)
    if not isinstance(data, Mapping):
        raise SchemaViolation("slo config: <root>: must be a JSON object")
    return SloConfig.from_dict(data)


def daily_transaction_template(dataset: str) -> SloConfig:
    """Daily transaction feed: fresh within 24 h, 95% complete, 99% accurate, 90% adherent."""
    return SloConfig(
        dataset=dataset,
        max_freshness_seconds=Decimal(86400),
        min_completeness=Fraction(95, 100),
        min_accuracy=Fraction(99, 100),
        min_adherence=Fraction(9, 10),
    )


class SuggestedAction(str, Enum):
    REINGEST = "reingest"
    RECOMPUTE = "recompute"
    BACKFILL = "backfill"
    REVIEW = "review"


ACTIONS = {
    "freshness": SuggestedAction.REINGEST,
    "completeness": SuggestedAction.BACKFILL,
    "accuracy": SuggestedAction.REVIEW,
    "adherence": SuggestedAction.REVIEW,
}


@dataclass(frozen=True)
class Alert:
    """A violated threshold with the remediation to try first."""

    dataset: str
    sli: str
    observed: Union[Decimal, Fraction]
    threshold: Union[Decimal, Fraction]
    at: datetime
    suggested_action: SuggestedAction

    def __post_init__(self) -> None:
        if self.sli not in SLI_NAMES:
            raise InvalidArgument(f"unknown SLI {self.sli!r}")
        violated = self.observed > self.threshold if self.sli == "freshness" else self.observed < self.threshold
        if not violated:
            raise InvalidArgument(f"{self.sli} {self.observed} does not violate {self.threshold}")
        object.__setattr__(self, "suggested_action", SuggestedAction(self.suggested_action))

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "sli": self.sli,
            "observed": str(self.observed),
            "threshold": str(self.threshold),
            "at": format_timestamp(self.at),
            "suggested_action": self.suggested_action.value,
        }


def evaluate_slos(sample: SliSample, config: SloConfig) -> list[Alert]:
    """One alert per configured threshold the sample violates, in SLI order."""
    alerts = []
    for sli in SLI_NAMES:
        threshold = config.threshold(sli)
        observed = sample.value(sli)
        if threshold is None or observed is None:
            continue
        failed = observed > threshold if sli == "freshness" else observed < threshold
        if failed:
            alert = Alert(sample.dataset, sli, observed, threshold, sample.at, ACTIONS[sli])
            _logger.warning(
                f"SLO breach on {sample.dataset}: {sli}={observed} vs {threshold} -> {alert.suggested_action.value}"
            )
            alerts.append(alert)
    return alerts


# --------------------------------------------------------------------------- #
# Persistence
# --------------------------------------------------------------------------- #
class _DatasetFiles:
    def __init__(self, workspace: Workspace) -> None:
        self.workspace = workspace

    def directory(self, dataset: str) -> Path:
        if not is_identifier(dataset):
            raise InvalidArgument(f"invalid dataset name {dataset!r}")
        return self.workspace.path("quality", dataset)


class SliLog(_DatasetFiles):
    """Append-only daily NDJSON files ``quality/<dataset>/sli-<YYYY-MM-DD>.ndjson``.

    A sample older than the newest logged one is kept, flagged ``out_of_order`` and
    appended to the newest file so earlier daily files never change.
    """

    def files(self, dataset: str) -> builtins.list[Path]:
        directory = self.directory(dataset)
        return sorted(directory.glob("sli-*.ndjson")) if directory.is_dir() else []

    def _all(self, dataset: str) -> builtins.list[SliSample]:
        return [SliSample.from_dict(line) for path in self.files(dataset) for line in iter_ndjson(path)]

    def append(self, sample: SliSample) -> SliSample:
        """Append a sample; returns it as stored (possibly flagged out of order)."""
        with self.workspace.lock(f"quality-{sample.dataset}"):
            existing = self._all(sample.dataset)
            newest = max((s.at for s in existing), default=None)
            target = self.directory(sample.dataset) / f"sli-{sample.at.date().isoformat()}.ndjson"
            if newest is not None and sample.at < newest:
                sample = replace(sample, out_of_order=True)
                target = self.files(sample.dataset)[-1]
                _logger.warning(
                    f"SLI sample for {sample.dataset} at {format_timestamp(sample.at)} is older than "
                    f"{format_timestamp(newest)}; logged out of order"
                )
            append_ndjson(target, [sample.to_dict()])
        _logger.debug(f"Logged SLI sample for {sample.dataset} at {format_timestamp(sample.at)}")
        return sample

    def history(self, dataset: str, start: Any = None, end: Any = None) -> builtins.list[SliSample]:
        """Samples with start <= at <= end (either bound optional), in time order."""
        lower = parse_timestamp(start) if start is not None else None
        upper = parse_timestamp(end) if end is not None else None
        samples = [
            s
            for s in self._all(dataset)
            if (lower is None or s.at >= lower) and (upper is None or s.at <= upper)
        ]
        return sorted(samples, key=lambda s: s.at)

    def latest(self, dataset: str) -> Optional[SliSample]:
        samples = self.history(dataset)
        return samples[-1] if samples else None


def append_sli_log(log: SliLog, sample: SliSample) -> SliSample:
    return log.append(sample)


def read_sli_history(log: SliLog, dataset: str, start: Any = None, end: Any = None) -> list[SliSample]:
    return log.history(dataset, start, end)


class BatchLog(_DatasetFiles):
    """Per-dataset log of batch summaries used for the adherence window."""

    def append(self, dataset: str, summary: BatchSummary) -> None:
        with self.workspace.lock(f"quality-{dataset}"):
            append_ndjson(self.directory(dataset) / "batches.ndjson", [summary.to_dict()])

    def read(self, dataset: str, window: Optional[int] = None) -> builtins.list[BatchSummary]:
        """The last ``window`` summaries in log order (all when None)."""
        summaries = [BatchSummary.from_dict(line) for line in iter_ndjson(self.directory(dataset) / "batches.ndjson")]
        if window is not None:
            if window < 1:
                raise InvalidArgument("window must be positive")
            summaries = summaries[-window:]
        return summaries


class AlertSink(_DatasetFiles):
    """Append-only ``quality/<dataset>/alerts.ndjson``."""

    def emit(self, alerts: Iterable[Alert]) -> int:
        by_dataset: dict[str, builtins.list[dict[str, Any]]] = {}
        for alert in alerts:
            by_dataset.setdefault(alert.dataset, []).append(alert.to_dict())
        for dataset, lines in by_dataset.items():
            with self.workspace.lock(f"quality-{dataset}"):
                append_ndjson(self.directory(dataset) / "alerts.ndjson", lines)
        return sum(len(lines) for lines in by_dataset.values())

    def read(self, dataset: str) -> builtins.list[dict[str, Any]]:
        return builtins.list(iter_ndjson(self.directory(dataset) / "alerts.ndjson"))


class SloStore(_DatasetFiles):
    """SLO configuration at ``quality/<dataset>/slo.json``."""

    def put(self, config: SloConfig) -> SloConfig:
        write_json(self.directory(config.dataset) / "slo.json", config.to_dict())
        _logger.info(f"Stored SLO config for {config.dataset}")
        return config

    def get(self, dataset: str) -> SloConfig:
        path = self.directory(dataset) / "slo.json"
        if not path.exists():
            raise NotFound(f"no SLO config for dataset {dataset!r}")
        return SloConfig.from_dict(read_json(path))

    def find(self, dataset: str) -> Optional[SloConfig]:
        try:
            return self.get(dataset)
        except NotFound:
            return None


@dataclass
class QualityCheck:
    """Result of re-evaluating a dataset's latest sample against its SLOs at ``now``."""

    sample: SliSample
    alerts: list[Alert] = field(default_factory=list)

    @property
    def breached(self) -> bool:
        return bool(self.alerts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "sample": self.sample.to_dict(),
            "alerts": [a.to_dict() for a in self.alerts],
            "breached": self.breached,
        }


def check_dataset(workspace: Workspace, dataset: str, now: Any = None) -> QualityCheck:
    """Recompute freshness of the latest sample against ``now`` and evaluate the SLOs.

    Alerts are appended to the dataset's alert sink; the SLI log is not modified.

    Raises
    ------
    NotFound
        If the dataset has no SLI samples or no SLO configuration.
    """
    current = parse_timestamp(now) if now is not None else utc_now()
    latest = SliLog(workspace).latest(dataset)
    if latest is None:
        raise NotFound(f"no SLI samples for dataset {dataset!r}")
    config = SloStore(workspace).get(dataset)
    freshness = latest.freshness_seconds
    if latest.latest_batch_at is not None:
        freshness = compute_freshness(latest.latest_batch_at, current)
    sample = replace(latest, at=current, freshness_seconds=freshness, out_of_order=False)
    alerts = evaluate_slos(sample, config)
    AlertSink(workspace).emit(alerts)
    return QualityCheck(sample, alerts)
