"""Record-level contract evaluation, quarantine and the batch halt decision.

Every rule of a contract is evaluated against every record. Hard failures quarantine
the record, soft failures only warn. The batch total of hard violations ``V`` decides
whether the batch may proceed (``V == 0``) or must halt.
"""

from __future__ import annotations

import builtins
import csv
import io
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

from .contract import Contract, ContractRef, FieldSpec, Rule
from .errors import InvalidArgument, MalformedDocument, NotFound, TypeMismatch, UnparseablePayload
from .logging import get_logger
from .utils import append_ndjson, is_safe_name, iter_ndjson, loads
from .values import coerce, format_timestamp, is_missing, parse_timestamp, to_decimal, to_plain, utc_now
from .workspace import Workspace

_logger = get_logger()

INPUT_FORMATS = ("csv", "ndjson")


class HardViolationPolicy(str, Enum):
    """What a pipeline does with a batch whose V is positive."""

    HALT_BATCH = "halt_batch"
    QUARANTINE_AND_CONTINUE = "quarantine_and_continue"


class VerdictStatus(str, Enum):
    PASS = "pass"
    QUARANTINED = "quarantined"


class Decision(str, Enum):
    PROCEED = "proceed"
    HALT = "halt"


@dataclass(frozen=True)
class Provenance:
    """Where a record came from: a source tag and its 1-based row number."""

    source: Optional[str] = None
    row: Optional[int] = None

    def reference(self) -> str:
        return f"{self.source or 'record'}:{self.row if self.row is not None else '?'}"


@dataclass
class Record:
    """One incoming record: raw field values plus optional provenance."""

    values: dict[str, Any]
    provenance: Optional[Provenance] = None

    def get(self, name: str, default: Any = None) -> Any:
        return self.values.get(name, default)


@dataclass(frozen=True)
class RuleBreach:
    """A failed rule: its id and the human-readable message."""

    rule_id: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"rule_id": self.rule_id, "message": self.message}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RuleBreach:
        return cls(rule_id=data["rule_id"], message=data["message"])


@dataclass(frozen=True)
class RecordVerdict:
    """Outcome of evaluating one record.

    Raises
    ------
    InvalidArgument
        If the status disagrees with the hard violations, or a rule id repeats in one list.
    """

    record_key: str
    status: VerdictStatus
    hard_violations: tuple[RuleBreach, ...] = ()
    soft_warnings: tuple[RuleBreach, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "status", VerdictStatus(self.status))
        object.__setattr__(self, "hard_violations", tuple(self.hard_violations))
        object.__setattr__(self, "soft_warnings", tuple(self.soft_warnings))
        if (self.status is VerdictStatus.QUARANTINED) != bool(self.hard_violations):
            raise InvalidArgument("status must be quarantined exactly when hard violations exist")
        for breaches in (self.hard_violations, self.soft_warnings):
            ids = [b.rule_id for b in breaches]
            if len(ids) != len(set(ids)):
                raise InvalidArgument("duplicate rule id in a verdict list")

    @property
    def passed(self) -> bool:
        return self.status is VerdictStatus.PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_key": self.record_key,
            "status": self.status.value,
            "hard_violations": [b.to_dict() for b in self.hard_violations],
            "soft_warnings": [b.to_dict() for b in self.soft_warnings],
        }


@dataclass(frozen=True)
class BatchVerdict:
    """Outcome of T1 on one batch.

    Raises
    ------
    InvalidArgument
        If V is not the sum of the per-record hard violations or the decision
        disagrees with V.
    """

    batch_id: str
    total_hard_violations: int
    decision: Decision
    record_verdicts: tuple[RecordVerdict, ...]
    contract_ref: ContractRef

    def __post_init__(self) -> None:
        object.__setattr__(self, "decision", Decision(self.decision))
        object.__setattr__(self, "record_verdicts", tuple(self.record_verdicts))
        expected = sum(len(v.hard_violations) for v in self.record_verdicts)
        if self.total_hard_violations != expected:
            raise InvalidArgument(f"V={self.total_hard_violations} does not match the {expected} hard violations")
        if (self.decision is Decision.HALT) != (self.total_hard_violations > 0):
            raise InvalidArgument("decision must be halt exactly when V > 0")

    @property
    def quarantined(self) -> list[RecordVerdict]:
        return [v for v in self.record_verdicts if not v.passed]

    @property
    def warned(self) -> list[RecordVerdict]:
        return [v for v in self.record_verdicts if v.soft_warnings]

    def to_dict(self) -> dict[str, Any]:
        return {
            "batch_id": self.batch_id,
            "total_hard_violations": self.total_hard_violations,
            "decision": self.decision.value,
            "contract": self.contract_ref.to_dict(),
            "record_verdicts": [v.to_dict() for v in self.record_verdicts],
        }


@dataclass(frozen=True)
class BatchSummary:
    """Persisted digest of a BatchVerdict, as kept in a dataset's batch log.

    ``flagged`` counts records with a hard violation or a soft warning.
    """

    batch_id: str
    total_hard_violations: int
    decision: Decision
    records: int
    quarantined: int
    warned: int
    flagged: int
    contract: Optional[ContractRef]
    at: datetime

    @classmethod
    def of(cls, verdict: BatchVerdict, at: Optional[datetime] = None) -> BatchSummary:
        return cls(
            batch_id=verdict.batch_id,
            total_hard_violations=verdict.total_hard_violations,
            decision=verdict.decision,
            records=len(verdict.record_verdicts),
            quarantined=len(verdict.quarantined),
            warned=len(verdict.warned),
            flagged=sum(1 for v in verdict.record_verdicts if v.hard_violations or v.soft_warnings),
            contract=verdict.contract_ref,
            at=parse_timestamp(at) if at is not None else utc_now(),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "batch_id": self.batch_id,
            "total_hard_violations": self.total_hard_violations,
            "decision": Decision(self.decision).value,
            "records": self.records,
            "quarantined": self.quarantined,
            "warned": self.warned,
            "flagged": self.flagged,
            "contract": self.contract.to_dict() if self.contract else None,
            "at": format_timestamp(self.at),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> BatchSummary:
        return cls(
            batch_id=data["batch_id"],
            total_hard_violations=int(data["total_hard_violations"]),
            decision=Decision(data["decision"]),
            records=int(data["records"]),
            quarantined=int(data["quarantined"]),
            warned=int(data["warned"]),
            flagged=int(data["flagged"]),
            contract=ContractRef.from_dict(data["contract"]) if data.get("contract") else None,
            at=parse_timestamp(data["at"]),
        )


@dataclass(frozen=True)
class QuarantineRef:
    """Address of one quarantine file."""

    batch_id: str
    path: str
    records: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"batch_id": self.batch_id, "path": self.path, "records": self.records}


# --------------------------------------------------------------------------- #
# Input parsing
# --------------------------------------------------------------------------- #
def read_records(payload: Union[bytes, str], fmt: str, source: Optional[str] = None) -> list[Record]:
    """Parse a CSV (header row) or NDJSON payload into Records.

    Empty CSV cells are read as missing. Row numbers are 1-based over data rows.

    Raises
    ------
    InvalidArgument
        If ``fmt`` is not a supported format.
    UnparseablePayload
        If the payload does not parse under ``fmt``.
    """
    if fmt not in INPUT_FORMATS:
        raise InvalidArgument(f"unsupported format {fmt!r}")
    if isinstance(payload, bytes):
        try:
            text = payload.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise UnparseablePayload(f"payload is not UTF-8: {exc}") from exc
    else:
        text = payload
    if fmt == "csv":
        return _read_csv(text, source)
    return _read_ndjson(text, source)


def _read_csv(text: str, source: Optional[str]) -> list[Record]:
    if not text.strip():
        return []
    try:
        reader = csv.reader(io.StringIO(text, newline=""))
        rows = list(reader)
    except csv.Error as exc:
        raise UnparseablePayload(f"bad CSV: {exc}") from exc
    header = [name.strip() for name in rows[0]]
    if len(set(header)) != len(header) or any(not name for name in header):
        raise UnparseablePayload("CSV header has empty or duplicate column names")
    records = []
    for number, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) > len(header):
            raise UnparseablePayload(f"CSV row {number} has more cells than the header")
        values = {name: (row[i] if i < len(row) and row[i] != "" else None) for i, name in enumerate(header)}
        records.append(Record(values, Provenance(source, number)))
    return records


def _read_ndjson(text: str, source: Optional[str]) -> list[Record]:
    records = []
    row = 0
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            value = loads(line)
        except MalformedDocument as exc:
            raise UnparseablePayload(f"line {line_number}: not JSON") from exc
        if not isinstance(value, Mapping):
            raise UnparseablePayload(f"line {line_number}: not a JSON object")
        row += 1
        records.append(Record(dict(value), Provenance(source, row)))
    return records


# --------------------------------------------------------------------------- #
# Evaluation
# --------------------------------------------------------------------------- #
def _message(rule_id: str, field_name: Optional[str], detail: str) -> str:
    return f"rule {rule_id} failed on field {field_name or '<batch>'}: {detail}"


def _resolve_values(record: Record, contract: Contract) -> tuple[dict[str, Any], list[str]]:
    """Map record values onto declared names; return them with the undeclared names."""
    name_map = contract.name_map()
    resolved: dict[str, Any] = {}
    undeclared = []
    for name, value in record.values.items():
        target = name_map.get(name)
        if target is None:
            undeclared.append(name)
        elif target == name or target not in resolved:
            resolved[target] = value
    return resolved, undeclared


def _check_rule(rule: Rule, spec: FieldSpec, value: Any) -> Optional[str]:
    """Return a failure detail, or None when ``value`` satisfies ``rule``."""
    if rule.kind == "required":
        return "value is missing" if is_missing(value) else None
    if is_missing(value):
        return None
    if rule.kind == "range":
        if spec.datatype not in ("integer", "decimal"):
            return None
        number = to_decimal(value)
        low, high = rule.params.get("min"), rule.params.get("max")
        if low is not None and number < to_decimal(low):
            return f"value {to_plain(value)} is below minimum {low}"
        if high is not None and number > to_decimal(high):
            return f"value {to_plain(value)} is above maximum {high}"
        return None
    if rule.kind == "format":
        text = value if isinstance(value, str) else str(to_plain(value))
        if re.fullmatch(rule.params["pattern"], text) is None:
            return f"value {text!r} does not match pattern {rule.params['pattern']!r}"
        return None
    allowed = []
    for candidate in rule.params["allowed"]:
        try:
            allowed.append(to_plain(coerce(candidate, spec.datatype)))
        except TypeMismatch:
            continue
    if to_plain(value) not in allowed:
        return f"value {to_plain(value)!r} is not one of {rule.params['allowed']!r}"
    return None


def evaluate_record(record: Record, contract: Contract, record_key: Optional[str] = None) -> RecordVerdict:
    """Evaluate every rule of ``contract`` against one record.

    Besides the declared rules, two implicit hard rules apply: ``type:<field>`` fails
    when a value does not parse as its declared datatype, and ``schema:<field>`` fails
    for each field the contract does not declare (aliases count as declared). A value
    that failed the type check is reported once, by ``type:<field>`` alone; no other
    rule on that field runs. Range, format and enum rules also skip missing values.

    Parameters
    ----------
    record : Record
        The record to evaluate
    contract : Contract
        The governing contract
    record_key : Optional[str]
        Reference reported in the verdict (defaults to the record's provenance)

    Returns
    -------
    RecordVerdict
        Quarantined exactly when at least one hard rule failed.
    """
    key = record_key or (record.provenance.reference() if record.provenance else "record")
    resolved, undeclared = _resolve_values(record, contract)
    hard: list[RuleBreach] = []
    soft: list[RuleBreach] = []

    typed: dict[str, Any] = {}
    type_failed: set[str] = set()
    for spec in contract.fields:
        try:
            typed[spec.name] = coerce(resolved.get(spec.name), spec.datatype)
        except TypeMismatch as exc:
            type_failed.add(spec.name)
            hard.append(RuleBreach(f"type:{spec.name}", _message(f"type:{spec.name}", spec.name, str(exc))))

    for name in undeclared:
        detail = f"field is not declared by contract {contract.name} v{contract.version}"
        hard.append(RuleBreach(f"schema:{name}", _message(f"schema:{name}", name, detail)))

    for rule in contract.rules:
        if rule.field is None:
            continue
        spec = contract.field(rule.field)
        if rule.field in type_failed:
            continue
        detail = _check_rule(rule, spec, typed.get(rule.field))
        if detail is None:
            continue
        breach = RuleBreach(rule.id, _message(rule.id, rule.field, detail))
        (hard if rule.severity == "hard" else soft).append(breach)

    if soft:
        _logger.warning(f"{key}: soft rule breaches {', '.join(b.rule_id for b in soft)}")
    if hard:
        _logger.debug(f"{key}: hard rule breaches {', '.join(b.rule_id for b in hard)}")
    status = VerdictStatus.QUARANTINED if hard else VerdictStatus.PASS
    return RecordVerdict(key, status, tuple(hard), tuple(soft))


def evaluate_batch(batch: Sequence[Record], contract: Contract, batch_id: str) -> BatchVerdict:
    """Evaluate a batch; V is the total count of hard violations over all records.

    Examples
    --------
    The five-record batch of the worked example has one negative amount, so V is 1
    and the decision is halt.
    """
    verdicts = []
    for index, record in enumerate(batch, start=1):
        key = record.provenance.reference() if record.provenance else f"{batch_id}:{index}"
        verdicts.append(evaluate_record(record, contract, key))
    total = sum(len(v.hard_violations) for v in verdicts)
    decision = Decision.HALT if total > 0 else Decision.PROCEED
    verdict = BatchVerdict(batch_id, total, decision, tuple(verdicts), ContractRef.of(contract))
    _logger.info(
        f"Batch {batch_id}: {len(verdicts)} records, V={total}, decision={decision.value}, "
        f"{len(verdict.warned)} with soft warnings"
    )
    if decision is Decision.HALT:
        _logger.warning(f"Batch {batch_id} halted by contract {contract.name} v{contract.version} (V={total})")
    return verdict


def coerce_record(record: Record, contract: Contract) -> dict[str, Any]:
    """Typed values for every declared field (aliases resolved, missing as None).

    Raises
    ------
    TypeMismatch
        If a value does not parse; records that passed evaluation never do.
    """
    resolved, _ = _resolve_values(record, contract)
    return {spec.name: coerce(resolved.get(spec.name), spec.datatype) for spec in contract.fields}


def passing_records(verdict: BatchVerdict, batch: Sequence[Record]) -> list[Record]:
    """Records of ``batch`` whose verdict is pass, in batch order."""
    if len(batch) != len(verdict.record_verdicts):
        raise InvalidArgument("verdict does not cover the batch")
    return [record for record, v in zip(batch, verdict.record_verdicts) if v.passed]


# --------------------------------------------------------------------------- #
# Quarantine
# --------------------------------------------------------------------------- #
@dataclass
class QuarantineStore:
    """Quarantine files under ``quarantine/<batch_id>.ndjson``.

    Each line holds one rejected record with its verdict lists and the contract
    that rejected it. Files are written once and never modified.
    """

    workspace: Workspace
    root: Path = field(init=False)

    def __post_init__(self) -> None:
        self.root = self.workspace.path("quarantine")

    def _file(self, batch_id: str) -> Path:
        return self.root / f"{batch_id}.ndjson"

    def write(self, verdict: BatchVerdict, batch: Sequence[Record]) -> QuarantineRef:
        """Persist the quarantined records of ``verdict``.

        Raises
        ------
        InvalidArgument
            If nothing is quarantined, the verdict does not cover the batch, or the
            batch id was already quarantined.
        StorageFailure
            If the file cannot be written.
        """
        if len(batch) != len(verdict.record_verdicts):
            raise InvalidArgument("verdict does not cover the batch")
        if not verdict.quarantined:
            raise InvalidArgument(f"batch {verdict.batch_id} has no quarantined records")
        if not is_safe_name(verdict.batch_id):
            raise InvalidArgument(f"invalid batch id {verdict.batch_id!r}")
        path = self._file(verdict.batch_id)
        with self.workspace.lock("quarantine"):
            if path.exists():
                raise InvalidArgument(f"batch {verdict.batch_id} is already quarantined")
            contract = {"name": verdict.contract_ref.name, "version": verdict.contract_ref.version}
            lines = [
                {
                    "record_key": v.record_key,
                    "record": dict(record.values),
                    "hard_violations": [b.to_dict() for b in v.hard_violations],
                    "soft_warnings": [b.to_dict() for b in v.soft_warnings],
                    "contract": contract,
                }
                for record, v in zip(batch, verdict.record_verdicts)
                if not v.passed
            ]
            append_ndjson(path, lines)
        _logger.warning(f"Quarantined {len(lines)} record(s) of batch {verdict.batch_id}")
        return QuarantineRef(verdict.batch_id, str(path), len(lines))

    def list(self) -> builtins.list[QuarantineRef]:
        if not self.root.is_dir():
            return []
        refs = []
        for path in sorted(self.root.glob("*.ndjson")):
            count = sum(1 for _ in iter_ndjson(path))
            refs.append(QuarantineRef(path.stem, str(path), count))
        return refs

    def read(self, ref: Union[QuarantineRef, str]) -> builtins.list[dict[str, Any]]:
        batch_id = ref.batch_id if isinstance(ref, QuarantineRef) else ref
        path = self._file(batch_id)
        if not is_safe_name(batch_id) or not path.exists():
            raise NotFound(f"no quarantine for batch {batch_id!r}")
        return builtins.list(iter_ndjson(path))


def write_quarantine(verdict: BatchVerdict, batch: Sequence[Record], sink: QuarantineStore) -> QuarantineRef:
    """Persist the quarantined records of a batch; the batch itself is not modified."""
    return sink.write(verdict, batch)
