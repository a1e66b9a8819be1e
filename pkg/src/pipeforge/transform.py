"""Registered, deterministic transformation templates over pinned inputs.

A template names its inputs (versioned tables or raw sources) and an ordered plan of
relational steps::

    {"op": "select", "fields": ["region", "amount"]}          # or "*"
    {"op": "filter", "predicate": "amount >= 0"}
    {"op": "join", "input": "customers", "on": [["customer_id", "customer_id"]], "how": "inner"}
    {"op": "group_by", "keys": ["region", "day"], "aggregates": [{"fn": "sum", "field": "amount", "as": "revenue"}]}
    {"op": "derive", "as": "day", "expr": "date(timestamp)"}

The plan starts from the first declared input; other inputs enter through joins.
Runs are pinned (table inputs by as-of timestamp, raw inputs by segment ids), so the
output, and its content digest, depend only on the template, the pins and the
pinned content.
"""

from __future__ import annotations

import builtins
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from datetime import date, datetime
from decimal import Decimal
from pathlib import Path
from typing import Any, Optional, Union

from jsonschema import Draft202012Validator

from .contract import FieldSpec, as_field_specs
from .errors import (
    DigestMismatch,
    ExecutionError,
    IntegrityError,
    InvalidArgument,
    NotFound,
    ParseError,
    PlanError,
    SchemaViolation,
    StorageFailure,
    TypeMismatch,
    UnknownSegment,
    UnknownSource,
    UnresolvablePin,
)
from .expressions import (
    AGGREGATES,
    Expression,
    FilterExpr,
    evaluate_expression,
    expression_datatype,
    expression_fields,
    filter_fields,
    matches,
    parse_expression,
    parse_filter,
)
from .logging import get_logger
from .raw_layer import RawZone
from .utils import (
    atomic_write_text,
    canonical_json,
    check_schema,
    digest_of,
    is_identifier,
    iter_ndjson,
    loads,
    read_json,
    read_text,
    write_json,
)
from .values import (
    coerce,
    format_timestamp,
    is_missing,
    parse_timestamp,
    quantize,
    row_sort_key,
    sort_key,
    to_decimal,
    to_plain,
    utc_now,
)
from .versioned_store import VersionedTable
from .workspace import Workspace

_logger = get_logger()

INPUT_KINDS = ("table", "raw")
JOIN_KINDS = ("inner", "left")
NUMERIC = ("integer", "decimal")

_FIELD = {
    "type": "object",
    "required": ["name", "datatype"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "datatype": {"type": "string"},
        "required": {"type": "boolean"},
        "aliases": {"type": "array", "items": {"type": "string"}},
    },
}

TEMPLATE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["template_id", "inputs", "plan", "output_schema"],
    "additionalProperties": False,
    "properties": {
        "template_id": {"type": "string", "minLength": 1},
        "inputs": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "kind", "ref", "fields"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "kind": {"enum": list(INPUT_KINDS)},
                    "ref": {"type": "string"},
                    "fields": {"type": "array", "minItems": 1, "items": _FIELD},
                },
            },
        },
        "plan": {"type": "array", "items": {"type": "object", "required": ["op"]}},
        "output_schema": {"type": "array", "minItems": 1, "items": _FIELD},
    },
}
_TEMPLATE_VALIDATOR = Draft202012Validator(TEMPLATE_SCHEMA)

Row = dict[str, Any]


# --------------------------------------------------------------------------- #
# Templates
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class TemplateInput:
    """A named input: a versioned table or a raw source, with its field schema."""

    name: str
    kind: str
    ref: str
    fields: tuple[FieldSpec, ...]

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise InvalidArgument(f"invalid input name {self.name!r}")
        if self.kind not in INPUT_KINDS:
            raise InvalidArgument(f"input {self.name}: kind must be one of {', '.join(INPUT_KINDS)}")
        if not is_identifier(self.ref):
            raise InvalidArgument(f"input {self.name}: invalid ref {self.ref!r}")
        object.__setattr__(self, "fields", as_field_specs(self.fields))
        if not self.fields:
            raise InvalidArgument(f"input {self.name}: fields cannot be empty")
        names = [spec.name for spec in self.fields]
        if len(set(names)) != len(names):
            raise InvalidArgument(f"input {self.name}: duplicate field names")

    @property
    def schema(self) -> dict[str, str]:
        return {spec.name: spec.datatype for spec in self.fields}

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "ref": self.ref,
            "fields": [spec.to_dict() for spec in self.fields],
        }


@dataclass(frozen=True)
class TransformTemplate:
    """A reusable transformation: inputs, ordered plan steps and the output schema."""

    template_id: str
    inputs: tuple[TemplateInput, ...]
    plan: tuple[dict[str, Any], ...]
    output_schema: tuple[FieldSpec, ...]

    def __post_init__(self) -> None:
        if not is_identifier(self.template_id):
            raise InvalidArgument(f"invalid template id {self.template_id!r}")
        inputs = tuple(
            item if isinstance(item, TemplateInput) else TemplateInput(
                item["name"], item["kind"], item["ref"], as_field_specs(item["fields"])
            )
            for item in self.inputs
        )
        if not inputs:
            raise InvalidArgument(f"template {self.template_id}: at least one input is required")
        names = [item.name for item in inputs]
        if len(set(names)) != len(names):
            raise InvalidArgument(f"template {self.template_id}: duplicate input names")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "plan", tuple(to_plain(dict(step)) for step in self.plan))
        object.__setattr__(self, "output_schema", as_field_specs(self.output_schema))

    def input(self, name: str) -> TemplateInput:
        for item in self.inputs:
            if item.name == name:
                return item
        raise InvalidArgument(f"template {self.template_id} has no input {name!r}")

    @property
    def output_names(self) -> list[str]:
        return [spec.name for spec in self.output_schema]

    def to_dict(self) -> dict[str, Any]:
        return {
            "template_id": self.template_id,
            "inputs": [item.to_dict() for item in self.inputs],
            "plan": [dict(step) for step in self.plan],
            "output_schema": [spec.to_dict() for spec in self.output_schema],
        }

    def digest(self) -> str:
        return digest_of(self.to_dict())

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TransformTemplate:
        check_schema(data, _TEMPLATE_VALIDATOR, "transform template")
        try:
            return cls(
                template_id=data["template_id"],
                inputs=tuple(
                    TemplateInput(item["name"], item["kind"], item["ref"], as_field_specs(item["fields"]))
                    for item in data["inputs"]
                ),
                plan=tuple(data["plan"]),
                output_schema=as_field_specs(data["output_schema"]),
            )
        except SchemaViolation:
            raise
        except InvalidArgument as exc:
            raise SchemaViolation(f"transform template: {exc}") from exc


def parse_template(document: Union[str, bytes]) -> TransformTemplate:
    data = loads(document)
    if not isinstance(data, Mapping):
        raise SchemaViolation("transform template: <root>: must be a JSON object")
    return TransformTemplate.from_dict(data)


# --------------------------------------------------------------------------- #
# Static checks
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class _Select:
    fields: Optional[tuple[str, ...]]


@dataclass(frozen=True)
class _Filter:
    predicate: FilterExpr


@dataclass(frozen=True)
class _Join:
    input: str
    on: tuple[tuple[str, str], ...]
    how: str
    # right field -> output name; right keys that share the left key's name are absent
    carried: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class _Aggregate:
    fn: str
    field: Optional[str]
    alias: str


@dataclass(frozen=True)
class _GroupBy:
    keys: tuple[str, ...]
    aggregates: tuple[_Aggregate, ...]


@dataclass(frozen=True)
class _Derive:
    name: str
    expr: Expression


_Step = Union[_Select, _Filter, _Join, _GroupBy, _Derive]


@dataclass(frozen=True)
class CompiledPlan:
    """A statically checked plan: parsed steps plus the schema after each step."""

    steps: tuple[_Step, ...]
    schemas: tuple[dict[str, str], ...]

    @property
    def output_schema(self) -> dict[str, str]:
        return self.schemas[-1]


def _names(value: Any, what: str, index: int) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
        raise PlanError(f"{what} must be a list of field names", index)
    if len(set(value)) != len(value):
        raise PlanError(f"{what} repeats a field", index)
    return tuple(value)


def _require(schema: Mapping[str, str], names: Iterable[str], index: int) -> None:
    for name in sorted(names):
        if name not in schema:
            raise PlanError(f"field {name!r} is not defined at this step", index)


def _check_select(step: Mapping[str, Any], schema: dict[str, str], index: int) -> tuple[_Select, dict[str, str]]:
    fields = step.get("fields", "*")
    if fields == "*":
        return _Select(None), dict(schema)
    names = _names(fields, "select fields", index)
    if not names:
        raise PlanError("select needs at least one field", index)
    _require(schema, names, index)
    return _Select(names), {name: schema[name] for name in names}


def _check_filter(step: Mapping[str, Any], schema: dict[str, str], index: int) -> tuple[_Filter, dict[str, str]]:
    text = step.get("predicate")
    if not isinstance(text, str):
        raise PlanError("filter needs a predicate string", index)
    try:
        predicate = parse_filter(text)
    except ParseError as exc:
        raise PlanError(f"invalid predicate: {exc}", index) from exc
    _require(schema, filter_fields(predicate), index)
    return _Filter(predicate), dict(schema)


def _check_join(
    step: Mapping[str, Any], schema: dict[str, str], template: TransformTemplate, joined: set[str], index: int
) -> tuple[_Join, dict[str, str]]:
    role = step.get("input")
    names = [item.name for item in template.inputs]
    if role not in names[1:]:
        raise PlanError(f"join input {role!r} is not a secondary input of the template", index)
    if role in joined:
        raise PlanError(f"input {role!r} is joined twice", index)
    how = step.get("how", "inner")
    if how not in JOIN_KINDS:
        raise PlanError(f"join how must be one of {', '.join(JOIN_KINDS)}", index)
    on = step.get("on")
    if not isinstance(on, list) or not on:
        raise PlanError("join needs a non-empty 'on' list of [left, right] pairs", index)
    right_schema = template.input(role).schema
    pairs = []
    for pair in on:
        if not isinstance(pair, list) or len(pair) != 2 or not all(isinstance(p, str) for p in pair):
            raise PlanError("each join key must be a [left, right] pair", index)
        left, right = pair
        if left not in schema:
            raise PlanError(f"field {left!r} is not defined at this step", index)
        if right not in right_schema:
            raise PlanError(f"input {role} has no field {right!r}", index)
        pairs.append((left, right))

    merged = dict(schema)
    carried = []
    shared = {right for left, right in pairs if left == right}
    for name, datatype in right_schema.items():
        if name in shared:
            continue
        out = name if name not in merged else f"{role}_{name}"
        if out in merged:
            raise PlanError(f"joined field {name!r} collides with {out!r}", index)
        merged[out] = datatype
        carried.append((name, out))
    joined.add(role)
    return _Join(role, tuple(pairs), how, tuple(carried)), merged


def _check_group_by(step: Mapping[str, Any], schema: dict[str, str], index: int) -> tuple[_GroupBy, dict[str, str]]:
    keys = _names(step.get("keys", []), "group_by keys", index)
    _require(schema, keys, index)
    specs = step.get("aggregates", [])
    if not isinstance(specs, list):
        raise PlanError("group_by aggregates must be a list", index)
    if not keys and not specs:
        raise PlanError("group_by needs keys or aggregates", index)
    out = {name: schema[name] for name in keys}
    aggregates = []
    for spec in specs:
        if not isinstance(spec, Mapping):
            raise PlanError("each aggregate must be an object", index)
        fn = spec.get("fn")
        if fn not in AGGREGATES:
            raise PlanError(f"unknown aggregate {fn!r}", index)
        field_name = spec.get("field")
        if field_name is None and fn != "count":
            raise PlanError(f"aggregate {fn} needs a field", index)
        if field_name is not None:
            _require(schema, [field_name], index)
            if fn in ("sum", "avg") and schema[field_name] not in NUMERIC:
                raise PlanError(f"{fn}({field_name}) needs a numeric field", index)
        alias = spec.get("as") or (f"{fn}_{field_name}" if field_name else "count")
        if not is_identifier(alias):
            raise PlanError(f"invalid aggregate alias {alias!r}", index)
        if alias in out:
            raise PlanError(f"aggregate alias {alias!r} is already defined", index)
        if fn == "count":
            out[alias] = "integer"
        elif fn in ("sum", "avg"):
            out[alias] = "decimal"
        else:
            out[alias] = schema[field_name]
        aggregates.append(_Aggregate(fn, field_name, alias))
    return _GroupBy(keys, tuple(aggregates)), out


def _check_derive(step: Mapping[str, Any], schema: dict[str, str], index: int) -> tuple[_Derive, dict[str, str]]:
    name = step.get("as")
    if not is_identifier(name):
        raise PlanError(f"invalid derived field name {name!r}", index)
    if name in schema:
        raise PlanError(f"field {name!r} is already defined", index)
    text = step.get("expr")
    if not isinstance(text, str):
        raise PlanError("derive needs an expr string", index)
    try:
        expr = parse_expression(text)
    except ParseError as exc:
        raise PlanError(f"invalid expression: {exc}", index) from exc
    _require(schema, expression_fields(expr), index)
    out = dict(schema)
    out[name] = expression_datatype(expr, schema)
    return _Derive(name, expr), out


def _compile_steps(template: TransformTemplate) -> CompiledPlan:
    schema = template.inputs[0].schema
    steps: list[_Step] = []
    schemas = [dict(schema)]
    joined: set[str] = set()
    for index, step in enumerate(template.plan):
        op = step.get("op")
        compiled: _Step
        if op == "select":
            compiled, schema = _check_select(step, schema, index)
        elif op == "filter":
            compiled, schema = _check_filter(step, schema, index)
        elif op == "join":
            compiled, schema = _check_join(step, schema, template, joined, index)
        elif op == "group_by":
            compiled, schema = _check_group_by(step, schema, index)
        elif op == "derive":
            compiled, schema = _check_derive(step, schema, index)
        elif op in AGGREGATES:
            raise PlanError(f"aggregate {op} is only allowed inside group_by", index)
        else:
            raise PlanError(f"unknown step op {op!r}", index)
        steps.append(compiled)
        schemas.append(dict(schema))
    return CompiledPlan(tuple(steps), tuple(schemas))


def infer_output_schema(template: TransformTemplate) -> dict[str, str]:
    """Field datatypes after the last plan step, without comparing to the declared output schema."""
    return _compile_steps(template).output_schema


def check_plan(template: TransformTemplate) -> CompiledPlan:
    """Statically check a template's plan and compile it.

    Every referenced field must be produced by an input or a prior step, aggregates
    may only appear in group_by steps, and the final fields must equal the declared
    output schema.

    Raises
    ------
    PlanError
        With the offending step index (None for output-schema mismatches).
    """
    plan = _compile_steps(template)
    schema = plan.output_schema

    declared = template.output_names
    if len(set(declared)) != len(declared):
        raise PlanError("output schema repeats a field")
    missing = [name for name in declared if name not in schema]
    extra = [name for name in schema if name not in declared]
    if missing or extra:
        detail = []
        if missing:
            detail.append(f"not produced: {', '.join(missing)}")
        if extra:
            detail.append(f"not declared: {', '.join(extra)}")
        raise PlanError(f"output schema does not match the plan ({'; '.join(detail)})")
    return plan


# --------------------------------------------------------------------------- #
# Execution
# --------------------------------------------------------------------------- #
def coerce_input_rows(spec: TemplateInput, rows: Iterable[Mapping[str, Any]]) -> list[Row]:
    """Project rows onto an input's declared fields, typed; uncoercible values become missing."""
    out = []
    for position, row in enumerate(rows, start=1):
        typed: Row = {}
        for field_spec in spec.fields:
            value = row.get(field_spec.name)
            if value is None:
                for alias in field_spec.aliases:
                    if alias in row:
                        value = row[alias]
                        break
            if is_missing(value):
                typed[field_spec.name] = None
                continue
            try:
                typed[field_spec.name] = coerce(value, field_spec.datatype)
            except TypeMismatch as exc:
                _logger.warning(f"Input {spec.name} row {position}: {field_spec.name} treated as missing ({exc})")
                typed[field_spec.name] = None
        out.append(typed)
    return out


def _join_key(row: Mapping[str, Any], names: Sequence[str]) -> Optional[tuple]:
    values = [row.get(name) for name in names]
    if any(is_missing(v) for v in values):
        return None
    return tuple(canonical_json(to_plain(v)) for v in values)


def _run_join(step: _Join, rows: list[Row], right_rows: list[Row]) -> list[Row]:
    left_names = [left for left, _ in step.on]
    right_names = [right for _, right in step.on]
    index: dict[tuple, list[Row]] = {}
    for right in right_rows:
        key = _join_key(right, right_names)
        if key is not None:
            index.setdefault(key, []).append(right)
    out = []
    for left in rows:
        key = _join_key(left, left_names)
        found = index.get(key, []) if key is not None else []
        for right in found:
            merged = dict(left)
            for name, alias in step.carried:
                merged[alias] = right.get(name)
            out.append(merged)
        if not found and step.how == "left":
            merged = dict(left)
            for _, alias in step.carried:
                merged[alias] = None
            out.append(merged)
    return out


def _aggregate(agg: _Aggregate, group: list[Row]) -> Any:
    if agg.field is None:
        return len(group)
    values = [row[agg.field] for row in group if not is_missing(row.get(agg.field))]
    if agg.fn == "count":
        return len(values)
    if not values:
        return None
    if agg.fn == "min":
        return min(values, key=sort_key)
    if agg.fn == "max":
        return max(values, key=sort_key)
    try:
        total = sum((to_decimal(v) for v in values), Decimal(0))
    except TypeMismatch as exc:
        raise ExecutionError(f"{agg.fn}({agg.field}): {exc}") from exc
    if agg.fn == "sum":
        return quantize(total)
    return quantize(total / len(values))


def _run_group_by(step: _GroupBy, rows: list[Row]) -> list[Row]:
    groups: dict[tuple, list[Row]] = {}
    for row in rows:
        key = tuple(canonical_json(to_plain(row.get(name))) for name in step.keys)
        groups.setdefault(key, []).append(row)
    if not step.keys and not groups:
        groups[()] = []
    out = []
    for group in groups.values():
        result: Row = {name: group[0].get(name) for name in step.keys} if group else {}
        for agg in step.aggregates:
            result[agg.alias] = _aggregate(agg, group)
        out.append(result)
    return out


def execute_plan(template: TransformTemplate, inputs: Mapping[str, Iterable[Mapping[str, Any]]]) -> list[Row]:
    """Run a template's plan in memory.

    ``inputs`` maps each input name to its rows; values are coerced to the declared
    input datatypes first. The result holds the output-schema fields as canonical
    plain values, sorted by all output fields (missing first).

    Raises
    ------
    PlanError
        If the plan fails static checks.
    UnresolvablePin
        If rows are not supplied for a declared input.
    ExecutionError
        On arithmetic failures such as division by zero.
    """
    plan = check_plan(template)
    typed: dict[str, list[Row]] = {}
    for spec in template.inputs:
        if spec.name not in inputs:
            raise UnresolvablePin(f"no rows supplied for input {spec.name!r}")
        typed[spec.name] = coerce_input_rows(spec, inputs[spec.name])

    rows = typed[template.inputs[0].name]
    for position, step in enumerate(plan.steps):
        if isinstance(step, _Select):
            if step.fields is not None:
                rows = [{name: row.get(name) for name in step.fields} for row in rows]
        elif isinstance(step, _Filter):
            rows = [row for row in rows if matches(step.predicate, row)]
        elif isinstance(step, _Join):
            rows = _run_join(step, rows, typed[step.input])
        elif isinstance(step, _GroupBy):
            rows = _run_group_by(step, rows)
        else:
            derived = []
            for row in rows:
                try:
                    value = evaluate_expression(step.expr, row)
                except ExecutionError as exc:
                    raise ExecutionError(f"step {position} ({step.name}): {exc}") from exc
                derived.append({**row, step.name: value})
            rows = derived
        _logger.debug(f"Template {template.template_id} step {position}: {len(rows)} row(s)")

    names = template.output_names
    result = [{name: to_plain(row.get(name)) for name in names} for row in rows]
    result.sort(key=lambda row: row_sort_key(row, names))
    return result


# --------------------------------------------------------------------------- #
# Pins, versions and lineage
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class InputPin:
    """The exact state of one input: an as-of timestamp (tables) or segment ids (raw)."""

    input: str
    kind: str
    ref: str
    asof: Optional[datetime] = None
    segments: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.kind not in INPUT_KINDS:
            raise InvalidArgument(f"pin {self.input}: unknown kind {self.kind!r}")
        if self.kind == "table":
            if self.asof is None or self.segments is not None:
                raise InvalidArgument(f"pin {self.input}: table inputs are pinned by an as-of timestamp")
            object.__setattr__(self, "asof", parse_timestamp(self.asof))
        else:
            if self.segments is None or self.asof is not None:
                raise InvalidArgument(f"pin {self.input}: raw inputs are pinned by segment ids")
            object.__setattr__(self, "segments", tuple(self.segments))

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"input": self.input, "kind": self.kind, "ref": self.ref}
        if self.asof is not None:
            data["asof"] = format_timestamp(self.asof)
        else:
            data["segments"] = list(self.segments or ())
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> InputPin:
        segments = data.get("segments")
        return cls(
            input=data["input"],
            kind=data["kind"],
            ref=data["ref"],
            asof=parse_timestamp(data["asof"]) if data.get("asof") is not None else None,
            segments=tuple(segments) if segments is not None else None,
        )


@dataclass(frozen=True)
class LineageEdge:
    """An input pin feeding a curated dataset version."""

    source: InputPin
    dataset_id: str
    version: int

    def to_dict(self) -> dict[str, Any]:
        return {"from": self.source.to_dict(), "to": {"dataset_id": self.dataset_id, "version": self.version}}


@dataclass(frozen=True)
class CuratedDatasetVersion:
    """One persisted run of a template."""

    dataset_id: str
    version: int
    template_id: str
    template_digest: str
    input_pins: tuple[InputPin, ...]
    content_digest: str
    created_at: datetime
    row_count: int = 0
    output_schema: tuple[FieldSpec, ...] = ()
    replay_of: Optional[int] = None

    def __post_init__(self) -> None:
        if self.version < 1:
            raise InvalidArgument("dataset versions start at 1")
        if not self.input_pins:
            raise InvalidArgument(f"dataset {self.dataset_id} v{self.version} needs at least one input pin")

    @property
    def lineage(self) -> list[LineageEdge]:
        return [LineageEdge(pin, self.dataset_id, self.version) for pin in self.input_pins]

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset_id": self.dataset_id,
            "version": self.version,
            "template_id": self.template_id,
            "template_digest": self.template_digest,
            "input_pins": [pin.to_dict() for pin in self.input_pins],
            "content_digest": self.content_digest,
            "created_at": format_timestamp(self.created_at),
            "row_count": self.row_count,
            "output_schema": [spec.to_dict() for spec in self.output_schema],
            "replay_of": self.replay_of,
            "lineage": [edge.to_dict() for edge in self.lineage],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CuratedDatasetVersion:
        return cls(
            dataset_id=data["dataset_id"],
            version=int(data["version"]),
            template_id=data["template_id"],
            template_digest=data["template_digest"],
            input_pins=tuple(InputPin.from_dict(pin) for pin in data["input_pins"]),
            content_digest=data["content_digest"],
            created_at=parse_timestamp(data["created_at"]),
            row_count=int(data.get("row_count", 0)),
            output_schema=as_field_specs(data.get("output_schema", [])),
            replay_of=data.get("replay_of"),
        )


def content_digest(template_digest: str, pins: Sequence[InputPin], rows: Sequence[Mapping[str, Any]]) -> str:
    """Digest of a run: template digest, pins (sorted by input name) and canonical rows."""
    return digest_of(
        {
            "template_digest": template_digest,
            "pins": [pin.to_dict() for pin in sorted(pins, key=lambda p: p.input)],
            "rows": list(rows),
        }
    )


PinValue = Union[InputPin, datetime, date, str, Sequence[str]]


class TransformEngine:
    """Template registry plus the curated dataset store of a workspace.

    Layout::

        templates/<template_id>/<digest>.json and LATEST
        curated/<dataset_id>/v<k>/rows.ndjson and meta.json
    """

    def __init__(self, workspace: Workspace) -> None:
        self.workspace = workspace
        self.raw = RawZone(workspace)

    # Templates --------------------------------------------------------- #
    def _template_dir(self, template_id: str) -> Path:
        return self.workspace.path("templates", template_id)

    def register_template(self, template: TransformTemplate) -> str:
        """Check and store a template immutably; returns its digest.

        Registering an identical template again returns the same digest.

        Raises
        ------
        PlanError
            If the plan fails static checks.
        """
        check_plan(template)
        digest = template.digest()
        directory = self._template_dir(template.template_id)
        with self.workspace.lock(f"template-{template.template_id}"):
            path = directory / f"{digest}.json"
            if not path.exists():
                write_json(path, template.to_dict())
            atomic_write_text(directory / "LATEST", digest + "\n")
        _logger.info(f"Registered template {template.template_id} ({digest[:12]})")
        return digest

    def has_template(self, template_id: str) -> bool:
        return is_identifier(template_id) and (self._template_dir(template_id) / "LATEST").exists()

    def template_digest(self, template_id: str) -> str:
        if not self.has_template(template_id):
            raise NotFound(f"no template named {template_id!r}")
        return read_text(self._template_dir(template_id) / "LATEST").strip()

    def get_template(self, template_id: str, digest: Optional[str] = None) -> TransformTemplate:
        """Load the latest (or a specific) registration of a template.

        Raises
        ------
        NotFound
            If the template or digest is unknown.
        IntegrityError
            If the stored document no longer hashes to its digest.
        """
        digest = digest or self.template_digest(template_id)
        path = self._template_dir(template_id) / f"{digest}.json"
        if not path.exists():
            raise NotFound(f"template {template_id} has no registration {digest}")
        template = TransformTemplate.from_dict(read_json(path))
        if template.digest() != digest:
            raise IntegrityError(f"template {template_id} registration {digest} does not match its digest")
        return template

    def templates(self) -> builtins.list[str]:
        root = self.workspace.path("templates")
        if not root.is_dir():
            return []
        return sorted(p.name for p in root.iterdir() if (p / "LATEST").exists())

    # Pins -------------------------------------------------------------- #
    def pins_for_asof(self, template: TransformTemplate, t: Any) -> dict[str, InputPin]:
        """Explicit pins for state as of ``t``: tables by timestamp, raw inputs by segments loaded by then."""
        ts = parse_timestamp(t)
        return {spec.name: self._pin(spec, ts) for spec in template.inputs}

    def _pin(self, spec: TemplateInput, value: PinValue) -> InputPin:
        if isinstance(value, InputPin):
            if value.input != spec.name or value.kind != spec.kind or value.ref != spec.ref:
                raise UnresolvablePin(f"pin for {spec.name} does not match the input declaration")
            return value
        if spec.kind == "table":
            if not isinstance(value, (datetime, date, str)):
                raise UnresolvablePin(f"table input {spec.name} must be pinned by an as-of timestamp")
            try:
                return InputPin(spec.name, "table", spec.ref, asof=parse_timestamp(value))
            except InvalidArgument as exc:
                raise UnresolvablePin(f"input {spec.name}: {exc}") from exc
        if isinstance(value, (datetime, date, str)):
            try:
                segments = self.raw.segments_asof(spec.ref, value)
            except (UnknownSource, InvalidArgument) as exc:
                raise UnresolvablePin(f"input {spec.name}: {exc}") from exc
            return InputPin(spec.name, "raw", spec.ref, segments=tuple(s.segment_id for s in segments))
        return InputPin(spec.name, "raw", spec.ref, segments=tuple(value))

    def _normalize_pins(self, template: TransformTemplate, pins: Mapping[str, PinValue]) -> list[InputPin]:
        unknown = sorted(set(pins) - {spec.name for spec in template.inputs})
        if unknown:
            raise UnresolvablePin(f"template {template.template_id} has no input(s) {', '.join(unknown)}")
        result = []
        for spec in template.inputs:
            if spec.name not in pins:
                raise UnresolvablePin(f"input {spec.name} of {template.template_id} is not pinned")
            result.append(self._pin(spec, pins[spec.name]))
        return result

    def _resolve(self, pin: InputPin) -> builtins.list[dict[str, Any]]:
        if pin.kind == "table":
            if not VersionedTable.exists(self.workspace, pin.ref):
                raise UnresolvablePin(f"input {pin.input}: table {pin.ref!r} does not exist")
            table = VersionedTable.open(self.workspace, pin.ref)
            return [{**payload, **key} for key, payload in table.query_asof(pin.asof)]
        rows: builtins.list[dict[str, Any]] = []
        for segment_id in pin.segments or ():
            try:
                segment = self.raw.get_segment(segment_id)
            except UnknownSegment as exc:
                raise UnresolvablePin(f"input {pin.input}: {exc}") from exc
            if segment.source_id != pin.ref:
                raise UnresolvablePin(f"input {pin.input}: segment {segment_id} belongs to {segment.source_id}")
            rows.extend(self.raw.read_records(segment_id))
        return rows

    # Runs -------------------------------------------------------------- #
    def _dataset_dir(self, dataset_id: str) -> Path:
        return self.workspace.path("curated", dataset_id)

    def _compute(self, template: TransformTemplate, pins: Sequence[InputPin]) -> builtins.list[Row]:
        inputs = {pin.input: self._resolve(pin) for pin in pins}
        return execute_plan(template, inputs)

    def run_transform(
        self,
        template_id: str,
        input_pins: Mapping[str, PinValue],
        dataset_id: Optional[str] = None,
        created_at: Any = None,
    ) -> CuratedDatasetVersion:
        """Execute a registered template over exactly the pinned input states.

        The result is stored as the next version of ``dataset_id`` (defaults to the
        template id) together with its pins and lineage.

        Raises
        ------
        NotFound
            If the template is not registered.
        UnresolvablePin
            If an input is not pinned or its pinned state does not exist.
        ExecutionError
            On arithmetic failures during execution.
        """
        digest = self.template_digest(template_id)
        template = self.get_template(template_id, digest)
        pins = self._normalize_pins(template, input_pins)
        rows = self._compute(template, pins)
        return self._store(
            dataset_id or template_id, template, digest, pins, rows, created_at=created_at, replay_of=None
        )

    def _store(
        self,
        dataset_id: str,
        template: TransformTemplate,
        template_digest: str,
        pins: Sequence[InputPin],
        rows: Sequence[Row],
        created_at: Any,
        replay_of: Optional[int],
    ) -> CuratedDatasetVersion:
        if not is_identifier(dataset_id):
            raise InvalidArgument(f"invalid dataset id {dataset_id!r}")
        digest = content_digest(template_digest, pins, rows)
        stamp = parse_timestamp(created_at) if created_at is not None else utc_now()
        directory = self._dataset_dir(dataset_id)
        with self.workspace.lock(f"curated-{dataset_id}"):
            existing = self.versions(dataset_id)
            version = (existing[-1] if existing else 0) + 1
            result = CuratedDatasetVersion(
                dataset_id=dataset_id,
                version=version,
                template_id=template.template_id,
                template_digest=template_digest,
                input_pins=tuple(pins),
                content_digest=digest,
                created_at=stamp,
                row_count=len(rows),
                output_schema=template.output_schema,
                replay_of=replay_of,
            )
            target = directory / f"v{version}"
            atomic_write_text(target / "rows.ndjson", "".join(canonical_json(row) + "\n" for row in rows))
            write_json(target / "meta.json", result.to_dict())
        suffix = f" (replay of v{replay_of})" if replay_of is not None else ""
        _logger.info(f"Curated {dataset_id} v{version}: {len(rows)} row(s), digest {digest[:12]}{suffix}")
        return result

    def replay(self, dataset_id: str, version: int) -> CuratedDatasetVersion:
        """Re-execute a stored version with its original pins and template registration.

        Returns a new version flagged as a replay of ``version``.

        Raises
        ------
        NotFound
            If the version does not exist.
        UnresolvablePin
            If a pinned input no longer resolves.
        DigestMismatch
            If the recomputed digest differs or a pinned input fails its integrity check.
        """
        original = self.get_version(dataset_id, version)
        try:
            template = self.get_template(original.template_id, original.template_digest)
            rows = self._compute(template, original.input_pins)
        except IntegrityError as exc:
            raise DigestMismatch(f"replay of {dataset_id} v{version}: {exc}") from exc
        recomputed = content_digest(original.template_digest, original.input_pins, rows)
        if recomputed != original.content_digest:
            raise DigestMismatch(
                f"replay of {dataset_id} v{version}: digest {recomputed[:12]} != recorded {original.content_digest[:12]}"
            )
        return self._store(
            dataset_id, template, original.template_digest, original.input_pins, rows, created_at=None, replay_of=version
        )

    # Reading ----------------------------------------------------------- #
    def datasets(self) -> builtins.list[str]:
        root = self.workspace.path("curated")
        if not root.is_dir():
            return []
        return sorted(p.name for p in root.iterdir() if p.is_dir() and self.versions(p.name))

    def versions(self, dataset_id: str) -> builtins.list[int]:
        directory = self._dataset_dir(dataset_id)
        if not is_identifier(dataset_id) or not directory.is_dir():
            return []
        found = []
        for entry in directory.iterdir():
            if entry.name.startswith("v") and entry.name[1:].isdigit() and (entry / "meta.json").exists():
                found.append(int(entry.name[1:]))
        return sorted(found)

    def get_version(self, dataset_id: str, version: Optional[int] = None) -> CuratedDatasetVersion:
        known = self.versions(dataset_id)
        if not known:
            raise NotFound(f"no curated dataset named {dataset_id!r}")
        version = known[-1] if version is None else version
        if version not in known:
            raise NotFound(f"dataset {dataset_id} has no version {version}")
        return CuratedDatasetVersion.from_dict(read_json(self._dataset_dir(dataset_id) / f"v{version}" / "meta.json"))

    def read_rows(self, dataset_id: str, version: Optional[int] = None) -> builtins.list[dict[str, Any]]:
        """Stored rows of a version, checked against its content digest."""
        meta = self.get_version(dataset_id, version)
        rows = list(iter_ndjson(self._dataset_dir(dataset_id) / f"v{meta.version}" / "rows.ndjson"))
        plain = [to_plain(row) for row in rows]
        if content_digest(meta.template_digest, meta.input_pins, plain) != meta.content_digest:
            raise StorageFailure(f"dataset {dataset_id} v{meta.version}: stored rows do not match the digest")
        return plain

    def lineage(self, dataset_id: str, version: Optional[int] = None) -> builtins.list[LineageEdge]:
        return self.get_version(dataset_id, version).lineage


def run_transform(
    engine: TransformEngine, template_id: str, input_pins: Mapping[str, PinValue], dataset_id: Optional[str] = None
) -> CuratedDatasetVersion:
    return engine.run_transform(template_id, input_pins, dataset_id)


def replay(engine: TransformEngine, dataset_id: str, version: int) -> CuratedDatasetVersion:
    return engine.replay(dataset_id, version)
