"""Curated semantic layer: versioned metric definitions compiled to transform templates.

A metric names a source (a versioned table or a registered template), its
dimensions, one measure and an optional filter. Materializing it synthesizes a
template (filter, derived dimensions, group-by) and runs it through the transform
engine, so every consumer reads the same numbers for the same as-of time.
"""

from __future__ import annotations

import builtins
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

from jsonschema import Draft202012Validator

from .contract import FieldSpec
from .errors import (
    DuplicateMetric,
    InvalidArgument,
    NotFound,
    SchemaViolation,
    UnknownField,
    UnknownSource,
    VersionConflict,
)
from .expressions import (
    AGGREGATES,
    expression_fields,
    filter_fields,
    format_filter,
    parse_expression,
    parse_filter,
)
from .logging import get_logger
from .transform import CuratedDatasetVersion, TemplateInput, TransformEngine, TransformTemplate, infer_output_schema
from .utils import check_schema, is_identifier, loads, read_json, write_json
from .values import format_timestamp, parse_timestamp, utc_now
from .versioned_store import VersionedTable
from .workspace import Workspace

__all__ = [
    "CatalogEntry",
    "Dimension",
    "Measure",
    "MetricDef",
    "MetricStore",
    "define_metric",
    "format_filter",
    "list_catalog",
    "materialize_metric",
    "parse_filter",
    "parse_metric",
    "synthesize_template",
]

_logger = get_logger()

METRIC_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["metric_id", "source"],
    "additionalProperties": False,
    "properties": {
        "metric_id": {"type": "string", "minLength": 1},
        "version": {"type": "integer", "minimum": 1},
        "source": {
            "type": "object",
            "minProperties": 1,
            "maxProperties": 1,
            "additionalProperties": False,
            "properties": {"table": {"type": "string"}, "template": {"type": "string"}},
        },
        "dimensions": {
            "type": "array",
            "items": {
                "oneOf": [
                    {"type": "string"},
                    {
                        "type": "object",
                        "required": ["name"],
                        "additionalProperties": False,
                        "properties": {"name": {"type": "string"}, "expr": {"type": "string"}},
                    },
                ]
            },
        },
        "measure": {
            "type": ["object", "null"],
            "required": ["aggregate"],
            "additionalProperties": False,
            "properties": {
                "aggregate": {"enum": list(AGGREGATES)},
                "field": {"type": ["string", "null"]},
                "alias": {"type": ["string", "null"]},
            },
        },
        "filter": {"type": ["string", "null"]},
        "description": {"type": "string"},
    },
}
_METRIC_VALIDATOR = Draft202012Validator(METRIC_SCHEMA)


@dataclass(frozen=True)
class Dimension:
    """A grouping column: a source field, or a derived expression such as ``date(timestamp)``."""

    name: str
    expr: Optional[str] = None

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise InvalidArgument(f"invalid dimension name {self.name!r}")
        if self.expr is not None:
            parse_expression(self.expr)

    def fields(self) -> set[str]:
        return expression_fields(parse_expression(self.expr)) if self.expr is not None else {self.name}

    def to_dict(self) -> Union[str, dict[str, str]]:
        return self.name if self.expr is None else {"name": self.name, "expr": self.expr}


@dataclass(frozen=True)
class Measure:
    """An aggregate over one field; the output column is ``alias`` (default ``<aggregate>_<field>``)."""

    aggregate: str
    field: Optional[str] = None
    alias: Optional[str] = None

    def __post_init__(self) -> None:
        if self.aggregate not in AGGREGATES:
            raise InvalidArgument(f"unknown aggregate {self.aggregate!r}")
        if self.field is None and self.aggregate != "count":
            raise InvalidArgument(f"aggregate {self.aggregate} needs a field")
        if self.alias is not None and not is_identifier(self.alias):
            raise InvalidArgument(f"invalid measure alias {self.alias!r}")

    @property
    def name(self) -> str:
        if self.alias:
            return self.alias
        return f"{self.aggregate}_{self.field}" if self.field else "count"

    def to_dict(self) -> dict[str, Any]:
        return {"aggregate": self.aggregate, "field": self.field, "alias": self.alias}


@dataclass(frozen=True)
class MetricDef:
    """A business metric bound to a source.

    Examples
    --------
    >>> MetricDef("daily_revenue_by_region", {"table": "transactions"},
    ...           dimensions=(Dimension("region"), Dimension("date", "date(timestamp)")),
    ...           measure=Measure("sum", "amount", "revenue")).template_id
    'metric__daily_revenue_by_region__v1'
    """

    metric_id: str
    source: Mapping[str, str]
    dimensions: tuple[Dimension, ...] = ()
    measure: Optional[Measure] = None
    filter: Optional[str] = None
    description: str = ""
    version: int = 1

    def __post_init__(self) -> None:
        if not is_identifier(self.metric_id):
            raise InvalidArgument(f"invalid metric id {self.metric_id!r}")
        if isinstance(self.version, bool) or not isinstance(self.version, int) or self.version < 1:
            raise InvalidArgument(f"metric {self.metric_id}: version must be a positive integer")
        if len(self.source) != 1 or next(iter(self.source)) not in ("table", "template"):
            raise InvalidArgument(f"metric {self.metric_id}: source must be {{'table': name}} or {{'template': id}}")
        object.__setattr__(self, "source", dict(self.source))
        object.__setattr__(self, "dimensions", tuple(self.dimensions))
        if not self.dimensions and self.measure is None:
            raise InvalidArgument(f"metric {self.metric_id} computes nothing: no dimensions and no measure")
        names = [d.name for d in self.dimensions] + ([self.measure.name] if self.measure else [])
        if len(set(names)) != len(names):
            raise InvalidArgument(f"metric {self.metric_id}: output column names repeat")
        if self.filter is not None:
            parse_filter(self.filter)

    @property
    def source_kind(self) -> str:
        return next(iter(self.source))

    @property
    def source_ref(self) -> str:
        return self.source[self.source_kind]

    @property
    def template_id(self) -> str:
        return f"metric__{self.metric_id}__v{self.version}"

    @property
    def dataset_id(self) -> str:
        return f"metric__{self.metric_id}"

    def referenced_fields(self) -> set[str]:
        names: set[str] = set()
        for dimension in self.dimensions:
            names |= dimension.fields()
        if self.measure is not None and self.measure.field is not None:
            names.add(self.measure.field)
        if self.filter is not None:
            names |= filter_fields(parse_filter(self.filter))
        return names

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric_id": self.metric_id,
            "version": self.version,
            "source": dict(self.source),
            "dimensions": [d.to_dict() for d in self.dimensions],
            "measure": self.measure.to_dict() if self.measure else None,
            "filter": self.filter,
            "description": self.description,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MetricDef:
        check_schema(data, _METRIC_VALIDATOR, "metric definition")
        dimensions = tuple(
            Dimension(item) if isinstance(item, str) else Dimension(item["name"], item.get("expr"))
            for item in data.get("dimensions", [])
        )
        measure_doc = data.get("measure")
        measure = (
            Measure(measure_doc["aggregate"], measure_doc.get("field"), measure_doc.get("alias"))
            if measure_doc
            else None
        )
        return cls(
            metric_id=data["metric_id"],
            source=data["source"],
            dimensions=dimensions,
            measure=measure,
            filter=data.get("filter"),
            description=data.get("description", ""),
            version=int(data.get("version", 1)),
        )


def parse_metric(document: Union[str, bytes]) -> MetricDef:
    """Parse a metric definition document.

    Raises
    ------
    MalformedDocument, SchemaViolation
        On malformed JSON or a structural mismatch.
    ParseError
        If the filter or a dimension expression does not parse.
    """
    data = loads(document)
    if not isinstance(data, Mapping):
        raise SchemaViolation("metric definition: <root>: must be a JSON object")
    return MetricDef.from_dict(data)


def synthesize_template(
    metric: MetricDef,
    source_fields: Sequence[FieldSpec] = (),
    base_template: Optional[TransformTemplate] = None,
) -> TransformTemplate:
    """Compile a metric into a transform template: filter, derived dimensions, group-by.

    For a table source the template has one table input declared with
    ``source_fields``; a template source prefixes its plan and reuses its inputs.
    """
    steps: list[dict[str, Any]] = []
    if metric.filter is not None:
        steps.append({"op": "filter", "predicate": metric.filter})
    for dimension in metric.dimensions:
        if dimension.expr is not None:
            steps.append({"op": "derive", "as": dimension.name, "expr": dimension.expr})
    aggregates = []
    if metric.measure is not None:
        aggregates.append({"fn": metric.measure.aggregate, "field": metric.measure.field, "as": metric.measure.name})
    steps.append({"op": "group_by", "keys": [d.name for d in metric.dimensions], "aggregates": aggregates})

    if base_template is not None:
        inputs = base_template.inputs
        prefix = list(base_template.plan)
    else:
        inputs = (TemplateInput(metric.source_ref, "table", metric.source_ref, tuple(source_fields)),)
        prefix = []

    draft = TransformTemplate(metric.template_id, inputs, tuple(prefix + steps), ())
    output = tuple(FieldSpec(name, datatype) for name, datatype in infer_output_schema(draft).items())
    return TransformTemplate(metric.template_id, inputs, tuple(prefix + steps), output)


@dataclass(frozen=True)
class CatalogEntry:
    """One row of the consumer-facing metric catalog."""

    metric_id: str
    version: int
    description: str
    last_materialization: Optional[dict[str, Any]] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric_id": self.metric_id,
            "version": self.version,
            "description": self.description,
            "last_materialization": self.last_materialization,
        }


class MetricStore:
    """Versioned metric definitions plus the catalog index.

    Layout::

        semantic/metrics/<metric_id>/v<k>.json
        semantic/catalog.json
    """

    def __init__(self, workspace: Workspace, engine: Optional[TransformEngine] = None) -> None:
        self.workspace = workspace
        self.engine = engine or TransformEngine(workspace)

    @property
    def catalog_path(self) -> Path:
        return self.workspace.path("semantic", "catalog.json")

    def _metric_dir(self, metric_id: str) -> Path:
        return self.workspace.path("semantic", "metrics", metric_id)

    def versions(self, metric_id: str) -> builtins.list[int]:
        directory = self._metric_dir(metric_id)
        if not is_identifier(metric_id) or not directory.is_dir():
            return []
        found = []
        for entry in directory.glob("v*.json"):
            stem = entry.stem[1:]
            if stem.isdigit():
                found.append(int(stem))
        return sorted(found)

    def _load_catalog(self) -> dict[str, Any]:
        return dict(read_json(self.catalog_path)) if self.catalog_path.exists() else {}

    # Definition -------------------------------------------------------- #
    def source_fields(self, metric: MetricDef) -> tuple[tuple[FieldSpec, ...], Optional[TransformTemplate]]:
        """Source schema of a metric: the table's declared fields or the base template's output.

        Raises
        ------
        UnknownSource
            If the referenced table or template does not exist.
        UnknownField
            If a table source declares no field schema.
        """
        if metric.source_kind == "table":
            if not VersionedTable.exists(self.workspace, metric.source_ref):
                raise UnknownSource(f"metric {metric.metric_id}: no table named {metric.source_ref!r}")
            fields = VersionedTable.open(self.workspace, metric.source_ref).fields
            if fields is None:
                raise UnknownField(f"metric {metric.metric_id}: table {metric.source_ref} declares no fields")
            return fields, None
        if not self.engine.has_template(metric.source_ref):
            raise UnknownSource(f"metric {metric.metric_id}: no template named {metric.source_ref!r}")
        base = self.engine.get_template(metric.source_ref)
        return base.output_schema, base

    def define(self, metric: MetricDef) -> CatalogEntry:
        """Store a metric definition.

        Raises
        ------
        UnknownSource
            If the source does not exist.
        UnknownField
            If a dimension, measure or filter references a field the source lacks.
        DuplicateMetric
            If this id and version is already defined.
        VersionConflict
            If a newer version of the metric already exists.
        """
        fields, base = self.source_fields(metric)
        known = {spec.name for spec in fields}
        unknown = sorted(metric.referenced_fields() - known)
        if unknown:
            raise UnknownField(f"metric {metric.metric_id}: unknown field(s) {', '.join(unknown)}")
        synthesize_template(metric, fields, base)

        with self.workspace.lock(f"metric-{metric.metric_id}"):
            existing = self.versions(metric.metric_id)
            if metric.version in existing:
                raise DuplicateMetric(f"metric {metric.metric_id} v{metric.version} is already defined")
            if existing and metric.version < existing[-1]:
                raise VersionConflict(
                    f"metric {metric.metric_id}: v{metric.version} is older than the latest v{existing[-1]}"
                )
            write_json(self._metric_dir(metric.metric_id) / f"v{metric.version}.json", metric.to_dict())
            with self.workspace.lock("semantic-catalog"):
                catalog = self._load_catalog()
                catalog[metric.metric_id] = {
                    "version": metric.version,
                    "description": metric.description,
                    "last_materialization": None,
                }
                write_json(self.catalog_path, catalog)
        _logger.info(f"Defined metric {metric.metric_id} v{metric.version}")
        return CatalogEntry(metric.metric_id, metric.version, metric.description)

    def get(self, metric_id: str, version: Optional[int] = None) -> MetricDef:
        known = self.versions(metric_id)
        if not known:
            raise NotFound(f"no metric named {metric_id!r}")
        version = known[-1] if version is None else version
        if version not in known:
            raise NotFound(f"metric {metric_id} has no version {version}")
        return MetricDef.from_dict(read_json(self._metric_dir(metric_id) / f"v{version}.json"))

    def template_for(self, metric_id: str, version: Optional[int] = None) -> TransformTemplate:
        metric = self.get(metric_id, version)
        fields, base = self.source_fields(metric)
        return synthesize_template(metric, fields, base)

    # Materialization --------------------------------------------------- #
    def materialize(self, metric_id: str, asof: Any, version: Optional[int] = None) -> CuratedDatasetVersion:
        """Run a metric's synthesized template pinned to ``asof`` and record it in the catalog.

        Errors propagate from the transform engine.
        """
        metric = self.get(metric_id, version)
        template = self.template_for(metric_id, metric.version)
        self.engine.register_template(template)
        pins = self.engine.pins_for_asof(template, asof)
        result = self.engine.run_transform(template.template_id, pins, dataset_id=metric.dataset_id)
        with self.workspace.lock("semantic-catalog"):
            catalog = self._load_catalog()
            entry = dict(catalog.get(metric_id, {"version": metric.version, "description": metric.description}))
            entry["last_materialization"] = {
                "at": format_timestamp(utc_now()),
                "asof": format_timestamp(parse_timestamp(asof)),
                "metric_version": metric.version,
                "dataset_id": result.dataset_id,
                "dataset_version": result.version,
                "content_digest": result.content_digest,
            }
            catalog[metric_id] = entry
            write_json(self.catalog_path, catalog)
        _logger.info(f"Materialized metric {metric_id} as of {format_timestamp(parse_timestamp(asof))}")
        return result

    def list_catalog(self) -> builtins.list[CatalogEntry]:
        """Every defined metric, ordered by metric id."""
        catalog = self._load_catalog()
        return [
            CatalogEntry(
                metric_id,
                int(entry["version"]),
                entry.get("description", ""),
                entry.get("last_materialization"),
            )
            for metric_id, entry in sorted(catalog.items())
        ]


def define_metric(store: MetricStore, metric: MetricDef) -> CatalogEntry:
    return store.define(metric)


def materialize_metric(store: MetricStore, metric_id: str, asof: Any) -> CuratedDatasetVersion:
    return store.materialize(metric_id, asof)


def list_catalog(store: MetricStore) -> builtins.list[CatalogEntry]:
    return store.list_catalog()
