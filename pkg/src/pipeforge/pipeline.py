"""Declarative pipelines and their runner.

Three patterns are supported:

``etlt_pp``
    Extract, load the Contract, validate and clean (T1), Load into the versioned
    table, business Transforms (T2), Outputs (curated datasets, metrics, SLIs).
    A hard-violation halt stops the run before anything reaches the table.
``eltl_pp``
    Land the raw payload untouched, optionally validate for monitoring only,
    transform over pinned raw segments, materialize metrics, then tier the raw zone.
``elt_baseline``
    Land raw, overwrite a last-write-wins table and transform in memory; no
    contract, no history, nothing replayable.
"""

from __future__ import annotations

import builtins
import time
import uuid
from collections.abc import Iterator, Mapping
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Optional, Union

from jsonschema import Draft202012Validator

from .contract import Contract, ContractRegistry
from .errors import (
    DanglingReference,
    InvalidArgument,
    InvalidSpec,
    MalformedDocument,
    NotFound,
    ParseError,
    PipeforgeError,
)
from .logging import get_logger, run_context
from .quality import (
    AlertSink,
    BatchLog,
    ExpectationSpec,
    SliLog,
    SliSample,
    SloConfig,
    SloStore,
    accuracy_from_verdict,
    compute_adherence,
    compute_freshness,
    evaluate_slos,
    measure_completeness,
)
from .raw_layer import RawZone, TieringPolicy
from .semantic import MetricStore
from .transform import TransformEngine, execute_plan
from .utils import check_schema, digest_of, is_identifier, is_safe_name, loads, read_json, read_text, write_json
from .validation import (
    INPUT_FORMATS,
    BatchSummary,
    BatchVerdict,
    HardViolationPolicy,
    QuarantineStore,
    Record,
    coerce_record,
    evaluate_batch,
    passing_records,
    read_records,
)
from .values import format_timestamp, parse_timestamp
from .versioned_store import LastWriteWinsTable, VersionedTable
from .workspace import Workspace

_logger = get_logger()


class Pattern(str, Enum):
    ETLT_PP = "etlt_pp"
    ELTL_PP = "eltl_pp"
    ELT_BASELINE = "elt_baseline"


class RunStatus(str, Enum):
    SUCCEEDED = "succeeded"
    HALTED_ON_CONTRACT = "halted_on_contract"
    FAILED = "failed"


PIPELINE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["pipeline_id", "pattern"],
    "additionalProperties": False,
    "properties": {
        "pipeline_id": {"type": "string", "minLength": 1},
        "pattern": {"enum": [p.value for p in Pattern]},
        "source": {"type": ["string", "null"]},
        "format": {"enum": list(INPUT_FORMATS)},
        "contract": {
            "oneOf": [
                {"type": "null"},
                {"type": "string"},
                {
                    "type": "object",
                    "required": ["name"],
                    "additionalProperties": False,
                    "properties": {"name": {"type": "string"}, "version": {"type": ["integer", "null"], "minimum": 1}},
                },
            ]
        },
        "target_table": {"type": ["string", "null"]},
        "key_fields": {"type": "array", "items": {"type": "string"}},
        "templates": {"type": "array", "items": {"type": "string"}},
        "metrics": {"type": "array", "items": {"type": "string"}},
        "slo": {"type": ["object", "string", "null"]},
        "on_hard_violation": {"enum": [p.value for p in HardViolationPolicy] + [None]},
        "tiering": {"type": ["object", "null"]},
        "expectation": {"type": ["object", "null"]},
        "quality_dataset": {"type": ["string", "null"]},
    },
}
_PIPELINE_VALIDATOR = Draft202012Validator(PIPELINE_SCHEMA)


@dataclass(frozen=True)
class PipelineSpec:
    """A declarative pipeline.

    ``slo`` is either an inline SloConfig or the name of a dataset whose stored SLO
    configuration applies. ``quality_dataset`` defaults to the target table, then
    the source.

    Raises
    ------
    InvalidSpec
        If the pattern's mandatory parts are missing.
    """

    pipeline_id: str
    pattern: Pattern
    source: Optional[str] = None
    format: str = "csv"
    contract_name: Optional[str] = None
    contract_version: Optional[int] = None
    target_table: Optional[str] = None
    key_fields: tuple[str, ...] = ()
    templates: tuple[str, ...] = ()
    metrics: tuple[str, ...] = ()
    slo: Optional[Union[SloConfig, str]] = None
    on_hard_violation: Optional[HardViolationPolicy] = None
    tiering: Optional[TieringPolicy] = None
    expectation: Optional[ExpectationSpec] = None
    quality_dataset: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        for name in ("key_fields", "templates", "metrics"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.on_hard_violation is not None:
            object.__setattr__(self, "on_hard_violation", HardViolationPolicy(self.on_hard_violation))
        if not is_identifier(self.pipeline_id):
            raise InvalidSpec(f"invalid pipeline id {self.pipeline_id!r}")
        if self.format not in INPUT_FORMATS:
            raise InvalidSpec(f"pipeline {self.pipeline_id}: unsupported format {self.format!r}")
        where = f"pipeline {self.pipeline_id} ({self.pattern.value})"
        if self.pattern is Pattern.ETLT_PP:
            if self.contract_name is None:
                raise InvalidSpec(f"{where}: a contract is required at ingress")
            if not self.target_table or not self.key_fields:
                raise InvalidSpec(f"{where}: target_table and key_fields are required")
        elif self.pattern is Pattern.ELTL_PP:
            if self.tiering is None:
                raise InvalidSpec(f"{where}: a tiering policy is required")
            if self.source is None:
                raise InvalidSpec(f"{where}: a raw source is required")
        else:
            if self.source is None or not self.target_table or not self.key_fields:
                raise InvalidSpec(f"{where}: source, target_table and key_fields are required")
        if self.dataset is None:
            raise InvalidSpec(f"{where}: cannot derive a quality dataset name")

    @property
    def dataset(self) -> Optional[str]:
        """Dataset name used for the batch log, SLI log and alerts."""
        return self.quality_dataset or self.target_table or self.source

    def to_dict(self) -> dict[str, Any]:
        contract: Any = None
        if self.contract_name is not None:
            contract = {"name": self.contract_name, "version": self.contract_version}
        slo: Any = self.slo.to_dict() if isinstance(self.slo, SloConfig) else self.slo
        return {
            "pipeline_id": self.pipeline_id,
            "pattern": self.pattern.value,
            "source": self.source,
            "format": self.format,
            "contract": contract,
            "target_table": self.target_table,
            "key_fields": list(self.key_fields),
            "templates": list(self.templates),
            "metrics": list(self.metrics),
            "slo": slo,
            "on_hard_violation": self.on_hard_violation.value if self.on_hard_violation else None,
            "tiering": self.tiering.to_dict() if self.tiering else None,
            "expectation": self.expectation.to_dict() if self.expectation else None,
            "quality_dataset": self.quality_dataset,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PipelineSpec:
        check_schema(data, _PIPELINE_VALIDATOR, "pipeline spec", error=InvalidSpec)
        contract = data.get("contract")
        if isinstance(contract, str):
            contract = {"name": contract}
        slo = data.get("slo")
        try:
            return cls(
                pipeline_id=data["pipeline_id"],
                pattern=Pattern(data["pattern"]),
                source=data.get("source"),
                format=data.get("format", "csv"),
                contract_name=contract["name"] if contract else None,
                contract_version=contract.get("version") if contract else None,
                target_table=data.get("target_table"),
                key_fields=tuple(data.get("key_fields", ())),
                templates=tuple(data.get("templates", ())),
                metrics=tuple(data.get("metrics", ())),
                slo=SloConfig.from_dict(slo) if isinstance(slo, Mapping) else slo,
                on_hard_violation=data.get("on_hard_violation"),
                tiering=TieringPolicy.from_dict(data["tiering"]) if data.get("tiering") else None,
                expectation=ExpectationSpec.from_dict(data["expectation"]) if data.get("expectation") else None,
                quality_dataset=data.get("quality_dataset"),
            )
        except InvalidSpec:
            raise
        except InvalidArgument as exc:
            raise InvalidSpec(f"pipeline spec: {exc}") from exc


def resolve_references(spec: PipelineSpec, workspace: Workspace) -> PipelineSpec:
    """Check that everything a spec names exists in the workspace.

    Raises
    ------
    DanglingReference
        For an unregistered contract (or version), source, template, metric or SLO.
    """
    where = f"pipeline {spec.pipeline_id}"
    if spec.contract_name is not None:
        versions = ContractRegistry(workspace).versions(spec.contract_name)
        if not versions:
            raise DanglingReference(f"{where}: contract {spec.contract_name!r} is not registered")
        if spec.contract_version is not None and spec.contract_version not in versions:
            raise DanglingReference(f"{where}: contract {spec.contract_name} has no version {spec.contract_version}")
    if spec.source is not None and not RawZone(workspace).has_source(spec.source):
        raise DanglingReference(f"{where}: raw source {spec.source!r} is not registered")
    engine = TransformEngine(workspace)
    for template_id in spec.templates:
        if not engine.has_template(template_id):
            raise DanglingReference(f"{where}: template {template_id!r} is not registered")
    metrics = MetricStore(workspace, engine)
    for metric_id in spec.metrics:
        if not metrics.versions(metric_id):
            raise DanglingReference(f"{where}: metric {metric_id!r} is not defined")
    if isinstance(spec.slo, str) and SloStore(workspace).find(spec.slo) is None:
        raise DanglingReference(f"{where}: no SLO configuration for dataset {spec.slo!r}")
    return spec


def load_pipeline_spec(document: Union[str, bytes], workspace: Optional[Workspace] = None) -> PipelineSpec:
    """Parse a pipeline spec and, given a workspace, resolve its references.

    Raises
    ------
    ParseError
        If the document is not well-formed JSON.
    InvalidSpec
        On structural problems or a missing mandatory part.
    DanglingReference
        If a referenced artifact is not registered.
    """
    try:
        data = loads(document)
    except MalformedDocument as exc:
        raise ParseError("pipeline spec is not well-formed JSON", getattr(exc.__cause__, "pos", 0)) from exc
    if not isinstance(data, Mapping):
        raise InvalidSpec("pipeline spec: <root>: must be a JSON object")
    spec = PipelineSpec.from_dict(data)
    if workspace is not None:
        resolve_references(spec, workspace)
    return spec


class PipelineStore:
    """Pipeline specs at ``pipelines/<pipeline_id>.json``."""

    def __init__(self, workspace: Workspace) -> None:
        self.workspace = workspace

    def put(self, spec: PipelineSpec) -> PipelineSpec:
        resolve_references(spec, self.workspace)
        write_json(self.workspace.path("pipelines", f"{spec.pipeline_id}.json"), spec.to_dict())
        _logger.info(f"Stored pipeline {spec.pipeline_id} ({spec.pattern.value})")
        return spec

    def get(self, pipeline_id: str) -> PipelineSpec:
        path = self.workspace.path("pipelines", f"{pipeline_id}.json")
        if not is_identifier(pipeline_id) or not path.exists():
            raise NotFound(f"no pipeline named {pipeline_id!r}")
        return load_pipeline_spec(read_text(path), self.workspace)


# --------------------------------------------------------------------------- #
# Run reports
# --------------------------------------------------------------------------- #
@dataclass
class RunReport:
    """Everything one pipeline run did, persisted at ``runs/<run_id>.json``."""

    run_id: str
    pipeline_id: str
    pattern: Pattern
    batch_id: str
    at: datetime
    status: RunStatus = RunStatus.SUCCEEDED
    stages: dict[str, float] = field(default_factory=dict)
    verdict: Optional[dict[str, Any]] = None
    quarantine: Optional[dict[str, Any]] = None
    versioning: Optional[dict[str, Any]] = None
    raw_segment: Optional[dict[str, Any]] = None
    datasets: list[dict[str, Any]] = field(default_factory=list)
    sli: Optional[dict[str, Any]] = None
    alerts: list[dict[str, Any]] = field(default_factory=list)
    tiering: Optional[dict[str, Any]] = None
    error: Optional[str] = None

    @property
    def halted(self) -> bool:
        return self.status is RunStatus.HALTED_ON_CONTRACT

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "pipeline_id": self.pipeline_id,
            "pattern": self.pattern.value,
            "batch_id": self.batch_id,
            "at": format_timestamp(self.at),
            "status": self.status.value,
            "stages_ms": dict(self.stages),
            "verdict": self.verdict,
            "quarantine": self.quarantine,
            "versioning": self.versioning,
            "raw_segment": self.raw_segment,
            "datasets": list(self.datasets),
            "sli": self.sli,
            "alerts": list(self.alerts),
            "tiering": self.tiering,
            "error": self.error,
        }


@dataclass
class _RunContext:
    spec: PipelineSpec
    payload: bytes
    at: datetime
    now: datetime
    report: RunReport
    records: builtins.list[Record] = field(default_factory=list)
    verdict: Optional[BatchVerdict] = None


class PipelineRunner:
    """Runs pipeline specs against a workspace and records a RunReport for every run."""

    def __init__(self, workspace: Workspace) -> None:
        self.workspace = workspace
        self.registry = ContractRegistry(workspace)
        self.raw = RawZone(workspace)
        self.engine = TransformEngine(workspace)
        self.metrics = MetricStore(workspace, self.engine)
        self.quarantine = QuarantineStore(workspace)
        self.batch_log = BatchLog(workspace)
        self.sli_log = SliLog(workspace)
        self.alert_sink = AlertSink(workspace)
        self.slo_store = SloStore(workspace)

    # Entry points ------------------------------------------------------ #
    def run(
        self,
        spec: PipelineSpec,
        payload: Union[bytes, str],
        at: Any,
        batch_id: Optional[str] = None,
        now: Any = None,
    ) -> RunReport:
        """Run one batch through ``spec``; ``now`` (default ``at``) is the clock for freshness and tiering.

        Data conditions and per-stage errors end up in the report; the report is
        always persisted.
        """
        ts = parse_timestamp(at)
        stamp = ts.strftime("%Y%m%dT%H%M%SZ")
        batch_id = batch_id or f"{spec.pipeline_id}-{stamp}"
        if not is_safe_name(batch_id):
            raise InvalidArgument(f"invalid batch id {batch_id!r}")
        report = RunReport(
            run_id=f"{spec.pipeline_id}-{stamp}-{uuid.uuid4().hex[:8]}",
            pipeline_id=spec.pipeline_id,
            pattern=spec.pattern,
            batch_id=batch_id,
            at=ts,
        )
        ctx = _RunContext(
            spec=spec,
            payload=payload.encode("utf-8") if isinstance(payload, str) else payload,
            at=ts,
            now=parse_timestamp(now) if now is not None else ts,
            report=report,
        )
        runners = {
            Pattern.ETLT_PP: self._run_etlt,
            Pattern.ELTL_PP: self._run_eltl,
            Pattern.ELT_BASELINE: self._run_elt_baseline,
        }
        with run_context(report.run_id):
            try:
                runners[spec.pattern](ctx)
            except PipeforgeError as exc:
                report.status = RunStatus.FAILED
                report.error = f"{type(exc).__name__}: {exc}"
                _logger.error(f"Run {report.run_id} failed: {report.error}")
            write_json(self.workspace.path("runs", f"{report.run_id}.json"), report.to_dict())
            _logger.info(f"Run {report.run_id} finished with status {report.status.value}")
        return report

    def run_etlt_batch(self, spec: PipelineSpec, payload: Union[bytes, str], at: Any, **kwargs: Any) -> RunReport:
        if spec.pattern is not Pattern.ETLT_PP:
            raise InvalidArgument(f"pipeline {spec.pipeline_id} is {spec.pattern.value}, not etlt_pp")
        return self.run(spec, payload, at, **kwargs)

    def run_eltl_batch(self, spec: PipelineSpec, payload: Union[bytes, str], at: Any, **kwargs: Any) -> RunReport:
        if spec.pattern is not Pattern.ELTL_PP:
            raise InvalidArgument(f"pipeline {spec.pipeline_id} is {spec.pattern.value}, not eltl_pp")
        return self.run(spec, payload, at, **kwargs)

    def run_elt_baseline(self, spec: PipelineSpec, payload: Union[bytes, str], at: Any, **kwargs: Any) -> RunReport:
        if spec.pattern is not Pattern.ELT_BASELINE:
            raise InvalidArgument(f"pipeline {spec.pipeline_id} is {spec.pattern.value}, not elt_baseline")
        return self.run(spec, payload, at, **kwargs)

    # Helpers ----------------------------------------------------------- #
    @contextmanager
    def _stage(self, ctx: _RunContext, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            ctx.report.stages[name] = round((time.perf_counter() - started) * 1000, 3)
            _logger.debug(f"Run {ctx.report.run_id}: stage {name} took {ctx.report.stages[name]} ms")

    def _format(self, spec: PipelineSpec) -> str:
        return self.raw.get_source(spec.source).format if spec.source else spec.format

    def _contract(self, spec: PipelineSpec) -> Contract:
        assert spec.contract_name is not None
        return self.registry.get(spec.contract_name, spec.contract_version)

    def _validate(self, ctx: _RunContext, contract: Contract) -> BatchVerdict:
        verdict = evaluate_batch(ctx.records, contract, ctx.report.batch_id)
        ctx.verdict = verdict
        summary = BatchSummary.of(verdict, ctx.at)
        ctx.report.verdict = summary.to_dict()
        self.batch_log.append(ctx.spec.dataset or ctx.report.pipeline_id, summary)
        return verdict

    def _run_templates(self, ctx: _RunContext) -> None:
        for template_id in ctx.spec.templates:
            template = self.engine.get_template(template_id)
            pins = self.engine.pins_for_asof(template, ctx.at)
            result = self.engine.run_transform(template_id, pins)
            ctx.report.datasets.append(
                {
                    "kind": "template",
                    "dataset_id": result.dataset_id,
                    "version": result.version,
                    "content_digest": result.content_digest,
                }
            )

    def _run_metrics(self, ctx: _RunContext) -> None:
        for metric_id in ctx.spec.metrics:
            result = self.metrics.materialize(metric_id, ctx.at)
            ctx.report.datasets.append(
                {
                    "kind": "metric",
                    "metric_id": metric_id,
                    "dataset_id": result.dataset_id,
                    "version": result.version,
                    "content_digest": result.content_digest,
                }
            )

    def _slo(self, spec: PipelineSpec) -> Optional[SloConfig]:
        if isinstance(spec.slo, SloConfig):
            return spec.slo
        if isinstance(spec.slo, str):
            return self.slo_store.get(spec.slo)
        assert spec.dataset is not None
        return self.slo_store.find(spec.dataset)

    def _observe(self, ctx: _RunContext) -> None:
        """Compute and log the SLI sample, then evaluate SLOs and emit alerts."""
        spec = ctx.spec
        dataset = spec.dataset
        assert dataset is not None
        settings = self.workspace.settings
        notes = []
        completeness = None
        if spec.expectation is not None:
            result = measure_completeness([r.values for r in ctx.records], spec.expectation)
            completeness = result.value
            if result.note:
                notes.append(result.note)
        accuracy = adherence = None
        window = ""
        if ctx.verdict is not None:
            accuracy = accuracy_from_verdict(ctx.verdict, settings.accuracy_counts_soft).value
            log = self.batch_log.read(dataset, settings.adherence_window)
            adherence_result = compute_adherence(log)
            adherence = adherence_result.value
            window = f"last {len(log)} of up to {settings.adherence_window} batches"
        sample = SliSample(
            dataset=dataset,
            at=ctx.now,
            freshness_seconds=compute_freshness(ctx.at, ctx.now),
            completeness=completeness,
            accuracy=accuracy,
            adherence=adherence,
            window=window,
            latest_batch_at=ctx.at,
            notes=tuple(notes),
        )
        sample = self.sli_log.append(sample)
        ctx.report.sli = sample.to_dict()
        config = self._slo(spec)
        if config is not None:
            alerts = evaluate_slos(sample, config)
            self.alert_sink.emit(alerts)
            ctx.report.alerts = [a.to_dict() for a in alerts]

    # Patterns ---------------------------------------------------------- #
    def _run_etlt(self, ctx: _RunContext) -> None:
        spec = ctx.spec
        report = ctx.report
        with self._stage(ctx, "E"):
            ctx.records = read_records(ctx.payload, self._format(spec), source=report.batch_id)
        with self._stage(ctx, "C"):
            contract = self._contract(spec)
        with self._stage(ctx, "T1"):
            verdict = self._validate(ctx, contract)
            if verdict.quarantined:
                report.quarantine = self.quarantine.write(verdict, ctx.records).to_dict()
        policy = spec.on_hard_violation or HardViolationPolicy(self.workspace.settings.on_hard_violation)
        if verdict.total_hard_violations > 0 and policy is HardViolationPolicy.HALT_BATCH:
            report.status = RunStatus.HALTED_ON_CONTRACT
            _logger.warning(f"Run {report.run_id}: batch {report.batch_id} halted; L, T2 and O skipped")
            return

        with self._stage(ctx, "L"):
            assert spec.target_table is not None
            table = VersionedTable.open_or_create(self.workspace, spec.target_table, spec.key_fields, contract.fields)
            rows = [coerce_record(record, contract) for record in passing_records(verdict, ctx.records)]
            report.versioning = table.apply_batch(rows, ctx.at).to_dict()
        with self._stage(ctx, "T2"):
            self._run_templates(ctx)
        with self._stage(ctx, "O"):
            self._run_metrics(ctx)
            self._observe(ctx)

    def _run_eltl(self, ctx: _RunContext) -> None:
        spec = ctx.spec
        report = ctx.report
        assert spec.source is not None and spec.tiering is not None
        with self._stage(ctx, "E+L1"):
            segment = self.raw.ingest_raw(spec.source, ctx.payload, ctx.at)
            report.raw_segment = segment.to_dict()
            ctx.records = read_records(ctx.payload, self._format(spec), source=report.batch_id)
        if spec.contract_name is not None:
            with self._stage(ctx, "monitor"):
                self._validate(ctx, self._contract(spec))
        with self._stage(ctx, "T"):
            self._run_templates(ctx)
        with self._stage(ctx, "L2"):
            self._run_metrics(ctx)
            self._observe(ctx)
        with self._stage(ctx, "tier"):
            report.tiering = self.raw.apply_tiering(spec.tiering, ctx.now).to_dict()

    def _run_elt_baseline(self, ctx: _RunContext) -> None:
        spec = ctx.spec
        report = ctx.report
        assert spec.source is not None and spec.target_table is not None
        with self._stage(ctx, "E+L"):
            segment = self.raw.ingest_raw(spec.source, ctx.payload, ctx.at)
            report.raw_segment = segment.to_dict()
            ctx.records = read_records(ctx.payload, self._format(spec), source=report.batch_id)
            table = LastWriteWinsTable(self.workspace, spec.target_table, spec.key_fields)
            table.upsert(record.values for record in ctx.records)
        with self._stage(ctx, "T"):
            for template_id in spec.templates:
                template = self.engine.get_template(template_id)
                inputs = {}
                for item in template.inputs:
                    if item.kind == "table":
                        inputs[item.name] = LastWriteWinsTable(self.workspace, item.ref, spec.key_fields).rows()
                    else:
                        inputs[item.name] = [
                            row for seg in self.raw.segments(item.ref) for row in self.raw.read_records(seg.segment_id)
                        ]
                rows = execute_plan(template, inputs)
                report.datasets.append(
                    {"kind": "baseline", "dataset_id": template_id, "version": None, "content_digest": digest_of(rows)}
                )


class RunStore:
    """Persisted run reports."""

    def __init__(self, workspace: Workspace) -> None:
        self.workspace = workspace

    def get(self, run_id: str) -> dict[str, Any]:
        path = self.workspace.path("runs", f"{run_id}.json")
        if not is_safe_name(run_id) or not path.exists():
            raise NotFound(f"no run named {run_id!r}")
        return dict(read_json(path))

    def list(self) -> builtins.list[str]:
        root = self.workspace.path("runs")
        return sorted(p.stem for p in root.glob("*.json")) if root.is_dir() else []


def run_etlt_batch(workspace: Workspace, spec: PipelineSpec, payload: Union[bytes, str], at: Any) -> RunReport:
    return PipelineRunner(workspace).run_etlt_batch(spec, payload, at)


def run_eltl_batch(workspace: Workspace, spec: PipelineSpec, payload: Union[bytes, str], at: Any) -> RunReport:
    return PipelineRunner(workspace).run_eltl_batch(spec, payload, at)


def run_elt_baseline(workspace: Workspace, spec: PipelineSpec, payload: Union[bytes, str], at: Any) -> RunReport:
    return PipelineRunner(workspace).run_elt_baseline(spec, payload, at)
