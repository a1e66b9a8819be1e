"""Desk-scale benchmark harness comparing the three pipeline strategies.

Every strategy consumes the identical sequence of synthetic batches in its own
sub-workspace. The report covers five dimensions: ingestion-to-consumption latency,
error containment, reproducibility, cost, and recovery after an upstream schema change.
"""

from __future__ import annotations

import dataclasses
import json
import random
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from decimal import Decimal
from fractions import Fraction
from typing import Any, Optional

from rich.table import Table

from .contract import Contract, ContractRegistry, FieldSpec, Rule
from .errors import DigestMismatch, FixtureError
from .logging import get_logger
from .pipeline import Pattern, PipelineRunner, PipelineSpec, RunReport, RunStatus
from .raw_layer import CostReport, RawZone, SourceRegistration, TieringPolicy, estimate_cost, load_cost_rates
from .transform import TemplateInput, TransformEngine, TransformTemplate, infer_output_schema
from .utils import format_duration, sha256_hex, write_json
from .validation import HardViolationPolicy, QuarantineStore, evaluate_batch, read_records
from .values import format_timestamp, parse_timestamp, utc_now
from .versioned_store import VersionedTable
from .workspace import Workspace

_logger = get_logger()

STRATEGIES = tuple(p.value for p in Pattern)
DIRTY_KINDS = ("negative_amount", "non_numeric_amount", "missing_transaction_id")

BENCH_CONTRACT = "bench_transactions"
BENCH_SOURCE = "bench_transactions"
BENCH_TABLE = "bench_transactions"
BENCH_TEMPLATE = "bench_daily_revenue"
RENAMED_FIELD = ("amount", "amt")


# --------------------------------------------------------------------------- #
# Fixture
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class FixtureBatch:
    """One NDJSON payload with the row numbers (1-based) labeled dirty."""

    batch_id: str
    at: datetime
    payload: bytes
    dirty_rows: tuple[int, ...] = ()

    @property
    def digest(self) -> str:
        return sha256_hex(self.payload)

    @property
    def dirty_keys(self) -> frozenset[str]:
        return frozenset(f"{self.batch_id}:{row}" for row in self.dirty_rows)


@dataclass(frozen=True)
class Fixture:
    """A labeled batch sequence; ``schema_change_batch`` is the 0-based index of the first renamed batch."""

    batches: tuple[FixtureBatch, ...]
    rows: int
    dirty_fraction: float
    schema_change_batch: Optional[int]
    seed: int

    @property
    def dirty_keys(self) -> frozenset[str]:
        keys: set[str] = set()
        for batch in self.batches:
            keys |= batch.dirty_keys
        return frozenset(keys)

    @property
    def digests(self) -> list[str]:
        return [batch.digest for batch in self.batches]


def generate_fixture(
    rows: int = 5000,
    dirty_fraction: float = 0.1,
    batches: int = 20,
    schema_change_batch: Optional[int] = None,
    seed: int = 7,
    start: Any = "2025-08-01T00:00:00Z",
) -> Fixture:
    """Generate daily transaction batches with labeled dirty rows.

    Dirty rows cycle through a negative amount, a non-numeric amount and a missing
    transaction id. About one clean row in twenty lacks an email, which is a soft
    condition and not labeled dirty. From ``schema_change_batch`` onward the
    ``amount`` field arrives as ``amt``.

    Raises
    ------
    FixtureError
        If a parameter is out of range.
    """
    if isinstance(rows, bool) or not isinstance(rows, int) or rows < 1:
        raise FixtureError("rows must be a positive integer")
    if isinstance(batches, bool) or not isinstance(batches, int) or not 1 <= batches <= rows:
        raise FixtureError("batches must be between 1 and rows")
    if not 0 <= dirty_fraction < 1:
        raise FixtureError("dirty_fraction must be in [0, 1)")
    if schema_change_batch is not None and not 0 < schema_change_batch < batches:
        raise FixtureError("schema_change_batch must fall strictly inside the batch sequence")

    rng = random.Random(seed)
    dirty_total = round(rows * dirty_fraction)
    dirty_positions = set(rng.sample(range(rows), dirty_total))
    origin = parse_timestamp(start)
    sizes = [rows // batches + (1 if i < rows % batches else 0) for i in range(batches)]

    result = []
    position = 0
    for index, size in enumerate(sizes):
        at = origin + timedelta(days=index)
        batch_id = f"batch-{index + 1:04d}"
        amount_field = RENAMED_FIELD[1] if schema_change_batch is not None and index >= schema_change_batch else "amount"
        lines = []
        dirty_rows = []
        for row in range(1, size + 1):
            record: dict[str, Any] = {
                "transaction_id": f"T{index + 1:04d}{row:05d}",
                "customer_id": f"C{rng.randrange(1, 500):04d}",
                amount_field: f"{rng.randrange(100, 50000) / 100:.2f}",
                "email": f"customer{rng.randrange(1, 500)}@example.com",
                "transaction_date": at.date().isoformat(),
            }
            if position in dirty_positions:
                kind = DIRTY_KINDS[len(dirty_rows) % len(DIRTY_KINDS)]
                if kind == "negative_amount":
                    record[amount_field] = f"-{record[amount_field]}"
                elif kind == "non_numeric_amount":
                    record[amount_field] = "n/a"
                else:
                    del record["transaction_id"]
                dirty_rows.append(row)
            elif rng.random() < 0.05:
                del record["email"]
            lines.append(json.dumps(record, sort_keys=True))
            position += 1
        payload = ("\n".join(lines) + "\n").encode("utf-8")
        result.append(FixtureBatch(batch_id, at, payload, tuple(dirty_rows)))
    _logger.info(f"Generated {batches} batch(es), {rows} rows, {dirty_total} labeled dirty (seed {seed})")
    return Fixture(tuple(result), rows, dirty_fraction, schema_change_batch, seed)


def bench_contract(version: int = 1) -> Contract:
    """The contract governing benchmark transactions."""
    return Contract(
        name=BENCH_CONTRACT,
        version=version,
        fields=(
            FieldSpec("transaction_id", "text", required=True),
            FieldSpec("customer_id", "text", required=True),
            FieldSpec("amount", "decimal", required=True),
            FieldSpec("email", "text"),
            FieldSpec("transaction_date", "date", required=True),
        ),
        rules=(
            Rule("transaction_id_required", "required", "hard", "transaction_id"),
            Rule("amount_required", "required", "hard", "amount"),
            Rule("amount_non_negative", "range", "hard", "amount", {"min": 0}),
            Rule("email_present", "required", "soft", "email"),
        ),
    )


def hotfix_contract(contract: Contract, field_name: str = RENAMED_FIELD[0], alias: str = RENAMED_FIELD[1]) -> Contract:
    """Next contract version accepting ``alias`` as another name for ``field_name``."""
    fields = tuple(
        dataclasses.replace(spec, aliases=(*spec.aliases, alias)) if spec.name == field_name else spec
        for spec in contract.fields
    )
    return dataclasses.replace(contract, version=contract.version + 1, fields=fields)


def bench_template(kind: str, ref: str) -> TransformTemplate:
    """Daily revenue and order count over a table or raw input."""
    draft = TransformTemplate(
        template_id=BENCH_TEMPLATE,
        inputs=(TemplateInput("transactions", kind, ref, bench_contract().fields),),
        plan=(
            {"op": "filter", "predicate": "amount >= 0"},
            {
                "op": "group_by",
                "keys": ["transaction_date"],
                "aggregates": [{"fn": "sum", "field": "amount", "as": "revenue"}, {"fn": "count", "as": "orders"}],
            },
        ),
        output_schema=(),
    )
    output = tuple(FieldSpec(name, datatype) for name, datatype in infer_output_schema(draft).items())
    return dataclasses.replace(draft, output_schema=output)


# --------------------------------------------------------------------------- #
# Report
# --------------------------------------------------------------------------- #
@dataclass
class StrategyMetrics:
    """The five benchmark dimensions for one strategy.

    ``containment`` is the share of labeled dirty records kept out of the loaded
    data; ``detected`` is the share flagged by any validation, blocking or not.
    """

    strategy: str
    runs: int = 0
    statuses: dict[str, int] = field(default_factory=dict)
    latency_ms_total: float = 0.0
    latency_ms_max: float = 0.0
    stage_ms: dict[str, float] = field(default_factory=dict)
    intercepted: int = 0
    detected_count: int = 0
    total_dirty: int = 0
    reproducible: Optional[bool] = None
    replays_checked: int = 0
    hot_bytes: int = 0
    cool_bytes: int = 0
    cost: Optional[CostReport] = None
    recovery_batches: Optional[int] = None
    recovery_ms: Optional[float] = None
    notes: list[str] = field(default_factory=list)

    @property
    def latency_ms_mean(self) -> float:
        return self.latency_ms_total / self.runs if self.runs else 0.0

    @property
    def containment(self) -> Optional[Fraction]:
        return Fraction(self.intercepted, self.total_dirty) if self.total_dirty else None

    @property
    def detected(self) -> Optional[Fraction]:
        return Fraction(self.detected_count, self.total_dirty) if self.total_dirty else None

    @property
    def hot_share(self) -> Optional[Fraction]:
        total = self.hot_bytes + self.cool_bytes
        return Fraction(self.hot_bytes, total) if total else None

    def to_dict(self) -> dict[str, Any]:
        def text(value: Optional[Fraction]) -> Optional[str]:
            return None if value is None else str(value)

        return {
            "strategy": self.strategy,
            "runs": self.runs,
            "statuses": dict(self.statuses),
            "latency_ms": {
                "total": round(self.latency_ms_total, 3),
                "mean": round(self.latency_ms_mean, 3),
                "max": round(self.latency_ms_max, 3),
                "stages": {name: round(ms, 3) for name, ms in sorted(self.stage_ms.items())},
            },
            "containment": text(self.containment),
            "detected": text(self.detected),
            "intercepted": self.intercepted,
            "total_dirty": self.total_dirty,
            "reproducible": self.reproducible,
            "replays_checked": self.replays_checked,
            "storage": {"hot_bytes": self.hot_bytes, "cool_bytes": self.cool_bytes, "hot_share": text(self.hot_share)},
            "cost": self.cost.to_dict() if self.cost else None,
            "recovery": {"batches": self.recovery_batches, "ms": self.recovery_ms},
            "notes": list(self.notes),
        }


@dataclass
class BenchReport:
    """Per-strategy metrics plus the payload digests every strategy consumed."""

    at: datetime
    fixture: dict[str, Any]
    payload_digests: list[str]
    strategies: dict[str, StrategyMetrics]

    @property
    def cost_ratio(self) -> Optional[Fraction]:
        """Hot-storage cost of eltl_pp relative to elt_baseline, when both ran."""
        eltl = self.strategies.get(Pattern.ELTL_PP.value)
        baseline = self.strategies.get(Pattern.ELT_BASELINE.value)
        if not eltl or not baseline or not eltl.cost or not baseline.cost or not baseline.cost.hot_per_day:
            return None
        return Fraction(eltl.cost.hot_per_day) / Fraction(baseline.cost.hot_per_day)

    def to_dict(self) -> dict[str, Any]:
        ratio = self.cost_ratio
        return {
            "at": format_timestamp(self.at),
            "fixture": dict(self.fixture),
            "payload_digests": list(self.payload_digests),
            "hot_cost_ratio_eltl_vs_baseline": None if ratio is None else str(ratio),
            "strategies": {name: metrics.to_dict() for name, metrics in self.strategies.items()},
        }


def render_bench_table(report: BenchReport) -> Table:
    """Human-readable table with one row per strategy and one column per dimension."""
    table = Table(title=f"Benchmark {format_timestamp(report.at)}")
    for column in ("strategy", "latency (mean)", "containment", "reproducible", "cost/day", "recovery"):
        table.add_column(column)
    for name, metrics in report.strategies.items():
        containment = metrics.containment
        reproducible = "n/a" if metrics.reproducible is None else ("pass" if metrics.reproducible else "fail")
        recovery = "n/a" if metrics.recovery_batches is None else f"{metrics.recovery_batches} batch(es)"
        cost = f"{metrics.cost.total_per_day:.6f}" if metrics.cost else "n/a"
        table.add_row(
            name,
            format_duration(metrics.latency_ms_mean / 1000),
            "n/a" if containment is None else f"{float(containment):.3f}",
            reproducible,
            cost,
            recovery,
        )
    return table


# --------------------------------------------------------------------------- #
# Harness
# --------------------------------------------------------------------------- #
def _prepare(workspace: Workspace, strategy: Pattern, hot_fraction: Fraction) -> PipelineSpec:
    """Register the contract, source and template one strategy needs; return its pipeline."""
    ContractRegistry(workspace).put(bench_contract())
    raw = RawZone(workspace)
    engine = TransformEngine(workspace)
    if strategy is not Pattern.ETLT_PP:
        raw.register_source(
            SourceRegistration(BENCH_SOURCE, "ndjson", f"landing/{BENCH_SOURCE}/{{date}}.ndjson", BENCH_CONTRACT)
        )
    if strategy is Pattern.ETLT_PP:
        engine.register_template(bench_template("table", BENCH_TABLE))
        return PipelineSpec(
            pipeline_id="bench_etlt",
            pattern=strategy,
            format="ndjson",
            contract_name=BENCH_CONTRACT,
            target_table=BENCH_TABLE,
            key_fields=("transaction_id",),
            templates=(BENCH_TEMPLATE,),
            on_hard_violation=HardViolationPolicy.QUARANTINE_AND_CONTINUE,
        )
    if strategy is Pattern.ELTL_PP:
        engine.register_template(bench_template("raw", BENCH_SOURCE))
        return PipelineSpec(
            pipeline_id="bench_eltl",
            pattern=strategy,
            source=BENCH_SOURCE,
            contract_name=BENCH_CONTRACT,
            templates=(BENCH_TEMPLATE,),
            tiering=TieringPolicy(hot_fraction=hot_fraction),
        )
    engine.register_template(bench_template("table", BENCH_TABLE))
    return PipelineSpec(
        pipeline_id="bench_baseline",
        pattern=strategy,
        source=BENCH_SOURCE,
        target_table=BENCH_TABLE,
        key_fields=("transaction_id",),
        templates=(BENCH_TEMPLATE,),
    )


def _quarantined_keys(report: RunReport, workspace: Workspace) -> set[str]:
    """Record keys the run's contract gate quarantined."""
    if not report.quarantine:
        return set()
    return {line["record_key"] for line in QuarantineStore(workspace).read(report.batch_id)}


def _flagged_keys(workspace: Workspace, batch: FixtureBatch) -> set[str]:
    """Record keys the current contract rejects, without blocking anything (monitoring mode)."""
    contract = ContractRegistry(workspace).get(BENCH_CONTRACT)
    verdict = evaluate_batch(read_records(batch.payload, "ndjson", source=batch.batch_id), contract, batch.batch_id)
    return {v.record_key for v in verdict.quarantined}


def _is_green(report: RunReport, batch: FixtureBatch) -> bool:
    """A run is green when it succeeded and rejected nothing beyond the labeled dirty rows."""
    if report.status is not RunStatus.SUCCEEDED:
        return False
    if report.verdict is None:
        return True
    return int(report.verdict["quarantined"]) <= len(batch.dirty_rows)


def _check_replays(engine: TransformEngine) -> tuple[bool, int]:
    checked = 0
    for dataset_id in engine.datasets():
        for version in engine.versions(dataset_id):
            if engine.get_version(dataset_id, version).replay_of is not None:
                continue
            try:
                engine.replay(dataset_id, version)
            except DigestMismatch as exc:
                _logger.warning(f"Replay of {dataset_id} v{version} failed: {exc}")
                return False, checked + 1
            checked += 1
    return True, checked


def _run_strategy(
    workspace: Workspace, strategy: Pattern, fixture: Fixture, hot_fraction: Fraction
) -> StrategyMetrics:
    spec = _prepare(workspace, strategy, hot_fraction)
    runner = PipelineRunner(workspace)
    registry = ContractRegistry(workspace)
    metrics = StrategyMetrics(strategy.value, total_dirty=len(fixture.dirty_keys))
    hotfixed = strategy is Pattern.ELT_BASELINE
    change = fixture.schema_change_batch
    recovery_started: Optional[float] = None

    for index, batch in enumerate(fixture.batches):
        flagged: set[str] = set()
        if strategy is Pattern.ELTL_PP:
            flagged = _flagged_keys(workspace, batch) & batch.dirty_keys
        started = time.perf_counter()
        if change is not None and index == change:
            recovery_started = started
        report = runner.run(spec, batch.payload, batch.at, batch_id=batch.batch_id)
        elapsed = (time.perf_counter() - started) * 1000
        metrics.runs += 1
        metrics.statuses[report.status.value] = metrics.statuses.get(report.status.value, 0) + 1
        metrics.latency_ms_total += elapsed
        metrics.latency_ms_max = max(metrics.latency_ms_max, elapsed)
        for stage, ms in report.stages.items():
            metrics.stage_ms[stage] = metrics.stage_ms.get(stage, 0.0) + ms

        if strategy is Pattern.ETLT_PP:
            caught = _quarantined_keys(report, workspace) & batch.dirty_keys
            metrics.intercepted += len(caught)
            metrics.detected_count += len(caught)
        elif strategy is Pattern.ELTL_PP:
            metrics.detected_count += len(flagged)

        if recovery_started is not None and metrics.recovery_batches is None:
            if _is_green(report, batch):
                metrics.recovery_batches = index - (change or 0)
                metrics.recovery_ms = round((time.perf_counter() - recovery_started) * 1000, 3)
            elif not hotfixed:
                registry.put(hotfix_contract(registry.get(BENCH_CONTRACT)))
                hotfixed = True
                _logger.info(f"{strategy.value}: published contract hotfix after batch {batch.batch_id}")

    raw = RawZone(workspace)
    engine = TransformEngine(workspace)
    rates = load_cost_rates(workspace)
    bytes_per_gb = workspace.settings.bytes_per_gb
    if strategy is Pattern.ETLT_PP:
        if VersionedTable.exists(workspace, BENCH_TABLE):
            table = VersionedTable.open(workspace, BENCH_TABLE)
            metrics.hot_bytes = sum(path.stat().st_size for path in table.segment_files())
        metrics.reproducible, metrics.replays_checked = _check_replays(engine)
    elif strategy is Pattern.ELTL_PP:
        metrics.hot_bytes, metrics.cool_bytes = raw.tier_totals()
        metrics.reproducible, metrics.replays_checked = _check_replays(engine)
    else:
        metrics.hot_bytes = sum(s.size_bytes for s in raw.segments())
        metrics.reproducible = False
        metrics.notes.append("last-write-wins outputs keep no pinned state to replay")
        if change is not None:
            metrics.notes.append("no contract: the schema change is never detected")
    metrics.cost = estimate_cost(metrics.hot_bytes, metrics.cool_bytes, rates, bytes_per_gb)
    if change is not None and metrics.recovery_batches is None and strategy is not Pattern.ELT_BASELINE:
        metrics.notes.append("no green batch after the schema change")
    return metrics


def run_benchmark(
    workspace: Workspace,
    fixture: Fixture,
    strategies: Sequence[str] = STRATEGIES,
    hot_fraction: Any = Fraction(1, 10),
    at: Any = None,
) -> BenchReport:
    """Run each strategy over the same fixture and write ``bench/<timestamp>.json``.

    Raises
    ------
    FixtureError
        If the fixture has no batches or a strategy name is unknown.
    """
    if not fixture.batches:
        raise FixtureError("fixture has no batches")
    unknown = sorted(set(strategies) - set(STRATEGIES))
    if unknown or not strategies:
        raise FixtureError(f"unknown strategies: {', '.join(unknown) or '<none given>'}")
    stamp_at = parse_timestamp(at) if at is not None else utc_now()
    stamp = stamp_at.strftime("%Y%m%dT%H%M%SZ")
    fraction = Fraction(str(hot_fraction))

    results: dict[str, StrategyMetrics] = {}
    for name in STRATEGIES:
        if name not in strategies:
            continue
        child = workspace.child(f"bench/{stamp}/{name}").init()
        _logger.info(f"Benchmark {stamp}: running {name} over {len(fixture.batches)} batch(es)")
        results[name] = _run_strategy(child, Pattern(name), fixture, fraction)

    report = BenchReport(
        at=stamp_at,
        fixture={
            "rows": fixture.rows,
            "batches": len(fixture.batches),
            "dirty_fraction": str(Decimal(str(fixture.dirty_fraction))),
            "dirty_rows": len(fixture.dirty_keys),
            "schema_change_batch": fixture.schema_change_batch,
            "seed": fixture.seed,
            "hot_fraction": str(fraction),
        },
        payload_digests=fixture.digests,
        strategies=results,
    )
    write_json(workspace.path("bench", f"{stamp}.json"), report.to_dict())
    return report
