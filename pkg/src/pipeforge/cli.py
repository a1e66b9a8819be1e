"""Command-line interface.

Exit codes: 0 on success, 2 when the data needs attention (a contract halt or an
SLO breach), 1 on errors and usage mistakes. JSON goes to stdout, newline-terminated;
diagnostics and logs go to stderr.
"""

from __future__ import annotations

import argparse
import sys
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Any, NoReturn, Optional

from rich.console import Console
from rich.table import Table

from . import __version__
from .bench import STRATEGIES, generate_fixture, render_bench_table, run_benchmark
from .contract import ContractRegistry, lint_contract, parse_contract
from .errors import InvalidArgument, PipeforgeError
from .logging import get_logger, setup_logging
from .pipeline import Pattern, PipelineRunner, PipelineStore, RunStatus, load_pipeline_spec
from .quality import (
    SLI_NAMES,
    AlertSink,
    QualityCheck,
    SliLog,
    SloStore,
    check_dataset,
    daily_transaction_template,
    parse_slo,
)
from .raw_layer import RawZone, TieringPolicy, estimate_cost, estimate_cost_gb, load_cost_rates, parse_source_registration
from .semantic import MetricStore, parse_metric
from .transform import TransformEngine, parse_template
from .utils import canonical_json, format_time_ago, pretty_json, read_bytes, read_text, sanitize_id
from .validation import INPUT_FORMATS, Decision, QuarantineStore, evaluate_batch, read_records
from .values import coerce, parse_timestamp, utc_now
from .versioned_store import VersionedTable
from .workspace import Workspace

_logger = get_logger()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ATTENTION = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------- #
# Output
# --------------------------------------------------------------------------- #
def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (dict, list)):
        return canonical_json(value)
    return str(value)


def _table(value: Any, title: Optional[str] = None) -> Table:
    table = Table(title=title)
    if isinstance(value, list) and value and all(isinstance(item, Mapping) for item in value):
        columns: list[str] = []
        for item in value:
            columns.extend(k for k in item if k not in columns)
        for column in columns:
            table.add_column(column)
        for item in value:
            table.add_row(*(_cell(item.get(column)) for column in columns))
    elif isinstance(value, Mapping):
        table.add_column("field")
        table.add_column("value")
        for key, item in value.items():
            table.add_row(str(key), _cell(item))
    else:
        table.add_column("value")
        for item in value if isinstance(value, list) else [value]:
            table.add_row(_cell(item))
    return table


def _emit(args: argparse.Namespace, value: Any, title: Optional[str] = None, table: Optional[Table] = None) -> None:
    if args.output == "table":
        Console().print(table if table is not None else _table(value, title))
    else:
        sys.stdout.write(pretty_json(value) + "\n")


def _format_of(path: Path, given: Optional[str]) -> str:
    if given:
        return given
    suffix = path.suffix.lower().lstrip(".")
    if suffix == "jsonl":
        return "ndjson"
    if suffix not in INPUT_FORMATS:
        raise InvalidArgument(f"cannot infer the format of {path.name}; pass --format")
    return suffix


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #
def cmd_init(ws: Workspace, args: argparse.Namespace) -> int:
    _emit(args, {"workspace": str(ws.root), "settings": ws.settings.to_dict()})
    return EXIT_OK


def cmd_contract_put(ws: Workspace, args: argparse.Namespace) -> int:
    contract = parse_contract(read_bytes(Path(args.file)))
    ref = ContractRegistry(ws).put(contract)
    _emit(args, {**ref.to_dict(), "lint": [issue.to_dict() for issue in lint_contract(contract)]})
    return EXIT_OK


def cmd_contract_get(ws: Workspace, args: argparse.Namespace) -> int:
    registry = ContractRegistry(ws)
    if args.name is None:
        _emit(args, [{"name": name, "versions": registry.versions(name)} for name in registry.names()], title="contracts")
    else:
        _emit(args, registry.get(args.name, args.version).to_dict())
    return EXIT_OK


def cmd_contract_lint(ws: Workspace, args: argparse.Namespace) -> int:
    path = Path(args.target)
    if path.is_file():
        contract = parse_contract(read_bytes(path))
    else:
        contract = ContractRegistry(ws).get(args.target, args.version)
    _emit(args, [issue.to_dict() for issue in lint_contract(contract)], title=f"lint {contract.name}")
    return EXIT_OK


def cmd_validate(ws: Workspace, args: argparse.Namespace) -> int:
    path = Path(args.batch)
    batch_id = args.batch_id or sanitize_id(path.stem)
    contract = ContractRegistry(ws).get(args.contract, args.version)
    records = read_records(read_bytes(path), _format_of(path, args.format), source=batch_id)
    verdict = evaluate_batch(records, contract, batch_id)
    result = verdict.to_dict()
    if args.quarantine and verdict.quarantined:
        result["quarantine"] = QuarantineStore(ws).write(verdict, records).to_dict()
    _emit(args, result)
    return EXIT_ATTENTION if verdict.decision is Decision.HALT else EXIT_OK


def cmd_ingest_raw(ws: Workspace, args: argparse.Namespace) -> int:
    zone = RawZone(ws)
    load_date = args.date or utc_now().date()
    path = Path(args.file) if args.file else zone.get_source(args.source).resolve_path(load_date, Path.cwd())
    segment = zone.ingest_raw(args.source, read_bytes(path), load_date)
    _emit(args, segment.to_dict())
    return EXIT_OK


def cmd_ingest_pipeline(ws: Workspace, args: argparse.Namespace) -> int:
    spec = PipelineStore(ws).get(args.pipeline)
    expected = Pattern(args.pattern)
    if spec.pattern is not expected:
        raise InvalidArgument(f"pipeline {spec.pipeline_id} is {spec.pattern.value}, not {expected.value}")
    at = parse_timestamp(args.at) if args.at else utc_now()
    report = PipelineRunner(ws).run(spec, read_bytes(Path(args.file)), at, batch_id=args.batch_id, now=args.now)
    _emit(args, report.to_dict())
    if report.status is RunStatus.FAILED:
        return EXIT_ERROR
    if report.status is RunStatus.HALTED_ON_CONTRACT or report.alerts:
        return EXIT_ATTENTION
    return EXIT_OK


def cmd_query_asof(ws: Workspace, args: argparse.Namespace) -> int:
    table = VersionedTable.open(ws, args.table)
    rows = [{**key, **payload} for key, payload in table.query_asof(args.at)]
    _emit(args, rows, title=f"{args.table} as of {args.at}")
    return EXIT_OK


def cmd_history(ws: Workspace, args: argparse.Namespace) -> int:
    table = VersionedTable.open(ws, args.table)
    datatypes = {spec.name: spec.datatype for spec in table.fields or ()}
    if len(args.key) != len(table.key_fields):
        raise InvalidArgument(f"table {args.table} is keyed on {', '.join(table.key_fields)}")
    key = [coerce(value, datatypes.get(name, "text")) for name, value in zip(table.key_fields, args.key)]
    chain = table.history(key)
    _emit(args, [row.to_dict() for row in chain], title=f"{args.table} history")
    return EXIT_OK


def cmd_table_create(ws: Workspace, args: argparse.Namespace) -> int:
    fields = ContractRegistry(ws).get(args.contract).fields if args.contract else None
    table = VersionedTable.create(ws, args.name, args.key, fields)
    _emit(args, {"table": table.name, "key_fields": table.key_fields})
    return EXIT_OK


def _pairs(items: Sequence[str], what: str) -> dict[str, str]:
    result = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise InvalidArgument(f"{what} must look like name=value, got {item!r}")
        result[name] = value
    return result


def cmd_transform_register(ws: Workspace, args: argparse.Namespace) -> int:
    template = parse_template(read_bytes(Path(args.file)))
    digest = TransformEngine(ws).register_template(template)
    _emit(args, {"template_id": template.template_id, "digest": digest})
    return EXIT_OK


def cmd_transform_run(ws: Workspace, args: argparse.Namespace) -> int:
    engine = TransformEngine(ws)
    pins: dict[str, Any] = {}
    if args.asof:
        pins.update(engine.pins_for_asof(engine.get_template(args.template), args.asof))
    pins.update(_pairs(args.pin, "--pin"))
    pins.update({k: tuple(v.split(",")) if v else () for k, v in _pairs(args.segments, "--segments").items()})
    result = engine.run_transform(args.template, pins, dataset_id=args.dataset)
    _emit(args, result.to_dict())
    return EXIT_OK


def cmd_transform_replay(ws: Workspace, args: argparse.Namespace) -> int:
    _emit(args, TransformEngine(ws).replay(args.dataset, args.version).to_dict())
    return EXIT_OK


def cmd_metric_define(ws: Workspace, args: argparse.Namespace) -> int:
    _emit(args, MetricStore(ws).define(parse_metric(read_bytes(Path(args.file)))).to_dict())
    return EXIT_OK


def cmd_metric_materialize(ws: Workspace, args: argparse.Namespace) -> int:
    result = MetricStore(ws).materialize(args.metric, args.asof, args.version)
    _emit(args, result.to_dict())
    return EXIT_OK


def cmd_metric_catalog(ws: Workspace, args: argparse.Namespace) -> int:
    _emit(args, [entry.to_dict() for entry in MetricStore(ws).list_catalog()], title="metric catalog")
    return EXIT_OK


def _quality_table(check: QualityCheck) -> Table:
    sample = check.sample
    table = Table(title=f"quality of {sample.dataset} at {sample.to_dict()['at']}")
    for column in ("sli", "value", "alert"):
        table.add_column(column)
    breached = {alert.sli: alert for alert in check.alerts}
    for sli in SLI_NAMES:
        value = sample.value(sli)
        if value is None:
            text = "not measured"
        elif sli == "freshness":
            text = f"{value}s (latest batch {format_time_ago(float(value))})"
        else:
            text = f"{float(value):.4f}"
        alert = breached.get(sli)
        table.add_row(sli, text, alert.suggested_action.value if alert else "")
    return table


def cmd_quality_check(ws: Workspace, args: argparse.Namespace) -> int:
    check = check_dataset(ws, args.dataset, args.now)
    _emit(args, check.to_dict(), table=_quality_table(check))
    return EXIT_ATTENTION if check.breached else EXIT_OK


def cmd_quality_report(ws: Workspace, args: argparse.Namespace) -> int:
    samples = SliLog(ws).history(args.dataset, args.start, args.end)
    if args.output == "table":
        _emit(args, [s.to_dict() for s in samples], title=f"SLI history of {args.dataset}")
    else:
        _emit(args, {"samples": [s.to_dict() for s in samples], "alerts": AlertSink(ws).read(args.dataset)})
    return EXIT_OK


def cmd_slo_put(ws: Workspace, args: argparse.Namespace) -> int:
    if args.file:
        config = parse_slo(read_bytes(Path(args.file)))
        if args.dataset and args.dataset != config.dataset:
            raise InvalidArgument(f"file configures {config.dataset}, not {args.dataset}")
    elif args.dataset:
        config = daily_transaction_template(args.dataset)
    else:
        raise InvalidArgument("slo put needs a file or --dataset")
    _emit(args, SloStore(ws).put(config).to_dict())
    return EXIT_OK


def cmd_tier_apply(ws: Workspace, args: argparse.Namespace) -> int:
    policy = TieringPolicy(
        hot_window_days=args.hot_window_days, hot_fraction=args.hot_fraction, applies_to=args.applies_to
    )
    report = RawZone(ws).apply_tiering(policy, args.now or utc_now())
    _emit(args, report.to_dict())
    return EXIT_OK


def cmd_cost_estimate(ws: Workspace, args: argparse.Namespace) -> int:
    rates = load_cost_rates(ws)
    if args.compute is not None:
        rates = rates.with_compute(args.compute)
    if args.inventory:
        hot, cool = RawZone(ws).tier_totals()
        report = estimate_cost(hot, cool, rates, ws.settings.bytes_per_gb)
    else:
        if args.hot_gb is None and args.cool_gb is None:
            raise InvalidArgument("cost estimate needs --hot-gb/--cool-gb or --inventory")
        report = estimate_cost_gb(args.hot_gb or "0", args.cool_gb or "0", rates)
    result = report.to_dict()
    _emit(args, result, table=_table(result["rounded"], title="cost per day"))
    return EXIT_OK


def cmd_bench_run(ws: Workspace, args: argparse.Namespace) -> int:
    fixture = generate_fixture(
        rows=args.rows,
        dirty_fraction=args.dirty_fraction,
        batches=args.batches,
        schema_change_batch=args.schema_change_batch,
        seed=args.seed,
    )
    report = run_benchmark(ws, fixture, args.strategies, hot_fraction=args.hot_fraction)
    _emit(args, report.to_dict(), table=render_bench_table(report))
    return EXIT_OK


def cmd_source_register(ws: Workspace, args: argparse.Namespace) -> int:
    reg = RawZone(ws).register_source(parse_source_registration(read_bytes(Path(args.file))))
    _emit(args, reg.to_dict())
    return EXIT_OK


def cmd_pipeline_put(ws: Workspace, args: argparse.Namespace) -> int:
    spec = PipelineStore(ws).put(load_pipeline_spec(read_text(Path(args.file)), ws))
    _emit(args, spec.to_dict())
    return EXIT_OK


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #
def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pipeforge", description="Contract-gated, replayable batch pipelines on local storage.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--workspace", help=f"workspace root (env {Workspace.ENV_VAR} wins; default ./pipeforge-data)")
    parser.add_argument("--output", choices=("json", "table"), default="json", help="output format")
    parser.add_argument("--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"))
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = commands.add_parser("init", help="create the workspace layout")
    p.set_defaults(func=cmd_init)

    # contract
    contract = commands.add_parser("contract", help="data contracts").add_subparsers(dest="action", required=True)
    p = contract.add_parser("put", help="register a new contract version")
    p.add_argument("file")
    p.set_defaults(func=cmd_contract_put)
    p = contract.add_parser("get", help="show a contract (latest version by default); list names without one")
    p.add_argument("name", nargs="?")
    p.add_argument("--version", type=int)
    p.set_defaults(func=cmd_contract_get)
    p = contract.add_parser("lint", help="advisory checks for a contract file or registered name")
    p.add_argument("target")
    p.add_argument("--version", type=int)
    p.set_defaults(func=cmd_contract_lint)

    # validate
    p = commands.add_parser("validate", help="evaluate a batch file against a contract")
    p.add_argument("batch")
    p.add_argument("--contract", required=True)
    p.add_argument("--version", type=int)
    p.add_argument("--format", choices=INPUT_FORMATS)
    p.add_argument("--batch-id")
    p.add_argument("--quarantine", action="store_true", help="write quarantined records to the quarantine store")
    p.set_defaults(func=cmd_validate)

    # ingest
    ingest = commands.add_parser("ingest", help="land or run batches").add_subparsers(dest="action", required=True)
    p = ingest.add_parser("raw", help="land a payload in the raw zone")
    p.add_argument("file", nargs="?", help="payload file (default: the source path pattern for --date)")
    p.add_argument("--source", required=True)
    p.add_argument("--date", help="load date (default: today, UTC)")
    p.set_defaults(func=cmd_ingest_raw)
    for action, pattern in (("etlt", Pattern.ETLT_PP), ("eltl", Pattern.ELTL_PP), ("baseline", Pattern.ELT_BASELINE)):
        p = ingest.add_parser(action, help=f"run a batch through a {pattern.value} pipeline")
        p.add_argument("file")
        p.add_argument("--pipeline", required=True)
        p.add_argument("--at", help="load timestamp (default: now)")
        p.add_argument("--now", help="clock for freshness and tiering (default: --at)")
        p.add_argument("--batch-id")
        p.set_defaults(func=cmd_ingest_pipeline, pattern=pattern.value)

    # query / history / table
    query = commands.add_parser("query", help="read versioned tables").add_subparsers(dest="action", required=True)
    p = query.add_parser("asof", help="rows visible at a timestamp")
    p.add_argument("--table", required=True)
    p.add_argument("--at", required=True)
    p.set_defaults(func=cmd_query_asof)
    p = commands.add_parser("history", help="version chain of one key")
    p.add_argument("--table", required=True)
    p.add_argument("--key", required=True, action="append", help="key value (repeat for composite keys)")
    p.set_defaults(func=cmd_history)
    table = commands.add_parser("table", help="versioned tables").add_subparsers(dest="action", required=True)
    p = table.add_parser("create", help="create an empty versioned table")
    p.add_argument("--name", required=True)
    p.add_argument("--key", required=True, action="append")
    p.add_argument("--contract", help="declare the fields of this contract")
    p.set_defaults(func=cmd_table_create)

    # transform
    transform = commands.add_parser("transform", help="templates").add_subparsers(dest="action", required=True)
    p = transform.add_parser("register", help="register a transform template")
    p.add_argument("file")
    p.set_defaults(func=cmd_transform_register)
    p = transform.add_parser("run", help="run a template over pinned inputs")
    p.add_argument("--template", required=True)
    p.add_argument("--asof", help="pin every input to its state at this timestamp")
    p.add_argument("--pin", action="append", default=[], help="input=timestamp")
    p.add_argument("--segments", action="append", default=[], help="input=segment_id,segment_id")
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_transform_run)
    p = transform.add_parser("replay", help="re-execute a stored curated version")
    p.add_argument("--dataset", required=True)
    p.add_argument("--version", required=True, type=int)
    p.set_defaults(func=cmd_transform_replay)

    # metric
    metric = commands.add_parser("metric", help="semantic layer").add_subparsers(dest="action", required=True)
    p = metric.add_parser("define", help="define a metric version")
    p.add_argument("file")
    p.set_defaults(func=cmd_metric_define)
    p = metric.add_parser("materialize", help="materialize a metric as of a timestamp")
    p.add_argument("--metric", required=True)
    p.add_argument("--asof", required=True)
    p.add_argument("--version", type=int)
    p.set_defaults(func=cmd_metric_materialize)
    p = metric.add_parser("catalog", help="list defined metrics")
    p.set_defaults(func=cmd_metric_catalog)

    # quality / slo
    quality = commands.add_parser("quality", help="SLIs and SLOs").add_subparsers(dest="action", required=True)
    p = quality.add_parser("check", help="evaluate the latest sample against the SLOs")
    p.add_argument("--dataset", required=True)
    p.add_argument("--now")
    p.set_defaults(func=cmd_quality_check)
    p = quality.add_parser("report", help="SLI history and alerts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--start")
    p.add_argument("--end")
    p.set_defaults(func=cmd_quality_report)
    slo = commands.add_parser("slo", help="SLO configurations").add_subparsers(dest="action", required=True)
    p = slo.add_parser("put", help="store an SLO config (the daily transaction template when no file is given)")
    p.add_argument("file", nargs="?")
    p.add_argument("--dataset")
    p.set_defaults(func=cmd_slo_put)

    # raw zone
    tier = commands.add_parser("tier", help="raw-zone tiering").add_subparsers(dest="action", required=True)
    p = tier.add_parser("apply", help="run a tiering pass")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--hot-window-days", type=int)
    group.add_argument("--hot-fraction")
    p.add_argument("--applies-to", default="all")
    p.add_argument("--now")
    p.set_defaults(func=cmd_tier_apply)
    cost = commands.add_parser("cost", help="storage cost model").add_subparsers(dest="action", required=True)
    p = cost.add_parser("estimate", help="daily cost of an inventory")
    p.add_argument("--hot-gb")
    p.add_argument("--cool-gb")
    p.add_argument("--compute", help="compute cost per day")
    p.add_argument("--inventory", action="store_true", help="use the raw zone's current tier totals")
    p.set_defaults(func=cmd_cost_estimate)
    source = commands.add_parser("source", help="raw sources").add_subparsers(dest="action", required=True)
    p = source.add_parser("register", help="register a raw source")
    p.add_argument("file")
    p.set_defaults(func=cmd_source_register)

    # pipelines / bench
    pipeline = commands.add_parser("pipeline", help="pipeline specs").add_subparsers(dest="action", required=True)
    p = pipeline.add_parser("put", help="store a pipeline spec")
    p.add_argument("file")
    p.set_defaults(func=cmd_pipeline_put)
    bench = commands.add_parser("bench", help="strategy benchmark").add_subparsers(dest="action", required=True)
    p = bench.add_parser("run", help="run the benchmark on a synthetic fixture")
    p.add_argument("--rows", type=int, default=5000)
    p.add_argument("--dirty-fraction", type=float, default=0.1)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--schema-change-batch", type=int)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--hot-fraction", default="0.1")
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES, default=list(STRATEGIES))
    p.set_defaults(func=cmd_bench_run)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.log_level:
        setup_logging(args.log_level)
    try:
        ws = Workspace.resolve(args.workspace).init()
        return int(args.func(ws, args))
    except PipeforgeError as exc:
        sys.stderr.write(f"pipeforge: error: {type(exc).__name__}: {exc}\n")
        _logger.debug("command failed", exc_info=True)
        return EXIT_ERROR


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    return main(argv)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
