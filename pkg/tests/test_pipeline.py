"""Tests for pipeline specs and the three run patterns."""

import json
import logging
from fractions import Fraction

import pytest

from pipeforge.errors import DanglingReference, InvalidArgument, InvalidSpec, NotFound, ParseError
from pipeforge.pipeline import (
    Pattern,
    PipelineRunner,
    PipelineSpec,
    PipelineStore,
    RunStatus,
    RunStore,
    load_pipeline_spec,
    resolve_references,
    run_elt_baseline,
    run_eltl_batch,
    run_etlt_batch,
)
from pipeforge.quality import BatchLog, SliLog, SloConfig, daily_transaction_template
from pipeforge.raw_layer import RawZone, SourceRegistration, TieringPolicy
from pipeforge.semantic import Measure, MetricDef, MetricStore
from pipeforge.transform import TransformEngine, TransformTemplate
from pipeforge.validation import QuarantineStore
from pipeforge.versioned_store import LastWriteWinsTable, VersionedTable
from pipeforge.workspace import Settings, Workspace

CLEAN_BATCH = b"client_id,amount,email\n2001,5,a@example.com\n2002,7,b@example.com\n"
AT = "2025-08-28T06:00:00Z"


def _etlt(**kwargs):
    args = {
        "pipeline_id": "customer_etlt",
        "pattern": "etlt_pp",
        "contract_name": "customer_transactions",
        "target_table": "customer_tx",
        "key_fields": ("client_id",),
    }
    args.update(kwargs)
    return PipelineSpec(**args)


def _eltl(**kwargs):
    args = {
        "pipeline_id": "customer_eltl",
        "pattern": "eltl_pp",
        "source": "txn_raw",
        "contract_name": "customer_transactions",
        "tiering": TieringPolicy(hot_window_days=90),
    }
    args.update(kwargs)
    return PipelineSpec(**args)


def _total_template(template_id, kind, ref):
    return TransformTemplate.from_dict(
        {
            "template_id": template_id,
            "inputs": [
                {
                    "name": "tx",
                    "kind": kind,
                    "ref": ref,
                    "fields": [{"name": "client_id", "datatype": "text"}, {"name": "amount", "datatype": "decimal"}],
                }
            ],
            "plan": [
                {"op": "filter", "predicate": "amount >= 0"},
                {"op": "group_by", "keys": [], "aggregates": [{"fn": "sum", "field": "amount", "as": "total"}]},
            ],
            "output_schema": [{"name": "total", "datatype": "decimal"}],
        }
    )


@pytest.fixture
def runner(workspace, registry):
    return PipelineRunner(workspace)


@pytest.fixture
def raw_source(workspace):
    RawZone(workspace).register_source(SourceRegistration("txn_raw", "csv", "landing/txn/{date}.csv"))
    return "txn_raw"


class TestPipelineSpec:
    """Tests for spec documents and reference resolution."""

    def test_round_trip(self):
        """to_dict output loads back to an equal spec."""
        spec = _etlt(
            slo=daily_transaction_template("customer_tx"),
            on_hard_violation="quarantine_and_continue",
            templates=("daily_totals",),
        )
        assert load_pipeline_spec(json.dumps(spec.to_dict())) == spec
        assert spec.dataset == "customer_tx"

    def test_contract_shorthand(self):
        """A bare contract name means the latest version."""
        spec = load_pipeline_spec(
            '{"pipeline_id": "p", "pattern": "etlt_pp", "contract": "customer_transactions",'
            ' "target_table": "t", "key_fields": ["client_id"]}'
        )
        assert (spec.contract_name, spec.contract_version) == ("customer_transactions", None)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"contract_name": None},
            {"target_table": None},
            {"key_fields": ()},
            {"pattern": "eltl_pp", "source": "txn_raw"},
            {"pattern": "eltl_pp", "tiering": TieringPolicy(hot_window_days=30)},
            {"pattern": "elt_baseline"},
            {"pipeline_id": "bad id"},
            {"format": "xml"},
        ],
    )
    def test_mandatory_parts(self, kwargs):
        """Each pattern names what it cannot run without."""
        with pytest.raises(InvalidSpec):
            _etlt(**kwargs)

    def test_unknown_pattern(self):
        """Unknown patterns fail the document schema."""
        with pytest.raises(InvalidSpec):
            load_pipeline_spec('{"pipeline_id": "p", "pattern": "etl"}')

    def test_malformed(self):
        """Broken JSON is a parse error."""
        with pytest.raises(ParseError):
            load_pipeline_spec('{"pipeline_id": ')

    def test_bad_nested_policy(self):
        """Nested documents that do not validate surface as InvalidSpec."""
        data = _eltl().to_dict()
        data["tiering"] = {"hot_window_days": 30, "hot_fraction": "0.5"}
        with pytest.raises(InvalidSpec):
            load_pipeline_spec(json.dumps(data))

    def test_dangling_references(self, workspace, registry, raw_source):
        """Every named artifact must exist in the workspace."""
        resolve_references(_etlt(), workspace)
        resolve_references(_eltl(), workspace)
        cases = [
            _etlt(contract_name="orders"),
            _etlt(contract_version=2),
            _eltl(source="clicks"),
            _etlt(templates=("nope",)),
            _etlt(metrics=("nope",)),
            _etlt(slo="other_dataset"),
        ]
        for spec in cases:
            with pytest.raises(DanglingReference):
                resolve_references(spec, workspace)

    def test_store(self, workspace, registry):
        """Stored specs read back equal and are resolved again on read."""
        store = PipelineStore(workspace)
        store.put(_etlt())
        assert store.get("customer_etlt") == _etlt()
        with pytest.raises(NotFound):
            store.get("nope")
        with pytest.raises(DanglingReference):
            store.put(_etlt(pipeline_id="other", templates=("nope",)))


class TestEtlt:
    """Contract-first runs."""

    def test_golden_batch_halts(self, runner, workspace, customer_batch, caplog):
        """One negative amount halts the batch before the table is touched."""
        with caplog.at_level(logging.WARNING, logger="pipeforge"):
            report = runner.run(_etlt(), customer_batch, AT)
        assert report.status is RunStatus.HALTED_ON_CONTRACT
        assert report.halted
        assert report.verdict["total_hard_violations"] == 1
        assert report.verdict["decision"] == "halt"
        assert report.quarantine["records"] == 1
        assert not VersionedTable.exists(workspace, "customer_tx")
        assert report.versioning is None
        assert report.sli is None
        assert set(report.stages) == {"E", "C", "T1"}
        assert "halted" in caplog.text

    def test_halted_batch_is_logged(self, runner, workspace, customer_batch):
        """Halted batches still count towards adherence and keep their quarantine file."""
        report = runner.run(_etlt(), customer_batch, AT, batch_id="b-0828")
        [summary] = BatchLog(workspace).read("customer_tx")
        assert summary.batch_id == "b-0828"
        assert summary.total_hard_violations == 1
        [line] = QuarantineStore(workspace).read("b-0828")
        assert line["record"]["client_id"] == "1002"
        stored = RunStore(workspace).get(report.run_id)
        assert stored["status"] == "halted_on_contract"
        assert RunStore(workspace).list() == [report.run_id]

    def test_quarantine_and_continue(self, runner, workspace, customer_batch):
        """The passing records load; SLIs and alerts follow."""
        spec = _etlt(on_hard_violation="quarantine_and_continue", slo=daily_transaction_template("customer_tx"))
        report = runner.run(spec, customer_batch, AT)
        assert report.status is RunStatus.SUCCEEDED
        assert report.versioning["inserted"] == 4
        table = VersionedTable.open(workspace, "customer_tx")
        assert sorted(key["client_id"] for key, _ in table.current()) == ["1001", "1003", "1004", "1005"]
        assert report.sli["accuracy"] == "4/5"
        assert report.sli["adherence"] == "0"
        assert report.sli["freshness_seconds"] == 0
        assert [a["sli"] for a in report.alerts] == ["accuracy", "adherence"]
        assert SliLog(workspace).latest("customer_tx").accuracy == Fraction(4, 5)

    def test_settings_policy(self, workspace, registry, customer_batch):
        """Without a spec policy, the workspace setting applies."""
        configured = Workspace(workspace.root, Settings(on_hard_violation="quarantine_and_continue"))
        report = run_etlt_batch(configured, _etlt(), customer_batch, AT)
        assert report.status is RunStatus.SUCCEEDED

    def test_clean_batch(self, runner):
        """A clean batch loads fully and stays within its SLOs."""
        spec = _etlt(slo=SloConfig("customer_tx", min_accuracy="0.99", min_adherence="0.9"))
        report = runner.run(spec, CLEAN_BATCH, AT, now="2025-08-28T08:00:00Z")
        assert report.status is RunStatus.SUCCEEDED
        assert report.sli["accuracy"] == "1"
        assert report.sli["freshness_seconds"] == 7200
        assert report.alerts == []

    def test_completeness_expectation(self, runner):
        """A count expectation feeds the completeness SLI."""
        spec = PipelineSpec.from_dict({**_etlt().to_dict(), "expectation": {"count": 4}})
        report = runner.run(spec, CLEAN_BATCH, AT)
        assert report.sli["completeness"] == "1/2"

    def test_templates_and_metrics(self, runner, workspace, customer_batch, customer_contract):
        """T2 runs templates and O materializes metrics, both pinned to the batch time."""
        VersionedTable.create(workspace, "customer_tx", ["client_id"], customer_contract.fields)
        engine = TransformEngine(workspace)
        engine.register_template(_total_template("customer_totals", "table", "customer_tx"))
        MetricStore(workspace, engine).define(
            MetricDef("client_count", {"table": "customer_tx"}, measure=Measure("count", alias="clients"))
        )
        spec = _etlt(
            on_hard_violation="quarantine_and_continue", templates=("customer_totals",), metrics=("client_count",)
        )
        report = runner.run(spec, customer_batch, AT)
        assert [d["kind"] for d in report.datasets] == ["template", "metric"]
        assert engine.read_rows("customer_totals") == [{"total": 90}]
        assert engine.read_rows("metric__client_count") == [{"clients": 4}]
        assert set(report.stages) == {"E", "C", "T1", "L", "T2", "O"}

    def test_failure_is_reported(self, workspace, customer_batch):
        """Errors inside a stage end the run as failed, with the report persisted."""
        report = PipelineRunner(workspace).run(_etlt(), customer_batch, AT)
        assert report.status is RunStatus.FAILED
        assert report.error.startswith("NotFound")
        assert RunStore(workspace).get(report.run_id)["error"] == report.error

    def test_wrong_entry_point(self, runner, customer_batch):
        """Pattern-specific entry points check the pipeline's pattern."""
        with pytest.raises(InvalidArgument):
            runner.run_eltl_batch(_etlt(), customer_batch, AT)

    def test_invalid_batch_id(self, runner, customer_batch):
        """Batch ids become file names."""
        with pytest.raises(InvalidArgument):
            runner.run(_etlt(), customer_batch, AT, batch_id="../escape")


class TestEltl:
    """Raw-first runs."""

    def test_golden_batch_lands(self, runner, workspace, raw_source, customer_batch):
        """The same dirty batch lands raw; validation only monitors."""
        report = run_eltl_batch(workspace, _eltl(), customer_batch, AT)
        assert report.status is RunStatus.SUCCEEDED
        assert report.verdict["total_hard_violations"] == 1
        assert report.quarantine is None
        segment_id = report.raw_segment["segment_id"]
        assert RawZone(workspace).read_segment(segment_id) == customer_batch
        assert report.sli["accuracy"] == "4/5"
        assert report.tiering is not None
        assert list(report.stages) == ["E+L1", "monitor", "T", "L2", "tier"]

    def test_raw_templates(self, runner, workspace, raw_source, customer_batch):
        """Templates over raw inputs read the segments landed by the batch time."""
        engine = TransformEngine(workspace)
        engine.register_template(_total_template("raw_totals", "raw", "txn_raw"))
        report = runner.run(_eltl(templates=("raw_totals",)), customer_batch, AT)
        [dataset] = report.datasets
        assert dataset["dataset_id"] == "raw_totals"
        assert engine.read_rows("raw_totals") == [{"total": 90}]
        [edge] = engine.lineage("raw_totals")
        assert edge.source.segments == (report.raw_segment["segment_id"],)

    def test_without_contract(self, runner, workspace, raw_source, customer_batch):
        """Without a contract no accuracy or adherence is measured."""
        report = runner.run(_eltl(contract_name=None), customer_batch, AT)
        assert report.verdict is None
        assert report.sli["accuracy"] is None
        assert "monitor" not in report.stages

    def test_tiering_moves_old_segments(self, runner, workspace, raw_source, customer_batch):
        """The tier stage moves segments older than the hot window."""
        spec = _eltl(tiering=TieringPolicy(hot_window_days=1))
        first = runner.run(spec, customer_batch, "2025-08-20T06:00:00Z")
        second = runner.run(spec, CLEAN_BATCH, AT)
        assert first.tiering["moved"] == []
        assert second.tiering["moved"] == [first.raw_segment["segment_id"]]
        tiers = {s.segment_id: s.tier for s in RawZone(workspace).segments("txn_raw")}
        assert tiers[first.raw_segment["segment_id"]] == "cool"
        assert tiers[second.raw_segment["segment_id"]] == "hot"


class TestEltBaseline:
    """Last-write-wins baseline runs."""

    def test_overwrites(self, workspace, raw_source, customer_batch):
        """Later batches overwrite earlier values; nothing is validated or versioned."""
        spec = PipelineSpec(
            "customer_elt", Pattern.ELT_BASELINE, source="txn_raw", target_table="tx_lww", key_fields=("client_id",)
        )
        first = run_elt_baseline(workspace, spec, customer_batch, "2025-08-27T06:00:00Z")
        run_elt_baseline(workspace, spec, b"client_id,amount,email\n1002,20,bob@example.com\n", AT)
        assert first.status is RunStatus.SUCCEEDED
        assert first.verdict is None
        table = LastWriteWinsTable(workspace, "tx_lww", ["client_id"])
        rows = {row["client_id"]: row["amount"] for row in table.rows()}
        assert rows["1002"] == "20"
        assert len(rows) == 5
        assert not VersionedTable.exists(workspace, "tx_lww")

    def test_templates_in_memory(self, workspace, raw_source, customer_batch):
        """Baseline templates run over the current table contents without persisting a version."""
        engine = TransformEngine(workspace)
        engine.register_template(_total_template("lww_totals", "table", "tx_lww"))
        spec = PipelineSpec(
            "customer_elt",
            "elt_baseline",
            source="txn_raw",
            target_table="tx_lww",
            key_fields=("client_id",),
            templates=("lww_totals",),
        )
        report = PipelineRunner(workspace).run_elt_baseline(spec, customer_batch, AT)
        [dataset] = report.datasets
        assert dataset["kind"] == "baseline"
        assert dataset["version"] is None
        assert engine.versions("lww_totals") == []
