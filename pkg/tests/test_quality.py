"""Tests for SLI computation, SLO evaluation, alerts and the SLI history."""

import logging
from decimal import Decimal
from fractions import Fraction

import pytest

from pipeforge.errors import ClockSkew, InvalidArgument, NotFound, SchemaViolation
from pipeforge.quality import (
    Alert,
    AlertSink,
    BatchLog,
    ExpectationSpec,
    SliLog,
    SliSample,
    SloConfig,
    SloStore,
    SuggestedAction,
    accuracy_from_verdict,
    append_sli_log,
    check_dataset,
    compute_accuracy,
    compute_adherence,
    compute_completeness,
    compute_freshness,
    daily_transaction_template,
    evaluate_slos,
    measure_completeness,
    parse_slo,
    read_sli_history,
)
from pipeforge.validation import BatchSummary, evaluate_batch, read_records

CLEAN_BATCH = b"client_id,amount,email\n2001,5,a@example.com\n2002,7,b@example.com\n"


@pytest.fixture
def golden_verdict(customer_batch, customer_contract):
    return evaluate_batch(read_records(customer_batch, "csv"), customer_contract, "batch")


@pytest.fixture
def clean_verdict(customer_contract):
    return evaluate_batch(read_records(CLEAN_BATCH, "csv"), customer_contract, "clean")


def _sample(at, **kwargs):
    return SliSample("transactions", at, **kwargs)


class TestFreshness:
    """Tests for compute_freshness()."""

    def test_three_days(self):
        """A batch three days old is 259200 seconds stale."""
        assert compute_freshness("2025-08-25T12:00:00Z", "2025-08-28T12:00:00Z") == Decimal(259200)

    def test_sub_second(self):
        """Fractional seconds are kept exactly."""
        assert compute_freshness("2025-08-28T12:00:00Z", "2025-08-28T12:00:00.250Z") == Decimal("0.25")

    def test_zero(self):
        """A batch landing now is perfectly fresh."""
        assert compute_freshness("2025-08-28", "2025-08-28") == 0

    def test_clock_skew(self):
        """now before the latest batch is an error."""
        with pytest.raises(ClockSkew):
            compute_freshness("2025-08-28T12:00:00Z", "2025-08-28T11:59:59Z")


class TestCompleteness:
    """Tests for compute_completeness() and measure_completeness()."""

    def test_ratio(self):
        """Four of five expected records is 0.8."""
        result = compute_completeness(4, 5)
        assert result.value == Fraction(4, 5)
        assert float(result) == 0.8
        assert not result.vacuous

    def test_vacuous(self):
        """Nothing expected and nothing received is complete, flagged vacuous."""
        result = compute_completeness(0, 0)
        assert result.value == 1
        assert result.vacuous

    def test_surplus_clamps(self):
        """More than expected is capped at 1 with a note."""
        assert compute_completeness(7, 5).value == 1
        assert "surplus" in compute_completeness(7, 5).note
        assert compute_completeness(3, 0).value == 1

    @pytest.mark.parametrize(("received", "expected"), [(-1, 5), (1, -5), (True, 5), (1.5, 5)])
    def test_invalid_counts(self, received, expected):
        """Counts must be non-negative integers."""
        with pytest.raises(InvalidArgument):
            compute_completeness(received, expected)

    def test_count_expectation(self):
        """A count expectation compares the number of records."""
        records = [{"id": i} for i in range(4)]
        assert measure_completeness(records, ExpectationSpec(count=5)).value == Fraction(4, 5)

    def test_dimension_expectation(self):
        """A dimension expectation counts distinct expected values seen."""
        spec = ExpectationSpec(dimension="store", expected_values=("S1", "S2", "S3", "S4", "S5"))
        records = [{"store": "S1"}, {"store": "S2"}, {"store": "S2"}, {"store": "S4"}, {"store": "S9"}, {"store": None}]
        result = measure_completeness(records, spec)
        assert result.value == Fraction(3, 5)
        assert result.note == "missing store: S3, S5"

    def test_expectation_spec(self):
        """Exactly one of count or dimension; documents round-trip."""
        with pytest.raises(InvalidArgument):
            ExpectationSpec()
        with pytest.raises(InvalidArgument):
            ExpectationSpec(count=1, dimension="store")
        with pytest.raises(InvalidArgument):
            ExpectationSpec.from_dict({"count": 1, "stores": []})
        spec = ExpectationSpec(dimension="store", expected_values=("S1", "S2"))
        assert ExpectationSpec.from_dict(spec.to_dict()) == spec


class TestAccuracy:
    """Tests for compute_accuracy() and accuracy_from_verdict()."""

    def test_ratio(self):
        """One violating record of five is 0.8."""
        assert compute_accuracy(1, 5).value == Fraction(4, 5)

    def test_empty(self):
        """No records is vacuously accurate."""
        assert compute_accuracy(0, 0).vacuous

    def test_too_many_violations(self):
        """Violations cannot exceed records."""
        with pytest.raises(InvalidArgument):
            compute_accuracy(6, 5)

    def test_from_verdict(self, golden_verdict):
        """Hard violations count by default; soft warnings only when asked."""
        assert accuracy_from_verdict(golden_verdict).value == Fraction(4, 5)
        assert accuracy_from_verdict(golden_verdict, counts_soft=True).value == Fraction(3, 5)


class TestAdherence:
    """Tests for compute_adherence()."""

    def test_nine_of_ten(self, golden_verdict, clean_verdict):
        """Nine compliant batches of ten is 0.9."""
        log = [clean_verdict] * 9 + [golden_verdict]
        assert compute_adherence(log).value == Fraction(9, 10)

    def test_summaries_and_soft_only(self, golden_verdict, customer_contract):
        """Summaries work as well; a soft-only batch is compliant."""
        soft_only = evaluate_batch(
            read_records(b"client_id,amount,email\n3001,5,\n", "csv"), customer_contract, "soft"
        )
        summaries = [BatchSummary.of(soft_only), BatchSummary.of(golden_verdict)]
        assert compute_adherence(summaries).value == Fraction(1, 2)

    def test_empty(self):
        """No batches is vacuously adherent."""
        result = compute_adherence([])
        assert result.value == 1
        assert result.vacuous


class TestSliSample:
    """Tests for SliSample."""

    def test_round_trip(self):
        """Ratios are stored as exact fractions."""
        sample = _sample(
            "2025-08-28T12:00:00Z",
            freshness_seconds=259200,
            completeness=Fraction(4, 5),
            accuracy="0.8",
            adherence=Fraction(9, 10),
            latest_batch_at="2025-08-25T12:00:00Z",
            notes=("late partner feed",),
        )
        assert sample.accuracy == Fraction(4, 5)
        data = sample.to_dict()
        assert data["completeness"] == "4/5"
        assert data["freshness_seconds"] == 259200
        assert SliSample.from_dict(data) == sample

    @pytest.mark.parametrize(
        "kwargs", [{"completeness": Fraction(3, 2)}, {"accuracy": -1}, {"freshness_seconds": -1}, {"adherence": "x"}]
    )
    def test_invalid(self, kwargs):
        """Ratios lie in [0, 1]; freshness is non-negative."""
        with pytest.raises(InvalidArgument):
            _sample("2025-08-28", **kwargs)


class TestSlos:
    """Tests for SloConfig and evaluate_slos()."""

    def test_template(self):
        """The daily transaction template carries the standard thresholds."""
        config = daily_transaction_template("transactions")
        assert config.max_freshness_seconds == 86400
        assert config.min_completeness == Fraction(95, 100)
        assert config.min_accuracy == Fraction(99, 100)
        assert config.min_adherence == Fraction(9, 10)

    def test_golden_alerts(self, caplog):
        """A stale, incomplete, inaccurate sample raises three alerts in SLI order."""
        sample = _sample(
            "2025-08-28T12:00:00Z",
            freshness_seconds=259200,
            completeness=Fraction(4, 5),
            accuracy=Fraction(4, 5),
            adherence=Fraction(9, 10),
        )
        with caplog.at_level(logging.WARNING, logger="pipeforge"):
            alerts = evaluate_slos(sample, daily_transaction_template("transactions"))
        assert [(a.sli, a.suggested_action) for a in alerts] == [
            ("freshness", SuggestedAction.REINGEST),
            ("completeness", SuggestedAction.BACKFILL),
            ("accuracy", SuggestedAction.REVIEW),
        ]
        assert alerts[0].observed == 259200
        assert "SLO breach on transactions: freshness=259200 vs 86400 -> reingest" in caplog.text

    def test_boundaries_do_not_alert(self):
        """Values exactly at the threshold are within the SLO."""
        sample = _sample(
            "2025-08-28",
            freshness_seconds=86400,
            completeness=Fraction(95, 100),
            accuracy=Fraction(99, 100),
            adherence=Fraction(9, 10),
        )
        assert evaluate_slos(sample, daily_transaction_template("transactions")) == []

    def test_unmeasured_and_unconfigured(self):
        """Missing SLIs and absent thresholds are skipped."""
        sample = _sample("2025-08-28", accuracy=Fraction(1, 2))
        assert evaluate_slos(sample, SloConfig("transactions", min_completeness="0.9")) == []
        [alert] = evaluate_slos(sample, SloConfig("transactions", min_accuracy="0.9"))
        assert alert.to_dict()["observed"] == "1/2"

    def test_alert_must_violate(self):
        """An alert cannot describe a satisfied threshold."""
        with pytest.raises(InvalidArgument):
            Alert("transactions", "accuracy", Fraction(1), Fraction(9, 10), None, "review")

    def test_parse_and_store(self, workspace):
        """SLO documents parse, store and read back equal."""
        config = parse_slo(
            '{"dataset": "transactions", "max_freshness_seconds": 86400, "min_completeness": 0.95,'
            ' "min_accuracy": 0.99, "min_adherence": 0.9}'
        )
        assert config == daily_transaction_template("transactions")
        store = SloStore(workspace)
        store.put(config)
        assert store.get("transactions") == config
        assert store.find("other") is None
        with pytest.raises(NotFound):
            store.get("other")

    @pytest.mark.parametrize(
        "document",
        ['{"dataset": "t", "min_accuracy": 1.5}', '{"dataset": "t", "max_freshness_seconds": -1}', '{"min_accuracy": 1}', "[]"],
    )
    def test_invalid_documents(self, document):
        """Out-of-range thresholds and missing datasets are rejected."""
        with pytest.raises(SchemaViolation):
            parse_slo(document)


class TestSliLog:
    """Tests for the append-only SLI history."""

    def test_daily_files_and_range(self, workspace):
        """Samples land in per-day files and read back by time range."""
        log = SliLog(workspace)
        for day in ("2025-08-26", "2025-08-27", "2025-08-28"):
            append_sli_log(log, _sample(f"{day}T12:00:00Z", accuracy=1))
        assert [p.name for p in log.files("transactions")] == [
            "sli-2025-08-26.ndjson",
            "sli-2025-08-27.ndjson",
            "sli-2025-08-28.ndjson",
        ]
        window = read_sli_history(log, "transactions", "2025-08-27", "2025-08-28T12:00:00Z")
        assert [s.at.day for s in window] == [27, 28]
        assert log.latest("transactions").at.day == 28
        assert log.latest("other") is None

    def test_out_of_order(self, workspace, caplog):
        """A late sample is flagged and appended to the newest file."""
        log = SliLog(workspace)
        log.append(_sample("2025-08-26T12:00:00Z", accuracy=1))
        log.append(_sample("2025-08-27T12:00:00Z", accuracy=1))
        first_file = log.files("transactions")[0]
        before = first_file.read_text(encoding="utf-8")
        with caplog.at_level(logging.WARNING, logger="pipeforge"):
            stored = log.append(_sample("2025-08-26T18:00:00Z", accuracy=Fraction(1, 2)))
        assert stored.out_of_order
        assert "logged out of order" in caplog.text
        assert first_file.read_text(encoding="utf-8") == before
        assert len(log.files("transactions")) == 2
        history = log.history("transactions")
        assert [(s.at.day, s.at.hour) for s in history] == [(26, 12), (26, 18), (27, 12)]
        assert [s.out_of_order for s in history] == [False, True, False]


class TestBatchLogAndAlerts:
    """Tests for BatchLog and AlertSink."""

    def test_batch_log_window(self, workspace, golden_verdict, clean_verdict):
        """The batch log keeps summaries in order and windows the tail."""
        log = BatchLog(workspace)
        for verdict in (clean_verdict, golden_verdict, clean_verdict):
            log.append("transactions", BatchSummary.of(verdict, at="2025-08-28"))
        assert [s.batch_id for s in log.read("transactions")] == ["clean", "batch", "clean"]
        assert [s.batch_id for s in log.read("transactions", window=2)] == ["batch", "clean"]
        assert compute_adherence(log.read("transactions")).value == Fraction(2, 3)
        with pytest.raises(InvalidArgument):
            log.read("transactions", window=0)

    def test_alert_sink(self, workspace):
        """Alerts append per dataset."""
        sink = AlertSink(workspace)
        sample = _sample("2025-08-28", completeness=Fraction(1, 2))
        alerts = evaluate_slos(sample, SloConfig("transactions", min_completeness="0.95"))
        assert sink.emit(alerts) == 1
        assert sink.emit(alerts) == 1
        lines = sink.read("transactions")
        assert len(lines) == 2
        assert lines[0]["suggested_action"] == "backfill"

    def test_invalid_dataset(self, workspace):
        """Dataset names must be identifiers."""
        with pytest.raises(InvalidArgument):
            AlertSink(workspace).read("../etc")


class TestCheckDataset:
    """Tests for check_dataset()."""

    def test_freshness_recomputed(self, workspace):
        """Freshness is measured from the latest batch to now."""
        SloStore(workspace).put(daily_transaction_template("transactions"))
        SliLog(workspace).append(
            _sample(
                "2025-08-26T12:00:00Z",
                freshness_seconds=86400,
                completeness=1,
                accuracy=1,
                adherence=1,
                latest_batch_at="2025-08-25T12:00:00Z",
            )
        )
        check = check_dataset(workspace, "transactions", now="2025-08-28T12:00:00Z")
        assert check.sample.freshness_seconds == 259200
        assert check.breached
        assert [a.sli for a in check.alerts] == ["freshness"]
        assert check.to_dict()["alerts"][0]["suggested_action"] == "reingest"
        assert len(AlertSink(workspace).read("transactions")) == 1
        assert len(SliLog(workspace).history("transactions")) == 1

    def test_healthy(self, workspace):
        """A fresh dataset within its SLOs raises nothing."""
        SloStore(workspace).put(daily_transaction_template("transactions"))
        SliLog(workspace).append(
            _sample("2025-08-28T00:00:00Z", completeness=1, accuracy=1, latest_batch_at="2025-08-28T00:00:00Z")
        )
        check = check_dataset(workspace, "transactions", now="2025-08-28T06:00:00Z")
        assert not check.breached
        assert check.sample.freshness_seconds == 21600

    def test_missing_inputs(self, workspace):
        """Samples and an SLO config are both required."""
        with pytest.raises(NotFound):
            check_dataset(workspace, "transactions", now="2025-08-28")
        SliLog(workspace).append(_sample("2025-08-28", accuracy=1))
        with pytest.raises(NotFound):
            check_dataset(workspace, "transactions", now="2025-08-28")
