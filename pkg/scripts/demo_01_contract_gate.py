"""Demo 01: Contract Gate - Validate, Quarantine, Load and Time-Travel

This demo walks one customer-transactions feed through an ETLT++ pipeline.

Demonstrates:
- Registering a data contract and linting it
- Evaluating a batch (one negative amount, one missing email)
- Quarantine-and-continue instead of halting the batch
- SLIs and SLO alerts computed after the load
- A correction loaded the next day and the key's version history

Prerequisites:
- pipeforge installed (``pdm install`` or ``pip install -e .``)

Notes:
- Everything happens in a temporary workspace that is removed on exit
- Pass ``--keep`` to print the workspace path and keep it for inspection
"""

import sys
import tempfile
from pathlib import Path

from rich.console import Console
from rich.table import Table

from pipeforge import setup_logging
from pipeforge.contract import ContractRegistry, lint_contract, parse_contract
from pipeforge.pipeline import Pattern, PipelineRunner, PipelineSpec
from pipeforge.quality import daily_transaction_template
from pipeforge.utils import pretty_json
from pipeforge.validation import HardViolationPolicy, evaluate_batch, read_records
from pipeforge.versioned_store import VersionedTable
from pipeforge.workspace import Workspace

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
CORRECTION = b"client_id,amount,email\n1002,20,bob@example.com\n1003,30,carol@example.com\n"

console = Console()


def show_verdict(verdict) -> None:
    table = Table(title=f"Verdict for {verdict.batch_id}: {verdict.decision.value}")
    for column in ("record", "status", "hard", "soft"):
        table.add_column(column)
    for v in verdict.record_verdicts:
        table.add_row(
            v.record_key,
            v.status.value,
            ", ".join(b.rule_id for b in v.hard_violations),
            ", ".join(b.rule_id for b in v.soft_warnings),
        )
    console.print(table)


def main(root: Path) -> None:
    ws = Workspace(root).init()
    contract = parse_contract((FIXTURES / "customer_transactions.json").read_bytes())
    ContractRegistry(ws).put(contract)
    for issue in lint_contract(contract):
        console.print(f"[yellow]lint[/yellow] {issue.code}: {issue.message}")

    batch = (FIXTURES / "batch_customer_transactions.csv").read_bytes()
    show_verdict(evaluate_batch(read_records(batch, "csv", source="day-1"), contract, "day-1"))

    spec = PipelineSpec(
        pipeline_id="customer_etlt",
        pattern=Pattern.ETLT_PP,
        contract_name=contract.name,
        target_table="customer_tx",
        key_fields=("client_id",),
        slo=daily_transaction_template("customer_tx"),
        on_hard_violation=HardViolationPolicy.QUARANTINE_AND_CONTINUE,
    )
    runner = PipelineRunner(ws)
    report = runner.run(spec, batch, "2025-08-26T06:00:00Z", batch_id="day-1")
    console.rule(f"Run {report.run_id}: {report.status.value}")
    console.print_json(pretty_json({"sli": report.sli, "alerts": report.alerts, "quarantine": report.quarantine}))

    runner.run(spec, CORRECTION, "2025-08-27T06:00:00Z", batch_id="day-2")
    table = VersionedTable.open(ws, "customer_tx")
    history = Table(title="History of client 1003")
    for column in ("amount", "email", "valid_from", "valid_to"):
        history.add_column(column)
    for row in table.history(["1003"]):
        history.add_row(
            str(row.payload.get("amount")), str(row.payload.get("email") or ""), str(row.valid_from), str(row.valid_to or "")
        )
    console.print(history)
    for at in ("2025-08-26T12:00:00Z", "2025-08-27T12:00:00Z"):
        clients = [key["client_id"] for key, _ in table.query_asof(at)]
        console.print(f"As of {at}: {', '.join(clients)}")


if __name__ == "__main__":
    setup_logging("INFO", "%(levelname)s: %(message)s")
    if "--keep" in sys.argv:
        path = Path(tempfile.mkdtemp(prefix="pipeforge-demo-"))
        main(path)
        console.print(f"Workspace kept at {path}")
    else:
        with tempfile.TemporaryDirectory(prefix="pipeforge-demo-") as tmp:
            main(Path(tmp))
