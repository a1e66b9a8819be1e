"""Demo 02: Strategy Benchmark - ETLT++ vs ELTL++ vs an Unversioned ELT Baseline

Runs the benchmark harness over a small synthetic fixture with an upstream
rename of ``amount`` to ``amt`` halfway through.

Demonstrates:
- Deterministic fixture generation with labeled dirty rows
- Containment: the pre-load gate against monitoring-only validation
- Replay of every pinned curated version
- Storage cost with a 10% hot fraction
- Recovery after the contract hotfix

Usage:
    python scripts/demo_02_benchmark.py [rows] [batches]
"""

import sys
import tempfile
from pathlib import Path

from rich.console import Console

from pipeforge import setup_logging
from pipeforge.bench import generate_fixture, render_bench_table, run_benchmark
from pipeforge.workspace import Workspace

console = Console()


def main(root: Path, rows: int, batches: int) -> None:
    ws = Workspace(root).init()
    fixture = generate_fixture(rows=rows, batches=batches, dirty_fraction=0.1, schema_change_batch=batches // 2 or None)
    report = run_benchmark(ws, fixture)
    console.print(render_bench_table(report))
    ratio = report.cost_ratio
    if ratio is not None:
        console.print(f"ELTL++ hot-storage cost is {float(ratio):.1%} of the baseline")
    for name, metrics in report.strategies.items():
        for note in metrics.notes:
            console.print(f"[dim]{name}: {note}[/dim]")


if __name__ == "__main__":
    setup_logging("WARNING", "%(levelname)s: %(message)s")
    rows = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
    batches = int(sys.argv[2]) if len(sys.argv) > 2 else 10
    with tempfile.TemporaryDirectory(prefix="pipeforge-bench-") as tmp:
        main(Path(tmp), rows, batches)
