"""Contract-gated, versioned and replayable batch pipelines on local file storage."""

from .contract import Contract, ContractRegistry, FieldSpec, Rule, lint_contract, parse_contract
from .errors import PipeforgeError
from .logging import disable_logging, run_context, setup_logging
from .pipeline import Pattern, PipelineRunner, PipelineSpec, RunReport, load_pipeline_spec
from .quality import SliSample, SloConfig, check_dataset, evaluate_slos
from .raw_layer import RawZone, SourceRegistration, TieringPolicy, estimate_cost
from .semantic import MetricDef, MetricStore
from .transform import TransformEngine, TransformTemplate
from .utils import format_duration, format_time_ago, sanitize_id
from .validation import BatchVerdict, evaluate_batch, read_records
from .versioned_store import VersionedTable
from .workspace import Settings, Workspace

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Contract",
    "ContractRegistry",
    "FieldSpec",
    "Rule",
    "lint_contract",
    "parse_contract",
    "PipeforgeError",
    "Pattern",
    "PipelineRunner",
    "PipelineSpec",
    "RunReport",
    "load_pipeline_spec",
    "SliSample",
    "SloConfig",
    "check_dataset",
    "evaluate_slos",
    "RawZone",
    "SourceRegistration",
    "TieringPolicy",
    "estimate_cost",
    "MetricDef",
    "MetricStore",
    "TransformEngine",
    "TransformTemplate",
    "BatchVerdict",
    "evaluate_batch",
    "read_records",
    "VersionedTable",
    "Settings",
    "Workspace",
    "sanitize_id",
    "format_duration",
    "format_time_ago",
    "setup_logging",
    "disable_logging",
    "run_context",
]
