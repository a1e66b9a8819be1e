"""Workspace root resolution, directory layout and engine settings."""

from __future__ import annotations

import os
from collections.abc import Iterator, Mapping
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, ClassVar, Optional, Union

from .errors import SchemaViolation
from .logging import get_logger
from .utils import advisory_lock, read_json, sanitize_id, write_json

_logger = get_logger()

HARD_VIOLATION_POLICIES = ("halt_batch", "quarantine_and_continue")

DEFAULT_COST_RATES = {
    "hot_per_gb_month": "0.021",
    "cool_per_gb_month": "0.00099",
    "compute_per_day": "0",
    "days_per_month": 30,
}


@dataclass(frozen=True)
class Settings:
    """Engine-wide settings loaded from ``config/settings.json``.

    Attributes
    ----------
    on_hard_violation : str
        ``halt_batch`` (default) loads nothing when a batch has hard violations;
        ``quarantine_and_continue`` loads the passing records.
    accuracy_counts_soft : bool
        Count soft warnings as violations in the accuracy SLI (default: False)
    adherence_window : int
        Number of most recent batches measured by the adherence SLI (default: 30)
    bytes_per_gb : int
        Byte to GB conversion used by cost estimates (default: 10**9)
    lock_timeout_seconds : float
        How long writers wait for an advisory lock (default: 10)
    redaction_token : str
        Replacement text for masked fields (default: "«redacted»")

    Raises
    ------
    SchemaViolation
        If any value is out of range.
    """

    DEFAULT_ON_HARD_VIOLATION: ClassVar[str] = "halt_batch"
    DEFAULT_ADHERENCE_WINDOW: ClassVar[int] = 30
    DEFAULT_BYTES_PER_GB: ClassVar[int] = 10**9
    DEFAULT_LOCK_TIMEOUT: ClassVar[float] = 10.0
    DEFAULT_REDACTION_TOKEN: ClassVar[str] = "«redacted»"

    on_hard_violation: str = DEFAULT_ON_HARD_VIOLATION
    accuracy_counts_soft: bool = False
    adherence_window: int = DEFAULT_ADHERENCE_WINDOW
    bytes_per_gb: int = DEFAULT_BYTES_PER_GB
    lock_timeout_seconds: float = DEFAULT_LOCK_TIMEOUT
    redaction_token: str = DEFAULT_REDACTION_TOKEN

    def __post_init__(self) -> None:
        if self.on_hard_violation not in HARD_VIOLATION_POLICIES:
            raise SchemaViolation(f"on_hard_violation must be one of {', '.join(HARD_VIOLATION_POLICIES)}")
        if not isinstance(self.accuracy_counts_soft, bool):
            raise SchemaViolation("accuracy_counts_soft must be a boolean")
        if isinstance(self.adherence_window, bool) or not isinstance(self.adherence_window, int):
            raise SchemaViolation("adherence_window must be an integer")
        if self.adherence_window < 1:
            raise SchemaViolation("adherence_window must be at least 1")
        if isinstance(self.bytes_per_gb, bool) or not isinstance(self.bytes_per_gb, int) or self.bytes_per_gb < 1:
            raise SchemaViolation("bytes_per_gb must be a positive integer")
        if float(self.lock_timeout_seconds) < 0:
            raise SchemaViolation("lock_timeout_seconds must be non-negative")
        if not self.redaction_token:
            raise SchemaViolation("redaction_token cannot be empty")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Settings:
        """Build settings from a JSON object, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SchemaViolation(f"unknown settings: {', '.join(unknown)}")
        return cls(**dict(data))

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class Workspace:
    """A directory holding every artifact the engine persists.

    Layout::

        config/      settings.json, cost_rates.json
        contracts/   <name>/v<version>.json + LATEST
        quarantine/  <batch_id>.ndjson
        tables/      <name>/manifest.json + segment-<n>.ndjson
        lww/         <name>.json (last-write-wins baseline tables)
        raw/         <source>/<YYYY-MM-DD>/segment-<n>.<ext> + _meta.ndjson
        templates/   <template_id>/<digest>.json + LATEST
        curated/     <dataset_id>/v<k>/rows.ndjson + meta.json
        semantic/    metrics/<id>/v<k>.json + catalog.json
        quality/     <dataset>/sli-<date>.ndjson, batches.ndjson, alerts.ndjson, slo.json
        pipelines/   <pipeline_id>.json
        runs/        <run_id>.json
        bench/       <timestamp>.json
    """

    ENV_VAR: ClassVar[str] = "PIPEFORGE_WORKSPACE"
    DEFAULT_ROOT: ClassVar[str] = "pipeforge-data"
    SUBDIRS: ClassVar[tuple[str, ...]] = (
        "config",
        "contracts",
        "quarantine",
        "tables",
        "lww",
        "raw",
        "templates",
        "curated",
        "semantic",
        "quality",
        "pipelines",
        "runs",
        "bench",
        "locks",
    )

    def __init__(self, root: Union[str, Path], settings: Optional[Settings] = None) -> None:
        self.root = Path(root)
        self._settings = settings

    def __repr__(self) -> str:
        return f"Workspace({str(self.root)!r})"

    @classmethod
    def resolve(cls, flag: Optional[Union[str, Path]] = None) -> Workspace:
        """Pick the workspace root: environment variable, then ``flag``, then the default."""
        env = os.environ.get(cls.ENV_VAR)
        if env:
            return cls(env)
        if flag:
            return cls(flag)
        return cls(cls.DEFAULT_ROOT)

    def init(self) -> Workspace:
        """Create the directory layout and default config files (existing files are kept)."""
        for name in self.SUBDIRS:
            (self.root / name).mkdir(parents=True, exist_ok=True)
        if not self.settings_path.exists():
            write_json(self.settings_path, Settings().to_dict())
        if not self.cost_rates_path.exists():
            write_json(self.cost_rates_path, DEFAULT_COST_RATES)
        _logger.info(f"Initialized workspace at {self.root}")
        return self

    def path(self, *parts: str) -> Path:
        return self.root.joinpath(*parts)

    @property
    def settings_path(self) -> Path:
        return self.root / "config" / "settings.json"

    @property
    def cost_rates_path(self) -> Path:
        return self.root / "config" / "cost_rates.json"

    @property
    def settings(self) -> Settings:
        """Settings from ``config/settings.json``, or defaults when the file is absent."""
        if self._settings is None:
            if self.settings_path.exists():
                self._settings = Settings.from_dict(read_json(self.settings_path))
            else:
                self._settings = Settings()
        return self._settings

    @contextmanager
    def lock(self, name: str) -> Iterator[None]:
        """Advisory writer lock scoped to ``name`` (one lock file per resource)."""
        lock_path = self.root / "locks" / f"{sanitize_id(name)}.lock"
        with advisory_lock(lock_path, timeout=float(self.settings.lock_timeout_seconds)):
            yield

    def child(self, name: str) -> Workspace:
        """A nested workspace sharing this one's settings (used for isolated benchmark runs)."""
        return Workspace(self.root / name, settings=self.settings)
