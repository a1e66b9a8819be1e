"""Data contracts: parsing, canonical serialization, linting and the versioned registry.

A contract governs one dataset. It declares the fields a record may carry and the
rules a record must satisfy; every rule is either *hard* (blocking) or *soft*
(advisory).
"""

from __future__ import annotations

import dataclasses
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, ClassVar, Optional, Union

from jsonschema import Draft202012Validator

from .errors import (
    MalformedDocument,
    NotFound,
    SchemaViolation,
    StorageFailure,
    TypeMismatch,
    VersionConflict,
)
from .logging import get_logger
from .utils import (
    atomic_write_text,
    canonical_json,
    check_schema,
    ensure_mapping,
    is_identifier,
    loads,
    read_text,
    sha256_hex,
)
from .values import DATATYPES, coerce, to_decimal, to_plain
from .workspace import Workspace

_logger = get_logger()

RULE_KINDS = ("required", "range", "format", "enum")
SEVERITIES = ("hard", "soft")
NUMERIC_DATATYPES = ("integer", "decimal")

_FIELD_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["name", "datatype"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "datatype": {"enum": list(DATATYPES)},
        "required": {"type": "boolean"},
        "aliases": {"type": "array", "items": {"type": "string", "minLength": 1}},
    },
}

CONTRACT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "version", "fields"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "version": {"type": "integer", "minimum": 1},
        "fields": {"type": "array", "items": _FIELD_SCHEMA},
        "rules": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "severity"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "field": {"type": ["string", "null"]},
                    "kind": {"enum": list(RULE_KINDS)},
                    "params": {"type": "object"},
                    "severity": {"enum": list(SEVERITIES)},
                },
            },
        },
    },
}

_CONTRACT_VALIDATOR = Draft202012Validator(CONTRACT_SCHEMA)


@dataclass(frozen=True)
class FieldSpec:
    """A declared field: name, datatype, required flag and optional source aliases.

    Examples
    --------
    >>> FieldSpec("amount", "decimal", required=True)
    FieldSpec(name='amount', datatype='decimal', required=True, aliases=())
    """

    name: str
    datatype: str
    required: bool = False
    aliases: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise SchemaViolation(f"invalid field name {self.name!r}")
        if self.datatype not in DATATYPES:
            raise SchemaViolation(f"field {self.name}: unknown datatype {self.datatype!r}")
        if not isinstance(self.required, bool):
            raise SchemaViolation(f"field {self.name}: required must be a boolean")
        object.__setattr__(self, "aliases", tuple(self.aliases))
        for alias in self.aliases:
            if not is_identifier(alias) or alias == self.name:
                raise SchemaViolation(f"field {self.name}: invalid alias {alias!r}")

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"name": self.name, "datatype": self.datatype, "required": self.required}
        if self.aliases:
            data["aliases"] = list(self.aliases)
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FieldSpec:
        return cls(
            name=data["name"],
            datatype=data["datatype"],
            required=bool(data.get("required", False)),
            aliases=tuple(data.get("aliases", ())),
        )


@dataclass(frozen=True)
class Rule:
    """One contract rule.

    ``params`` by kind: ``range`` takes ``min`` and/or ``max`` (decimals),
    ``format`` takes ``pattern`` (a regular expression the whole text must match),
    ``enum`` takes ``allowed`` (non-empty list), ``required`` takes nothing.
    A rule without ``field`` is batch-level.
    """

    id: str
    kind: str
    severity: str
    field: Optional[str] = None
    params: Mapping[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if not is_identifier(self.id):
            raise SchemaViolation(f"invalid rule id {self.id!r}")
        if self.kind not in RULE_KINDS:
            raise SchemaViolation(f"rule {self.id}: unknown kind {self.kind!r}")
        if self.severity not in SEVERITIES:
            raise SchemaViolation(f"rule {self.id}: severity must be hard or soft")
        if self.field is not None and not is_identifier(self.field):
            raise SchemaViolation(f"rule {self.id}: invalid field name {self.field!r}")
        object.__setattr__(self, "params", self._checked_params(dict(self.params)))

    def _checked_params(self, params: dict[str, Any]) -> dict[str, Any]:
        if self.kind == "range":
            unknown = set(params) - {"min", "max"}
            if unknown or not params:
                raise SchemaViolation(f"rule {self.id}: range takes min and/or max")
            try:
                bounds = {k: to_plain(to_decimal(v)) for k, v in params.items()}
            except TypeMismatch as exc:
                raise SchemaViolation(f"rule {self.id}: range bounds must be numbers") from exc
            if "min" in bounds and "max" in bounds and to_decimal(bounds["min"]) > to_decimal(bounds["max"]):
                raise SchemaViolation(f"rule {self.id}: range min exceeds max")
            return bounds
        if self.kind == "format":
            pattern = params.get("pattern")
            if set(params) != {"pattern"} or not isinstance(pattern, str):
                raise SchemaViolation(f"rule {self.id}: format takes a pattern")
            try:
                re.compile(pattern)
            except re.error as exc:
                raise SchemaViolation(f"rule {self.id}: bad pattern: {exc}") from exc
            return params
        if self.kind == "enum":
            allowed = params.get("allowed")
            if set(params) != {"allowed"} or not isinstance(allowed, (list, tuple)) or not allowed:
                raise SchemaViolation(f"rule {self.id}: enum takes a non-empty allowed list")
            return {"allowed": [to_plain(v) for v in allowed]}
        if params:
            raise SchemaViolation(f"rule {self.id}: required takes no params")
        return params

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"id": self.id, "kind": self.kind, "params": dict(self.params), "severity": self.severity}
        if self.field is not None:
            data["field"] = self.field
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Rule:
        return cls(
            id=data["id"],
            kind=data["kind"],
            severity=data["severity"],
            field=data.get("field"),
            params=dict(data.get("params") or {}),
        )


@dataclass(frozen=True)
class Contract:
    """A versioned rule document governing one dataset.

    Raises
    ------
    SchemaViolation
        If names are invalid or duplicated, the version is below 1, or a rule
        references an undeclared field.
    """

    name: str
    version: int
    fields: tuple[FieldSpec, ...]
    rules: tuple[Rule, ...] = ()

    def __post_init__(self) -> None:
        if not is_identifier(self.name):
            raise SchemaViolation(f"invalid contract name {self.name!r}")
        if isinstance(self.version, bool) or not isinstance(self.version, int) or self.version < 1:
            raise SchemaViolation("contract version must be a positive integer")
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "rules", tuple(self.rules))

        seen: set[str] = set()
        for spec in self.fields:
            for name in (spec.name, *spec.aliases):
                if name in seen:
                    raise SchemaViolation(f"duplicate field name or alias {name!r}")
                seen.add(name)
        rule_ids: set[str] = set()
        declared = set(self.field_names)
        for rule in self.rules:
            if rule.id in rule_ids:
                raise SchemaViolation(f"duplicate rule id {rule.id!r}")
            rule_ids.add(rule.id)
            if rule.field is not None and rule.field not in declared:
                raise SchemaViolation(f"rule {rule.id} references undeclared field {rule.field!r}")

    @property
    def field_names(self) -> list[str]:
        return [spec.name for spec in self.fields]

    def field(self, name: str) -> FieldSpec:
        for spec in self.fields:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def name_map(self) -> dict[str, str]:
        """Map every accepted source name (declared names and aliases) to the declared name."""
        mapping = {}
        for spec in self.fields:
            mapping[spec.name] = spec.name
            for alias in spec.aliases:
                mapping[alias] = spec.name
        return mapping

    def rules_for(self, field_name: str) -> list[Rule]:
        return [rule for rule in self.rules if rule.field == field_name]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "fields": [spec.to_dict() for spec in self.fields],
            "rules": [rule.to_dict() for rule in self.rules],
        }


@dataclass(frozen=True)
class ContractRef:
    """Registry address of one contract version plus its content digest."""

    name: str
    version: int
    content_digest: str

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "version": self.version, "content_digest": self.content_digest}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ContractRef:
        return cls(name=data["name"], version=int(data["version"]), content_digest=data.get("content_digest", ""))

    @classmethod
    def of(cls, contract: Contract) -> ContractRef:
        return cls(contract.name, contract.version, contract_digest(contract))


@dataclass(frozen=True)
class LintIssue:
    """An advisory finding from lint_contract."""

    code: str
    message: str
    field: Optional[str] = None
    rule_id: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {"code": self.code, "message": self.message, "field": self.field, "rule_id": self.rule_id}


# --------------------------------------------------------------------------- #
# Parsing and serialization
# --------------------------------------------------------------------------- #
def contract_from_dict(data: Any) -> Contract:
    """Build a Contract from an already-parsed JSON object."""
    ensure_mapping(data, "contract")
    check_schema(data, _CONTRACT_VALIDATOR, "contract")
    return Contract(
        name=data["name"],
        version=data["version"],
        fields=tuple(FieldSpec.from_dict(item) for item in data["fields"]),
        rules=tuple(Rule.from_dict(item) for item in data.get("rules", [])),
    )


def parse_contract(document: Union[str, bytes]) -> Contract:
    """Parse a contract document.

    Parameters
    ----------
    document : str or bytes
        JSON text of the contract

    Returns
    -------
    Contract
        The validated contract

    Raises
    ------
    MalformedDocument
        If the text is not JSON.
    SchemaViolation
        If required keys are missing, unknown keys are present, a datatype or
        severity is invalid, a rule references an undeclared field, or ids repeat.
    """
    data = loads(document)
    if not isinstance(data, Mapping):
        raise SchemaViolation("contract: <root>: must be a JSON object")
    return contract_from_dict(data)


def serialize_contract(contract: Contract) -> str:
    """Canonical serialization: sorted keys, compact separators, no trailing whitespace."""
    return canonical_json(contract.to_dict())


def contract_digest(contract: Contract) -> str:
    return sha256_hex(serialize_contract(contract))


# --------------------------------------------------------------------------- #
# Lint
# --------------------------------------------------------------------------- #
def lint_contract(contract: Contract) -> list[LintIssue]:
    """Report advisory issues; an empty list means the contract is clean.

    Checks for fields that no rule validates, required fields without a hard
    required rule, overlapping enum/range constraints, rule kinds that do not fit
    the field datatype, enum values that are not valid for the datatype, and
    field-less rules (which have no record-level effect).
    """
    issues: list[LintIssue] = []
    for spec in contract.fields:
        rules = contract.rules_for(spec.name)
        if not rules and not spec.required:
            issues.append(LintIssue("unvalidated-field", "field never validated", field=spec.name))
        if spec.required and not any(r.kind == "required" and r.severity == "hard" for r in rules):
            issues.append(LintIssue("required-without-hard-rule", "required field lacks hard rule", field=spec.name))

        kinds = [r.kind for r in rules]
        if "enum" in kinds and "range" in kinds:
            issues.append(
                LintIssue("overlapping-constraints", "enum and range constraints overlap", field=spec.name)
            )
        if kinds.count("range") > 1:
            issues.append(LintIssue("overlapping-constraints", "multiple range rules on one field", field=spec.name))

        for rule in rules:
            if rule.kind == "range" and spec.datatype not in NUMERIC_DATATYPES:
                issues.append(
                    LintIssue("kind-datatype-mismatch", f"range rule on {spec.datatype} field", spec.name, rule.id)
                )
            if rule.kind == "format" and spec.datatype != "text":
                issues.append(
                    LintIssue("kind-datatype-mismatch", f"format rule on {spec.datatype} field", spec.name, rule.id)
                )
            if rule.kind == "enum":
                for value in rule.params["allowed"]:
                    try:
                        coerce(value, spec.datatype)
                    except TypeMismatch:
                        issues.append(
                            LintIssue(
                                "enum-value-type",
                                f"allowed value {value!r} is not a valid {spec.datatype}",
                                spec.name,
                                rule.id,
                            )
                        )
    for rule in contract.rules:
        if rule.field is None:
            issues.append(LintIssue("batch-level-rule", "batch-level rule has no record-level effect", rule_id=rule.id))
    return issues


# --------------------------------------------------------------------------- #
# Registry
# --------------------------------------------------------------------------- #
class ContractRegistry:
    """File-backed contract registry: ``contracts/<name>/v<version>.json`` plus a ``LATEST`` pointer.

    Stored versions are immutable. Writers hold the registry lock; readers never see a
    partially written file because every write is a temp-file rename.
    """

    LATEST_FILE: ClassVar[str] = "LATEST"

    def __init__(self, workspace: Workspace) -> None:
        self.workspace = workspace
        self.root = workspace.path("contracts")

    def _dir(self, name: str) -> Path:
        return self.root / name

    def _file(self, name: str, version: int) -> Path:
        return self._dir(name) / f"v{version}.json"

    def _digest_file(self, name: str, version: int) -> Path:
        return self._dir(name) / f"v{version}.sha256"

    def versions(self, name: str) -> list[int]:
        """Stored versions of ``name`` in ascending order (empty if unknown)."""
        directory = self._dir(name)
        if not is_identifier(name) or not directory.is_dir():
            return []
        found = []
        for path in directory.glob("v*.json"):
            number = path.stem[1:]
            if number.isdigit():
                found.append(int(number))
        return sorted(found)

    def names(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_dir() and self.versions(p.name))

    def latest_version(self, name: str) -> Optional[int]:
        pointer = self._dir(name) / self.LATEST_FILE
        if pointer.exists():
            text = read_text(pointer).strip()
            if text.isdigit() and self._file(name, int(text)).exists():
                return int(text)
        versions = self.versions(name)
        return versions[-1] if versions else None

    def put(self, contract: Contract) -> ContractRef:
        """Persist a new contract version.

        Raises
        ------
        VersionConflict
            If the version is not strictly greater than the latest stored version.
        StorageFailure
            If the registry cannot be written.
        """
        with self.workspace.lock(f"contract-{contract.name}"):
            latest = self.latest_version(contract.name)
            if latest is not None and contract.version <= latest:
                raise VersionConflict(
                    f"contract {contract.name} v{contract.version} is not newer than stored v{latest}"
                )
            text = serialize_contract(contract)
            atomic_write_text(self._digest_file(contract.name, contract.version), sha256_hex(text) + "\n")
            atomic_write_text(self._file(contract.name, contract.version), text)
            atomic_write_text(self._dir(contract.name) / self.LATEST_FILE, f"{contract.version}\n")
        ref = ContractRef(contract.name, contract.version, sha256_hex(text))
        _logger.info(f"Registered contract {ref.name} v{ref.version} ({ref.content_digest[:12]})")
        return ref

    def get(self, name: str, version: Optional[int] = None) -> Contract:
        """Return ``name`` at ``version``, or the latest version when omitted.

        Raises
        ------
        NotFound
            If the name or version is not stored.
        StorageFailure
            If the stored bytes no longer match the digest recorded at put time.
        """
        if version is None:
            version = self.latest_version(name) if is_identifier(name) else None
            if version is None:
                raise NotFound(f"no contract named {name!r}")
        path = self._file(name, version)
        if not is_identifier(name) or not path.exists():
            raise NotFound(f"contract {name!r} has no version {version}")
        text = read_text(path)
        digest_path = self._digest_file(name, version)
        recorded = read_text(digest_path).strip() if digest_path.exists() else None
        if recorded != sha256_hex(text):
            raise StorageFailure(f"stored contract {name} v{version} does not match its recorded digest")
        try:
            contract = parse_contract(text)
        except MalformedDocument as exc:
            raise StorageFailure(f"stored contract {name} v{version} is corrupt") from exc
        if (contract.name, contract.version) != (name, version):
            raise StorageFailure(f"{path.name} under {name} holds {contract.name} v{contract.version}")
        return contract

    def read_raw(self, name: str, version: int) -> str:
        """Stored bytes of one version, exactly as written."""
        path = self._file(name, version)
        if not path.exists():
            raise NotFound(f"contract {name!r} has no version {version}")
        return read_text(path)

    def ref(self, name: str, version: Optional[int] = None) -> ContractRef:
        return ContractRef.of(self.get(name, version))


def registry_put(registry: ContractRegistry, contract: Contract) -> ContractRef:
    return registry.put(contract)


def registry_get(registry: ContractRegistry, name: str, version: Optional[int] = None) -> Contract:
    return registry.get(name, version)


def as_field_specs(items: Sequence[Any]) -> tuple[FieldSpec, ...]:
    """Accept FieldSpec instances or their dict form."""
    return tuple(item if isinstance(item, FieldSpec) else FieldSpec.from_dict(item) for item in items)
