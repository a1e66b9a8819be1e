"""Tests for contract parsing, serialization, linting and the registry."""

import json

import pytest

from pipeforge.contract import (
    Contract,
    ContractRef,
    ContractRegistry,
    FieldSpec,
    Rule,
    contract_digest,
    lint_contract,
    parse_contract,
    serialize_contract,
)
from pipeforge.errors import MalformedDocument, NotFound, SchemaViolation, StorageFailure, VersionConflict
from pipeforge.utils import canonical_json, sha256_hex

MINIMAL = {"name": "t", "version": 1, "fields": [{"name": "a", "datatype": "integer", "required": True}], "rules": []}


def _doc(**overrides):
    data = json.loads(json.dumps(MINIMAL))
    data.update(overrides)
    return json.dumps(data)


class TestParseContract:
    """Tests for parse_contract()."""

    def test_minimal_document(self):
        """One field, no rules."""
        contract = parse_contract(json.dumps(MINIMAL))
        assert contract.name == "t"
        assert len(contract.fields) == 1
        assert contract.rules == ()

    def test_customer_contract(self, customer_contract):
        """The range rule is hard and the required rule soft."""
        rules = {rule.id: rule for rule in customer_contract.rules}
        assert rules["amount_nonneg"].severity == "hard"
        assert rules["amount_nonneg"].kind == "range"
        assert rules["amount_nonneg"].params == {"min": 0}
        assert rules["email_present"].severity == "soft"
        assert customer_contract.field("amount").datatype == "decimal"

    def test_rule_on_undeclared_field(self):
        """Rules may only reference declared fields."""
        rules = [{"id": "zip_fmt", "field": "zip", "kind": "format", "params": {"pattern": "\\d+"}, "severity": "hard"}]
        with pytest.raises(SchemaViolation, match="undeclared field 'zip'"):
            parse_contract(_doc(rules=rules))

    def test_not_json(self):
        """Non-JSON text is malformed."""
        with pytest.raises(MalformedDocument):
            parse_contract("{name: t")

    def test_root_must_be_object(self):
        """A JSON array is not a contract."""
        with pytest.raises(SchemaViolation):
            parse_contract("[]")

    @pytest.mark.parametrize(
        "overrides",
        [
            {"owner": "finance"},
            {"version": 0},
            {"version": "1"},
            {"fields": [{"name": "a", "datatype": "money"}]},
            {"fields": [{"name": "a", "datatype": "text"}, {"name": "a", "datatype": "text"}]},
            {"rules": [{"id": "r", "field": "a", "kind": "required", "severity": "blocking"}]},
            {"rules": [{"id": "r", "field": "a", "kind": "range", "params": {}, "severity": "hard"}]},
            {"rules": [{"id": "r", "field": "a", "kind": "range", "params": {"min": 5, "max": 1}, "severity": "hard"}]},
            {"rules": [{"id": "r", "field": "a", "kind": "enum", "params": {"allowed": []}, "severity": "soft"}]},
            {"rules": [{"id": "r", "field": "a", "kind": "format", "params": {"pattern": "("}, "severity": "soft"}]},
            {
                "rules": [
                    {"id": "r", "field": "a", "kind": "required", "severity": "hard"},
                    {"id": "r", "field": "a", "kind": "required", "severity": "soft"},
                ]
            },
        ],
    )
    def test_schema_violations(self, overrides):
        """Invalid documents are rejected with SchemaViolation."""
        with pytest.raises(SchemaViolation):
            parse_contract(_doc(**overrides))

    def test_missing_required_key(self):
        """name, version and fields are mandatory."""
        data = dict(MINIMAL)
        del data["fields"]
        with pytest.raises(SchemaViolation, match="fields"):
            parse_contract(json.dumps(data))

    def test_aliases(self):
        """Aliases map to their declared field and may not collide."""
        contract = Contract(
            "c", 1, (FieldSpec("amount", "decimal", True, ("amt",)), FieldSpec("email", "text"))
        )
        assert contract.name_map() == {"amount": "amount", "amt": "amount", "email": "email"}
        with pytest.raises(SchemaViolation):
            Contract("c", 1, (FieldSpec("amount", "decimal", aliases=("email",)), FieldSpec("email", "text")))


class TestSerializeContract:
    """Tests for canonical serialization."""

    def test_fixture_serializes_canonically(self, contract_text, customer_contract):
        """Serialization equals the canonical form of the stored fixture."""
        assert serialize_contract(customer_contract) == canonical_json(json.loads(contract_text))

    def test_round_trip_is_identity(self, customer_contract):
        """Parsing the serialization yields the same contract."""
        text = serialize_contract(customer_contract)
        assert parse_contract(text) == customer_contract
        assert serialize_contract(parse_contract(text)) == text

    def test_digest_ignores_whitespace_and_key_order(self, contract_text):
        """Re-formatted documents share one digest."""
        pretty = json.dumps(json.loads(contract_text), indent=4, sort_keys=False)
        assert contract_digest(parse_contract(pretty)) == contract_digest(parse_contract(contract_text))

    def test_no_trailing_whitespace(self, customer_contract):
        """The canonical form has no insignificant whitespace."""
        text = serialize_contract(customer_contract)
        assert text == text.strip()
        assert ": " not in text and ", " not in text


class TestLintContract:
    """Tests for lint_contract()."""

    def test_customer_contract_findings(self, customer_contract):
        """Required fields without a hard required rule are reported."""
        codes = {(issue.code, issue.field) for issue in lint_contract(customer_contract)}
        assert ("required-without-hard-rule", "client_id") in codes
        assert ("required-without-hard-rule", "amount") in codes
        assert all(field != "email" for _, field in codes)

    def test_clean_contract(self):
        """A fully covered contract lints clean."""
        contract = Contract(
            "clean",
            1,
            (FieldSpec("id", "text", True), FieldSpec("amount", "decimal")),
            (
                Rule("id_required", "required", "hard", "id"),
                Rule("amount_nonneg", "range", "hard", "amount", {"min": 0}),
            ),
        )
        assert lint_contract(contract) == []

    def test_kind_datatype_mismatch(self):
        """A range rule on a text field is flagged."""
        contract = Contract(
            "c", 1, (FieldSpec("code", "text"),), (Rule("code_range", "range", "soft", "code", {"min": 1}),)
        )
        issues = lint_contract(contract)
        assert [(i.code, i.rule_id) for i in issues] == [("kind-datatype-mismatch", "code_range")]

    def test_enum_values_checked_against_datatype(self):
        """Enum values that cannot be coerced are flagged."""
        contract = Contract(
            "c", 1, (FieldSpec("qty", "integer"),), (Rule("qty_set", "enum", "hard", "qty", {"allowed": [1, "two"]}),)
        )
        assert [i.code for i in lint_contract(contract)] == ["enum-value-type"]

    def test_overlap_and_batch_level(self):
        """Overlapping constraints and field-less rules are reported."""
        contract = Contract(
            "c",
            1,
            (FieldSpec("qty", "integer"),),
            (
                Rule("qty_set", "enum", "hard", "qty", {"allowed": [1, 2]}),
                Rule("qty_range", "range", "hard", "qty", {"max": 10}),
                Rule("batch_rule", "required", "soft"),
            ),
        )
        codes = [i.code for i in lint_contract(contract)]
        assert "overlapping-constraints" in codes
        assert "batch-level-rule" in codes


class TestContractRegistry:
    """Tests for ContractRegistry."""

    def test_put_and_get(self, workspace, customer_contract):
        """A stored contract reads back equal and addressable."""
        registry = ContractRegistry(workspace)
        ref = registry.put(customer_contract)
        assert ref == ContractRef("customer_transactions", 1, contract_digest(customer_contract))
        assert registry.get("customer_transactions", 1) == customer_contract
        assert registry.get("customer_transactions") == customer_contract

    def test_stored_bytes_are_canonical(self, registry, customer_contract):
        """The stored file is the canonical serialization."""
        raw = registry.read_raw("customer_transactions", 1)
        assert raw == serialize_contract(customer_contract)
        assert registry.ref("customer_transactions").content_digest == sha256_hex(raw)

    def test_versions_increase(self, registry, customer_contract):
        """Later versions become latest; older ones stay readable."""
        v2 = Contract(customer_contract.name, 2, customer_contract.fields, customer_contract.rules[:1])
        registry.put(v2)
        assert registry.versions("customer_transactions") == [1, 2]
        assert registry.latest_version("customer_transactions") == 2
        assert registry.get("customer_transactions").version == 2
        assert registry.get("customer_transactions", 1) == customer_contract

    def test_version_conflict(self, registry, customer_contract):
        """Re-putting an existing or older version conflicts."""
        with pytest.raises(VersionConflict):
            registry.put(customer_contract)

    def test_unknown_name_or_version(self, registry):
        """Unknown names and versions are NotFound."""
        with pytest.raises(NotFound):
            registry.get("orders")
        with pytest.raises(NotFound):
            registry.get("customer_transactions", 9)
        with pytest.raises(NotFound):
            registry.get("../escape")

    def test_names(self, registry):
        """names() lists stored contracts."""
        assert registry.names() == ["customer_transactions"]
        assert ContractRegistry(registry.workspace).versions("missing") == []

    def test_tampered_file_fails_digest_check(self, registry, customer_contract):
        """Edited bytes no longer match the digest recorded at put time."""
        path = registry.workspace.path("contracts", "customer_transactions", "v1.json")
        assert (path.parent / "v1.sha256").read_text().strip() == contract_digest(customer_contract)
        loose = Contract(customer_contract.name, 1, customer_contract.fields, customer_contract.rules[:1])
        path.write_text(serialize_contract(loose), encoding="utf-8")
        with pytest.raises(StorageFailure, match="recorded digest"):
            registry.get("customer_transactions", 1)

    def test_missing_digest_fails(self, registry):
        """A version without its recorded digest is not trusted."""
        registry.workspace.path("contracts", "customer_transactions", "v1.sha256").unlink()
        with pytest.raises(StorageFailure):
            registry.get("customer_transactions")
        assert registry.versions("customer_transactions") == [1]
