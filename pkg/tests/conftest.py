# tests/conftest.py
"""Pytest configuration and shared fixtures."""

from pathlib import Path

import pytest

from pipeforge.contract import ContractRegistry, parse_contract
from pipeforge.workspace import Workspace

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(autouse=True)
def no_workspace_env(monkeypatch):
    """Keep a developer's PIPEFORGE_WORKSPACE from leaking into tests."""
    monkeypatch.delenv(Workspace.ENV_VAR, raising=False)


@pytest.fixture
def workspace(tmp_path):
    """An initialized, empty workspace."""
    return Workspace(tmp_path / "ws").init()


@pytest.fixture
def contract_text():
    """The customer-transactions contract exactly as stored in fixtures/."""
    return (FIXTURES / "customer_transactions.json").read_text(encoding="utf-8").strip()


@pytest.fixture
def customer_contract(contract_text):
    """Parsed customer-transactions contract (hard amount >= 0, soft email present)."""
    return parse_contract(contract_text)


@pytest.fixture
def registry(workspace, customer_contract):
    """A registry holding customer_transactions v1."""
    registry = ContractRegistry(workspace)
    registry.put(customer_contract)
    return registry


@pytest.fixture
def customer_batch():
    """Five-record CSV batch: one negative amount, one missing email."""
    return (FIXTURES / "batch_customer_transactions.csv").read_bytes()


@pytest.fixture
def transaction_rows():
    """Three loads of a transactions table keyed by transaction_id.

    Day 1 brings T001/50 and T002/20, day 2 repeats T002/20 and adds T003/30,
    day 3 corrects T002 to 25.
    """
    return [
        ("2025-08-26", [{"transaction_id": "T001", "amount": 50}, {"transaction_id": "T002", "amount": 20}]),
        ("2025-08-27", [{"transaction_id": "T002", "amount": 20}, {"transaction_id": "T003", "amount": 30}]),
        ("2025-08-28", [{"transaction_id": "T002", "amount": 25}]),
    ]


# Pytest configuration
def pytest_configure(config):
    """Configure pytest markers."""
    config.addinivalue_line("markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')")
    config.addinivalue_line("markers", "integration: marks tests as integration tests")
