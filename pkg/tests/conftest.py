from __future__ import annotations

import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent))

from pbl.fixtures import build_demo_ledger

FIXTURES = pathlib.Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> pathlib.Path:
    return FIXTURES


@pytest.fixture(scope="session")
def demo5():
    """A valid 5-block ledger with 2 transactions per block."""
    return build_demo_ledger(5, txs_per_block=2, seed=1)


@pytest.fixture(scope="session")
def demo10():
    return build_demo_ledger(10, txs_per_block=2, seed=2)
