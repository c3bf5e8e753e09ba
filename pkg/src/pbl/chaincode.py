"""Deterministic data-driven computations run by the executing service.

A chaincode folds a state through transaction payloads and emits one
output per transaction; outputs land on the ledger next to the raw data,
so anyone can re-run the fold and audit them. Nondeterministic code would
defeat that audit, so the built-ins are required to be deterministic.

Two built-ins ship: ``null`` (ignores the payload, zero output) and
``balance`` (signed-integer accumulator over decimal payloads).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable

from .identity import Address
from .ledger import ZERO_OUTPUT, Ledger, Transaction, payload_inputs

StepFn = Callable[[bytes, bytes], tuple[bytes, bytes]]


class ChaincodeError(ValueError):
    """A payload the chaincode cannot process; reported back to the user."""


@dataclass(frozen=True)
class ChaincodeDef:
    """A named deterministic step function with its initial state."""

    id: str
    step: StepFn
    initial_state: bytes = b""


_BALANCE_PAYLOAD = re.compile(rb"\A[+-]?[0-9]{1,18}\Z")


def _balance_step(state: bytes, payload: bytes) -> tuple[bytes, bytes]:
    if not _BALANCE_PAYLOAD.match(payload):
        raise ChaincodeError(
            "balance payload must be an optional sign and 1-18 decimal digits"
        )
    total = int(state) + int(payload)
    out = str(total).encode("ascii")
    return out, out


def _null_step(state: bytes, payload: bytes) -> tuple[bytes, bytes]:
    return state, ZERO_OUTPUT


BALANCE = ChaincodeDef("balance", _balance_step, initial_state=b"0")
NULL = ChaincodeDef("null", _null_step)


class ChaincodeRegistry:
    """Chaincode definitions keyed by id."""

    def __init__(self, defs: tuple[ChaincodeDef, ...] = (BALANCE, NULL)) -> None:
        self._defs = {d.id: d for d in defs}

    def get(self, chaincode_id: str) -> ChaincodeDef | None:
        return self._defs.get(chaincode_id)

    def register(self, definition: ChaincodeDef) -> None:
        self._defs[definition.id] = definition


DEFAULT_REGISTRY = ChaincodeRegistry()


@dataclass
class ExecutionContext:
    """Latest folded state per chaincode for one ledger.

    Reconstructable at any time by replaying the ledger; never stored
    on-chain.
    """

    ledger_address: Address
    latest_state: dict[str, bytes] = field(default_factory=dict)

    def state_of(self, definition: ChaincodeDef) -> bytes:
        return self.latest_state.get(definition.id, definition.initial_state)


def execute(definition: ChaincodeDef, ctx: ExecutionContext, tx: Transaction) -> bytes:
    """Run one transaction through a chaincode, advancing the context.

    Raises :class:`ChaincodeError` with a parse reason on malformed
    payloads; the transaction is then rejected back to the user rather
    than silently zeroed.
    """
    if tx.chaincode_id != definition.id:
        raise ChaincodeError(
            f"transaction names chaincode {tx.chaincode_id!r}, not {definition.id!r}"
        )
    # The chaincode sees the payload body; dependency ids are routing data.
    _, body = payload_inputs(tx.payload)
    new_state, output = definition.step(ctx.state_of(definition), body)
    ctx.latest_state[definition.id] = new_state
    return output


@dataclass(frozen=True)
class OutputMismatch:
    height: int
    tx_index: int
    expected: bytes
    stored: bytes


@dataclass(frozen=True)
class ReplayResult:
    final_state: bytes
    mismatches: tuple[OutputMismatch, ...]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def replay(definition: ChaincodeDef, ledger: Ledger) -> ReplayResult:
    """Re-run a chaincode over a ledger and audit the stored outputs.

    Folds the step function over every transaction naming this chaincode,
    in ledger order, and reports each position whose stored output differs
    from the recomputed one.
    """
    state = definition.initial_state
    mismatches: list[OutputMismatch] = []
    for height, block in enumerate(ledger.blocks, start=1):
        for i, ct in enumerate(block.transactions):
            if ct.inner.chaincode_id != definition.id:
                continue
            _, body = payload_inputs(ct.inner.payload)
            state, expected = definition.step(state, body)
            if expected != ct.output:
                mismatches.append(OutputMismatch(height, i, expected, ct.output))
    return ReplayResult(state, tuple(mismatches))


def context_from_ledger(
    ledger: Ledger, registry: ChaincodeRegistry = DEFAULT_REGISTRY
) -> ExecutionContext:
    """Rebuild the execution context implied by a ledger's history."""
    ctx = ExecutionContext(ledger.ledger_address)
    for block in ledger.blocks:
        for ct in block.transactions:
            cc_id = ct.inner.chaincode_id
            if cc_id is None:
                continue
            definition = registry.get(cc_id)
            if definition is None:
                continue
            _, body = payload_inputs(ct.inner.payload)
            new_state, _ = definition.step(ctx.state_of(definition), body)
            ctx.latest_state[cc_id] = new_state
    return ctx
