"""Deterministic fixture ledgers for tests, demos, and reports.

Builds ledgers straight through the core operations (no network), with
every key pair derived from a seed, so the same seed always yields the
same bytes.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from .chaincode import DEFAULT_REGISTRY
from .encoding import DecodeError
from .identity import Address, KeyPair, Signature, keypair_from_seed
from .ledger import (
    ConfigEntry,
    DataBlock,
    GenesisBlock,
    Ledger,
    append_block,
    build_candidate,
    build_genesis,
    complete_transaction,
    new_transaction,
)
from .validation import KeyDirectory


def keypair_for(label: str, seed: int = 0) -> KeyPair:
    raw = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return keypair_from_seed(raw)


class CountingSigner:
    """Wraps a key pair and counts signature operations."""

    def __init__(self, inner: KeyPair) -> None:
        self.inner = inner
        self.count = 0

    def sign(self, message: bytes) -> Signature:
        self.count += 1
        return self.inner.sign(message)

    @property
    def public(self) -> bytes:
        return self.inner.public


@dataclass
class DemoLedger:
    ledger: Ledger
    keys: KeyDirectory
    user: KeyPair
    gba: KeyPair
    esp: KeyPair
    osp: KeyPair
    vsp: KeyPair


def build_demo_ledger(
    n_blocks: int,
    txs_per_block: int = 1,
    seed: int = 0,
    chaincode_id: str | None = None,
    payload_fn=None,
) -> DemoLedger:
    """A valid ledger with ``n_blocks`` data blocks.

    ``payload_fn(height, i)`` supplies payload bytes; the default embeds
    the position plus seeded randomness.
    """
    rng = random.Random(seed)
    user = keypair_for("user", seed)
    gba = keypair_for("gba", seed)
    esp = keypair_for("esp", seed)
    osp = keypair_for("osp", seed)
    vsp = keypair_for("vsp", seed)
    address = Address.ledger(user.public)
    keys = KeyDirectory.build(user.public, [esp.public], [osp.public], [vsp.public], [gba.public])

    config = [
        ConfigEntry("note", b"fixture ledger"),
        ConfigEntry("esp_public_keys", esp.public),
        ConfigEntry("osp_public_keys", osp.public),
        ConfigEntry("vsp_public_keys", vsp.public),
        ConfigEntry("gba_public_key", gba.public),
    ]
    genesis = build_genesis(config, user.public, gba, user, created_at=1_000)
    ledger = Ledger(genesis, (), address)

    definition = DEFAULT_REGISTRY.get(chaincode_id) if chaincode_id is not None else None
    state = definition.initial_state if definition is not None else b""
    for height in range(1, n_blocks + 1):
        txs = []
        for i in range(txs_per_block):
            if payload_fn is not None:
                payload = payload_fn(height, i)
            elif definition is not None:
                payload = str(rng.randrange(-500, 500)).encode()
            else:
                payload = f"payload {height}/{i} {rng.getrandbits(32):08x}".encode()
            tx = new_transaction(address, payload, user,
                                 chaincode_id=chaincode_id,
                                 submitted_at=1_000 * height + i)
            if definition is not None:
                state, output = definition.step(state, payload)
            else:
                output = b"\x00"
            txs.append(complete_transaction(tx, output, esp))
        candidate = build_candidate(address, txs, osp, created_at=1_000 * height + 500)
        ledger = append_block(ledger, candidate, vsp, user)
    return DemoLedger(ledger, keys, user, gba, esp, osp, vsp)


def block_extent(ledger: Ledger, height: int) -> bytes:
    """Canonical bytes of the block at ``height`` (0 = genesis)."""
    if height == 0:
        return ledger.genesis.encode()
    return ledger.blocks[height - 1].encode()


def mutate_block_byte(ledger: Ledger, height: int, offset: int, xor: int) -> Ledger:
    """Flip one byte inside one block's canonical encoding.

    Raises :class:`DecodeError` when the mutation breaks the encoding
    itself — a structural detection for callers counting outcomes.
    """
    if not 0 < xor < 256:
        raise ValueError("xor must change the byte")
    raw = bytearray(block_extent(ledger, height))
    raw[offset] ^= xor
    if height == 0:
        genesis = GenesisBlock.decode_bytes(bytes(raw))
        return Ledger(genesis, ledger.blocks, ledger.ledger_address)
    block = DataBlock.decode_bytes(bytes(raw))
    blocks = ledger.blocks[:height - 1] + (block,) + ledger.blocks[height:]
    return Ledger(ledger.genesis, blocks, ledger.ledger_address)


__all__ = [
    "CountingSigner",
    "DemoLedger",
    "DecodeError",
    "block_extent",
    "build_demo_ledger",
    "keypair_for",
    "mutate_block_byte",
]
