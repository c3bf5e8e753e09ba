"""Block and ledger data model: types, hashing, append, and file format.

A ledger is one genesis block followed by data blocks, each block chained
to its predecessor through the chain hash of the previous block. Two
distinct hashes matter:

* ``hash_header(core)`` — SHA-256 of the header core's canonical
  encoding. This is what the validation service (or genesis authority)
  signs, and what the user countersigns together with that signature.
* ``chain_hash(block)`` — SHA-256 of the header core's encoding followed
  by the validating signature bytes. This is the value the *next* block
  stores in ``previous_hash``, which removes any circularity between the
  header and the signatures over it.

All values here are immutable; every operation is a pure function, so the
types are safe to share across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Sequence

from .encoding import DecodeError, Reader, Writer, encode_u32
from .identity import Address, KeyPair, Signature
from .merkle import DIGEST_SIZE, ZERO_DIGEST, merkle_root

# Output stored on a complete transaction when no data-driven code ran.
ZERO_OUTPUT = b"\x00"

DEFAULT_MAX_PAYLOAD = 1 << 20

LEDGER_FILE_MAGIC = b"PBL1"

# Payload envelope prefix for transactions that consume earlier outputs.
_DEPS_MAGIC = b"DEP1"


class LedgerError(ValueError):
    pass


def _check_digest(value: bytes, what: str) -> bytes:
    if len(value) != DIGEST_SIZE:
        raise DecodeError(f"{what} must be {DIGEST_SIZE} bytes, got {len(value)}")
    return value


@dataclass(frozen=True)
class Transaction:
    """A user-signed payload destined for one ledger.

    ``extra_signatures`` carries optional third-party attestations (for
    example a statement issuer countersigning the document); they are
    covered by the user signature and checked only for well-formedness.
    """

    ledger_address: Address
    payload: bytes
    chaincode_id: str | None
    submitted_at: int
    extra_signatures: tuple[Signature, ...]
    user_signature: Signature

    def signing_bytes(self) -> bytes:
        w = Writer()
        w.bytes_field(self.ledger_address.packed)
        w.bytes_field(self.payload)
        w.opt_str_field(self.chaincode_id)
        w.int_field(self.submitted_at)
        w.list_field([s.encode() for s in self.extra_signatures])
        return w.getvalue()

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.signing_bytes())
        w.bytes_field(self.user_signature.encode())
        return w.getvalue()

    @classmethod
    def decode(cls, reader: Reader) -> "Transaction":
        inner = Reader(reader.bytes_field())
        try:
            address = Address.from_packed(inner.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        payload = inner.bytes_field()
        chaincode_id = inner.opt_str_field()
        submitted_at = inner.int_field()
        extra = tuple(Signature.decode_bytes(raw) for raw in inner.list_field())
        inner.expect_end()
        user_signature = Signature.decode_bytes(reader.bytes_field())
        return cls(address, payload, chaincode_id, submitted_at, extra, user_signature)


def new_transaction(
    ledger_address: Address,
    payload: bytes,
    signer: KeyPair,
    *,
    chaincode_id: str | None = None,
    submitted_at: int = 0,
    extra_signatures: Sequence[Signature] = (),
) -> Transaction:
    """Build and user-sign a transaction."""
    tx = Transaction(ledger_address, payload, chaincode_id, submitted_at,
                     tuple(extra_signatures), user_signature=_UNSIGNED)
    return replace(tx, user_signature=signer.sign(tx.signing_bytes()))


_UNSIGNED = Signature(bytes(8), bytes(64))


@dataclass(frozen=True)
class CompleteTransaction:
    """A transaction plus the executing service's output and signature."""

    inner: Transaction
    output: bytes
    executing_signature: Signature

    def signing_bytes(self) -> bytes:
        w = Writer()
        w.bytes_field(self.inner.encode())
        w.bytes_field(self.output)
        return w.getvalue()

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.signing_bytes())
        w.bytes_field(self.executing_signature.encode())
        return w.getvalue()

    @classmethod
    def decode(cls, reader: Reader) -> "CompleteTransaction":
        inner = Reader(reader.bytes_field())
        tx = Transaction.decode(Reader(inner.bytes_field()))
        output = inner.bytes_field()
        inner.expect_end()
        sig = Signature.decode_bytes(reader.bytes_field())
        return cls(tx, output, sig)

    @classmethod
    def decode_bytes(cls, data: bytes) -> "CompleteTransaction":
        reader = Reader(data)
        ct = cls.decode(reader)
        reader.expect_end()
        return ct


def complete_transaction(tx: Transaction, output: bytes, esp: KeyPair) -> CompleteTransaction:
    ct = CompleteTransaction(tx, output, executing_signature=_UNSIGNED)
    return replace(ct, executing_signature=esp.sign(ct.signing_bytes()))


def output_id(ct: CompleteTransaction) -> bytes:
    """Identifier under which later transactions may consume this output."""
    return hashlib.sha256(ct.encode()).digest()


def encode_payload_with_inputs(inputs: Sequence[bytes], body: bytes) -> bytes:
    """Wrap a payload in a dependency envelope naming consumed output ids."""
    parts = [_DEPS_MAGIC, encode_u32(len(inputs))]
    for dep in inputs:
        parts.append(_check_digest(dep, "input id"))
    parts.append(body)
    return b"".join(parts)


def payload_inputs(payload: bytes) -> tuple[tuple[bytes, ...], bytes]:
    """Split a payload into its consumed output ids and the bare body.

    Payloads without the envelope prefix have no inputs.
    """
    if not payload.startswith(_DEPS_MAGIC):
        return (), payload
    pos = len(_DEPS_MAGIC)
    if len(payload) < pos + 4:
        raise DecodeError("truncated dependency envelope")
    count = int.from_bytes(payload[pos:pos + 4], "big")
    pos += 4
    end = pos + count * DIGEST_SIZE
    if len(payload) < end:
        raise DecodeError("truncated dependency envelope")
    ids = tuple(payload[i:i + DIGEST_SIZE] for i in range(pos, end, DIGEST_SIZE))
    return ids, payload[end:]


@dataclass(frozen=True)
class BlockHeaderCore:
    """The signed part of a block header."""

    previous_hash: bytes
    data_hash: bytes
    exec_sig_root: bytes
    ordering_signature: Signature
    height: int
    created_at: int

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.previous_hash)
        w.bytes_field(self.data_hash)
        w.bytes_field(self.exec_sig_root)
        w.bytes_field(self.ordering_signature.encode())
        w.int_field(self.height)
        w.int_field(self.created_at)
        return w.getvalue()

    @classmethod
    def decode(cls, reader: Reader) -> "BlockHeaderCore":
        previous_hash = _check_digest(reader.bytes_field(), "previous hash")
        data_hash = _check_digest(reader.bytes_field(), "data hash")
        exec_sig_root = _check_digest(reader.bytes_field(), "executing signature root")
        ordering_signature = Signature.decode_bytes(reader.bytes_field())
        height = reader.int_field()
        created_at = reader.int_field()
        return cls(previous_hash, data_hash, exec_sig_root, ordering_signature, height, created_at)


@dataclass(frozen=True)
class DataBlock:
    core: BlockHeaderCore
    transactions: tuple[CompleteTransaction, ...]
    validation_signature: Signature
    user_signature: Signature

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.core.encode())
        w.list_field([ct.encode() for ct in self.transactions])
        w.bytes_field(self.validation_signature.encode())
        w.bytes_field(self.user_signature.encode())
        return w.getvalue()

    @classmethod
    def decode(cls, reader: Reader) -> "DataBlock":
        core = BlockHeaderCore.decode(Reader(reader.bytes_field()))
        txs = tuple(CompleteTransaction.decode_bytes(raw) for raw in reader.list_field())
        validation_signature = Signature.decode_bytes(reader.bytes_field())
        user_signature = Signature.decode_bytes(reader.bytes_field())
        return cls(core, txs, validation_signature, user_signature)

    @classmethod
    def decode_bytes(cls, data: bytes) -> "DataBlock":
        reader = Reader(data)
        block = cls.decode(reader)
        reader.expect_end()
        return block


@dataclass(frozen=True)
class ConfigEntry:
    """One genesis configuration entry."""

    key: str
    value: bytes

    def encode(self) -> bytes:
        w = Writer()
        w.str_field(self.key)
        w.bytes_field(self.value)
        return w.getvalue()

    @classmethod
    def decode_bytes(cls, data: bytes) -> "ConfigEntry":
        reader = Reader(data)
        key = reader.str_field()
        value = reader.bytes_field()
        reader.expect_end()
        return cls(key, value)


USER_KEY_CONFIG = "user_public_key"
ESP_KEYS_CONFIG = "esp_public_keys"
OSP_KEYS_CONFIG = "osp_public_keys"
VSP_KEYS_CONFIG = "vsp_public_keys"
GBA_KEY_CONFIG = "gba_public_key"


@dataclass(frozen=True)
class GenesisBlock:
    """The configuration block opening a ledger; previous hash all zeros."""

    core: BlockHeaderCore
    config_entries: tuple[ConfigEntry, ...]
    gba_signature: Signature
    user_signature: Signature

    def config_value(self, key: str) -> bytes | None:
        for entry in self.config_entries:
            if entry.key == key:
                return entry.value
        return None

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.core.encode())
        w.list_field([e.encode() for e in self.config_entries])
        w.bytes_field(self.gba_signature.encode())
        w.bytes_field(self.user_signature.encode())
        return w.getvalue()

    @classmethod
    def decode(cls, reader: Reader) -> "GenesisBlock":
        core = BlockHeaderCore.decode(Reader(reader.bytes_field()))
        entries = tuple(ConfigEntry.decode_bytes(raw) for raw in reader.list_field())
        gba_signature = Signature.decode_bytes(reader.bytes_field())
        user_signature = Signature.decode_bytes(reader.bytes_field())
        return cls(core, entries, gba_signature, user_signature)

    @classmethod
    def decode_bytes(cls, data: bytes) -> "GenesisBlock":
        reader = Reader(data)
        block = cls.decode(reader)
        reader.expect_end()
        return block


Block = DataBlock | GenesisBlock


@dataclass(frozen=True)
class Ledger:
    genesis: GenesisBlock
    blocks: tuple[DataBlock, ...]
    ledger_address: Address

    def __len__(self) -> int:
        return 1 + len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1] if self.blocks else self.genesis

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.genesis.encode())
        w.list_field([b.encode() for b in self.blocks])
        w.bytes_field(self.ledger_address.packed)
        return w.getvalue()

    @classmethod
    def decode_bytes(cls, data: bytes) -> "Ledger":
        reader = Reader(data)
        genesis = GenesisBlock.decode(Reader(reader.bytes_field()))
        blocks = tuple(DataBlock.decode_bytes(raw) for raw in reader.list_field())
        try:
            address = Address.from_packed(reader.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        reader.expect_end()
        return cls(genesis, blocks, address)


def hash_header(core: BlockHeaderCore) -> bytes:
    """Digest of the header core; the message signed by VSP and user."""
    return hashlib.sha256(core.encode()).digest()


def chain_hash(block: Block) -> bytes:
    """The value the next block must store as its previous hash."""
    sig = block.gba_signature if isinstance(block, GenesisBlock) else block.validation_signature
    return hashlib.sha256(block.core.encode() + sig.value).digest()


def block_user_signing_bytes(core: BlockHeaderCore, validating_signature: Signature) -> bytes:
    """Message the user countersigns on a block."""
    return hash_header(core) + validating_signature.value


def data_hash_of(transactions: Sequence[CompleteTransaction]) -> bytes:
    return merkle_root([ct.encode() for ct in transactions])


def exec_sig_root_of(transactions: Sequence[CompleteTransaction]) -> bytes:
    return merkle_root([ct.executing_signature.value for ct in transactions])


def config_data_hash(entries: Sequence[ConfigEntry]) -> bytes:
    return merkle_root([e.encode() for e in entries])


@dataclass(frozen=True)
class BlockCandidate:
    """An ordered, ordering-signed block awaiting validation.

    The previous hash, height, validation signature, and user signature
    are still missing; the validation service and user supply them.
    """

    ledger_address: Address
    data_hash: bytes
    exec_sig_root: bytes
    ordering_signature: Signature
    created_at: int
    transactions: tuple[CompleteTransaction, ...]

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.ledger_address.packed)
        w.bytes_field(self.data_hash)
        w.bytes_field(self.exec_sig_root)
        w.bytes_field(self.ordering_signature.encode())
        w.int_field(self.created_at)
        w.list_field([ct.encode() for ct in self.transactions])
        return w.getvalue()

    @classmethod
    def decode_bytes(cls, data: bytes) -> "BlockCandidate":
        reader = Reader(data)
        try:
            address = Address.from_packed(reader.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        data_hash = _check_digest(reader.bytes_field(), "data hash")
        exec_sig_root = _check_digest(reader.bytes_field(), "executing signature root")
        ordering_signature = Signature.decode_bytes(reader.bytes_field())
        created_at = reader.int_field()
        txs = tuple(CompleteTransaction.decode_bytes(raw) for raw in reader.list_field())
        reader.expect_end()
        return cls(address, data_hash, exec_sig_root, ordering_signature, created_at, txs)


def build_candidate(
    ledger_address: Address,
    transactions: Sequence[CompleteTransaction],
    osp: KeyPair,
    created_at: int,
) -> BlockCandidate:
    """Order transactions into a candidate and sign the executing-signature root."""
    if not transactions:
        raise LedgerError("a block needs at least one transaction")
    txs = tuple(transactions)
    root = exec_sig_root_of(txs)
    return BlockCandidate(
        ledger_address=ledger_address,
        data_hash=data_hash_of(txs),
        exec_sig_root=root,
        ordering_signature=osp.sign(root),
        created_at=created_at,
        transactions=txs,
    )


def build_genesis(
    config_entries: Sequence[ConfigEntry],
    user_public_key: bytes,
    gba: KeyPair,
    user: KeyPair,
    created_at: int = 0,
) -> GenesisBlock:
    """Assemble and sign a genesis block, inserting the user key if absent."""
    entries = tuple(config_entries)
    if not any(e.key == USER_KEY_CONFIG for e in entries):
        entries = (ConfigEntry(USER_KEY_CONFIG, user_public_key),) + entries
    core = BlockHeaderCore(
        previous_hash=ZERO_DIGEST,
        data_hash=config_data_hash(entries),
        exec_sig_root=ZERO_DIGEST,
        ordering_signature=_UNSIGNED,
        height=0,
        created_at=created_at,
    )
    gba_sig = gba.sign(hash_header(core))
    user_sig = user.sign(block_user_signing_bytes(core, gba_sig))
    return GenesisBlock(core, entries, gba_sig, user_sig)


def seal_candidate(
    candidate: BlockCandidate,
    previous_hash: bytes,
    height: int,
    vsp: KeyPair,
) -> tuple[BlockHeaderCore, Signature]:
    """Complete a candidate's header and produce the validation signature."""
    core = BlockHeaderCore(
        previous_hash=previous_hash,
        data_hash=candidate.data_hash,
        exec_sig_root=candidate.exec_sig_root,
        ordering_signature=candidate.ordering_signature,
        height=height,
        created_at=candidate.created_at,
    )
    return core, vsp.sign(hash_header(core))


def append_block(
    ledger: Ledger,
    candidate: BlockCandidate,
    vsp_signer: KeyPair,
    user_signer: KeyPair,
    keys=None,
) -> Ledger:
    """Append a candidate block to a valid ledger.

    Sets the previous hash from the current tip, has the validation
    signer sign the header digest and the user countersign, and returns
    the extended ledger. When a key directory is supplied the candidate's
    pre-signature conditions (data hash, executing signatures, ordering
    signature) are verified first; without keys only the recomputable
    hashes are checked.
    """
    from .validation import validate_candidate, validate_ledger  # local: avoids import cycle

    report = validate_ledger(ledger, keys) if keys is not None else None
    if report is not None and not report.ok:
        failure = report.first_failure
        raise LedgerError(f"input ledger invalid: {failure.condition} at height {failure.height}")

    if not candidate.transactions:
        raise LedgerError("a block needs at least one transaction")
    if candidate.data_hash != data_hash_of(candidate.transactions):
        raise LedgerError("rejected: block.data_hash")
    if candidate.exec_sig_root != exec_sig_root_of(candidate.transactions):
        raise LedgerError("rejected: block.ordering_signature (stale executing-signature root)")
    if keys is not None:
        problem = validate_candidate(candidate, keys)
        if problem is not None:
            raise LedgerError(f"rejected: {problem}")

    tip = ledger.tip
    core, validation_signature = seal_candidate(
        candidate, chain_hash(tip), tip.core.height + 1, vsp_signer,
    )
    user_signature = user_signer.sign(block_user_signing_bytes(core, validation_signature))
    block = DataBlock(core, candidate.transactions, validation_signature, user_signature)
    return Ledger(ledger.genesis, ledger.blocks + (block,), ledger.ledger_address)


def ledger_to_bytes(ledger: Ledger) -> bytes:
    """Serialize to the ledger file format: magic then canonical encoding."""
    return LEDGER_FILE_MAGIC + ledger.encode()


def ledger_from_bytes(data: bytes) -> Ledger:
    if not data.startswith(LEDGER_FILE_MAGIC):
        raise DecodeError("not a ledger file (bad magic)")
    return Ledger.decode_bytes(data[len(LEDGER_FILE_MAGIC):])
