"""Wire messages exchanged between the user agent and service providers.

Every message is a tagged union member; a frame is a 4-byte big-endian
length followed by the body, whose first byte is the tag. Refusals carry
stable enumerated reason codes so behaviour is testable across versions.
"""

from __future__ import annotations

from dataclasses import dataclass

from .encoding import DecodeError, Reader, Writer, encode_u32
from .identity import Address, Signature
from .ledger import (
    BlockCandidate,
    BlockHeaderCore,
    CompleteTransaction,
    ConfigEntry,
    DataBlock,
    GenesisBlock,
    Transaction,
)
from .validation import KeyDirectory

# Refusal codes (stable).
BAD_USER_SIGNATURE = "bad_user_signature"
BAD_VSP_SIGNATURE = "bad_vsp_signature"
UNKNOWN_CHAINCODE = "unknown_chaincode"
MALFORMED_PAYLOAD = "malformed_payload"
PAYLOAD_TOO_LARGE = "payload_too_large"
UNREGISTERED_SIGNER = "unregistered_signer"
KYC_DENIED = "kyc_denied"
MISSING_USER_KEY = "missing_user_key"
DUPLICATE_LEDGER = "duplicate_ledger"
UNKNOWN_ADDRESS = "unknown_address"
NOT_EXTENDING_TIP = "not_extending_tip"
STALE_TIP = "stale_tip"
DEPENDENCY_VIOLATION = "dependency_violation"
EMPTY_BLOCK = "empty_block"
OSP_UNAVAILABLE = "osp_unavailable"
VSP_UNAVAILABLE = "vsp_unavailable"
STORAGE_UNAVAILABLE = "storage_unavailable"
UNSUPPORTED = "unsupported"

# Query kinds.
Q_ROUND_START_VSP = "round_start_vsp"
Q_ROUND_START_OSP = "round_start_osp"
Q_MAYBE_CUT = "maybe_cut"
Q_GET_LEDGER = "get_ledger"
Q_LIST_LEDGERS = "list_ledgers"
Q_GET_ROOT_RECORD = "get_root_record"
Q_PUT_ROOT_RECORD = "put_root_record"


@dataclass(frozen=True)
class SubmitTx:
    tx: Transaction
    osp_id: str
    prior_state: bytes | None = None

    TAG = 1

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.tx.encode())
        w.str_field(self.osp_id)
        w.opt_bytes_field(self.prior_state)

    @classmethod
    def decode_body(cls, r: Reader) -> "SubmitTx":
        tx = Transaction.decode(Reader(r.bytes_field()))
        osp_id = r.str_field()
        prior_state = r.opt_bytes_field()
        return cls(tx, osp_id, prior_state)


@dataclass(frozen=True)
class CompleteTx:
    ct: CompleteTransaction

    TAG = 2

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.ct.encode())

    @classmethod
    def decode_body(cls, r: Reader) -> "CompleteTx":
        return cls(CompleteTransaction.decode_bytes(r.bytes_field()))


@dataclass(frozen=True)
class BlockCandidateMsg:
    candidate: BlockCandidate

    TAG = 3

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.candidate.encode())

    @classmethod
    def decode_body(cls, r: Reader) -> "BlockCandidateMsg":
        return cls(BlockCandidate.decode_bytes(r.bytes_field()))


@dataclass(frozen=True)
class ValidatedBlockMsg:
    """A candidate sealed by the validation service, awaiting the user."""

    ledger_address: Address
    core: BlockHeaderCore
    transactions: tuple[CompleteTransaction, ...]
    validation_signature: Signature

    TAG = 4

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.ledger_address.packed)
        w.bytes_field(self.core.encode())
        w.list_field([ct.encode() for ct in self.transactions])
        w.bytes_field(self.validation_signature.encode())

    @classmethod
    def decode_body(cls, r: Reader) -> "ValidatedBlockMsg":
        try:
            address = Address.from_packed(r.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        core = BlockHeaderCore.decode(Reader(r.bytes_field()))
        txs = tuple(CompleteTransaction.decode_bytes(raw) for raw in r.list_field())
        sig = Signature.decode_bytes(r.bytes_field())
        return cls(address, core, txs, sig)


@dataclass(frozen=True)
class CommitBlockMsg:
    ledger_address: Address
    block: DataBlock | GenesisBlock

    TAG = 5

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.ledger_address.packed)
        is_genesis = isinstance(self.block, GenesisBlock)
        w.bytes_field(b"\x00" if is_genesis else b"\x01")
        w.bytes_field(self.block.encode())

    @classmethod
    def decode_body(cls, r: Reader) -> "CommitBlockMsg":
        try:
            address = Address.from_packed(r.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        kind = r.bytes_field()
        raw = r.bytes_field()
        if kind == b"\x00":
            block: DataBlock | GenesisBlock = GenesisBlock.decode_bytes(raw)
        elif kind == b"\x01":
            block = DataBlock.decode_bytes(raw)
        else:
            raise DecodeError(f"unknown block kind {kind!r}")
        return cls(address, block)


@dataclass(frozen=True)
class GenesisRequest:
    user_public_key: bytes
    config_entries: tuple[ConfigEntry, ...]
    kyc_blob: bytes

    TAG = 6

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.user_public_key)
        w.list_field([e.encode() for e in self.config_entries])
        w.bytes_field(self.kyc_blob)

    @classmethod
    def decode_body(cls, r: Reader) -> "GenesisRequest":
        key = r.bytes_field()
        entries = tuple(ConfigEntry.decode_bytes(raw) for raw in r.list_field())
        kyc = r.bytes_field()
        return cls(key, entries, kyc)


@dataclass(frozen=True)
class GenesisResponse:
    """A genesis block signed by the authority; the user signature is
    still the zero placeholder and is added client-side."""

    genesis: GenesisBlock

    TAG = 7

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.genesis.encode())

    @classmethod
    def decode_body(cls, r: Reader) -> "GenesisResponse":
        return cls(GenesisBlock.decode_bytes(r.bytes_field()))


@dataclass(frozen=True)
class Query:
    kind: str
    params: bytes = b""

    TAG = 8

    def encode_body(self, w: Writer) -> None:
        w.str_field(self.kind)
        w.bytes_field(self.params)

    @classmethod
    def decode_body(cls, r: Reader) -> "Query":
        return cls(r.str_field(), r.bytes_field())


@dataclass(frozen=True)
class QueryResponse:
    payload: bytes

    TAG = 9

    def encode_body(self, w: Writer) -> None:
        w.bytes_field(self.payload)

    @classmethod
    def decode_body(cls, r: Reader) -> "QueryResponse":
        return cls(r.bytes_field())


@dataclass(frozen=True)
class Ack:
    info: str = ""

    TAG = 10

    def encode_body(self, w: Writer) -> None:
        w.str_field(self.info)

    @classmethod
    def decode_body(cls, r: Reader) -> "Ack":
        return cls(r.str_field())


@dataclass(frozen=True)
class Refusal:
    code: str
    detail: str = ""

    TAG = 11

    def encode_body(self, w: Writer) -> None:
        w.str_field(self.code)
        w.str_field(self.detail)

    @classmethod
    def decode_body(cls, r: Reader) -> "Refusal":
        return cls(r.str_field(), r.str_field())


Message = (
    SubmitTx | CompleteTx | BlockCandidateMsg | ValidatedBlockMsg | CommitBlockMsg
    | GenesisRequest | GenesisResponse | Query | QueryResponse | Ack | Refusal
)

_TYPES = {
    t.TAG: t
    for t in (SubmitTx, CompleteTx, BlockCandidateMsg, ValidatedBlockMsg, CommitBlockMsg,
              GenesisRequest, GenesisResponse, Query, QueryResponse, Ack, Refusal)
}


def encode_message(msg: Message) -> bytes:
    w = Writer()
    msg.encode_body(w)
    return bytes([msg.TAG]) + w.getvalue()


def decode_message(body: bytes) -> Message:
    if not body:
        raise DecodeError("empty message body")
    cls = _TYPES.get(body[0])
    if cls is None:
        raise DecodeError(f"unknown message tag {body[0]}")
    r = Reader(body[1:])
    msg = cls.decode_body(r)
    r.expect_end()
    return msg


def encode_frame(msg: Message) -> bytes:
    body = encode_message(msg)
    return encode_u32(len(body)) + body


def decode_frame(frame: bytes) -> Message:
    if len(frame) < 4:
        raise DecodeError("truncated frame")
    length = int.from_bytes(frame[:4], "big")
    if len(frame) != 4 + length:
        raise DecodeError("frame length mismatch")
    return decode_message(frame[4:])


# Query parameter payloads -------------------------------------------------

def _encode_keys(w: Writer, keys: KeyDirectory) -> None:
    w.bytes_field(keys.user)
    for role in (keys.esp, keys.osp, keys.vsp, keys.gba):
        w.list_field(sorted(role.values()))


def _decode_keys(r: Reader) -> KeyDirectory:
    user = r.bytes_field()
    esp = r.list_field()
    osp = r.list_field()
    vsp = r.list_field()
    gba = r.list_field()
    return KeyDirectory.build(user, esp, osp, vsp, gba)


@dataclass(frozen=True)
class RoundStartVsp:
    """Everything a validation provider needs for one block round."""

    ledger_address: Address
    tip_hash: bytes
    tip_height: int
    known_output_ids: tuple[bytes, ...]
    keys: KeyDirectory

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.ledger_address.packed)
        w.bytes_field(self.tip_hash)
        w.int_field(self.tip_height)
        w.list_field(list(self.known_output_ids))
        _encode_keys(w, self.keys)
        return w.getvalue()

    @classmethod
    def decode_bytes(cls, data: bytes) -> "RoundStartVsp":
        r = Reader(data)
        try:
            address = Address.from_packed(r.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        tip_hash = r.bytes_field()
        tip_height = r.int_field()
        known = tuple(r.list_field())
        keys = _decode_keys(r)
        r.expect_end()
        return cls(address, tip_hash, tip_height, known, keys)


@dataclass(frozen=True)
class RoundStartOsp:
    ledger_address: Address
    vsp_id: str

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.ledger_address.packed)
        w.str_field(self.vsp_id)
        return w.getvalue()

    @classmethod
    def decode_bytes(cls, data: bytes) -> "RoundStartOsp":
        r = Reader(data)
        try:
            address = Address.from_packed(r.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        vsp_id = r.str_field()
        r.expect_end()
        return cls(address, vsp_id)


@dataclass(frozen=True)
class AddressParam:
    address: Address

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.address.packed)
        return w.getvalue()

    @classmethod
    def decode_bytes(cls, data: bytes) -> "AddressParam":
        r = Reader(data)
        try:
            address = Address.from_packed(r.bytes_field())
        except ValueError as exc:
            raise DecodeError(str(exc)) from exc
        r.expect_end()
        return cls(address)
