"""The six modular services that build and maintain personal ledgers.

Each service is an independent state machine reachable only through wire
messages routed by the harness network:

* the ledger API (:class:`LedgerApi`) is the user agent and single point
  of contact — it derives keys, drives rounds, countersigns, and commits;
* the genesis authority mints configuration blocks after a KYC check;
* executing providers run chaincode and sign complete transactions;
* ordering providers collect transactions, cut blocks, and sign orders;
* validation providers verify every signature and seal block headers;
* storage providers persist blocks behind pluggable backends.

Per round the user pins one validation and one ordering provider and
draws a fresh executing provider per transaction, so no single provider
observes all the user's data. Providers are trusted individually and can
fault independently; the user agent redraws within its pool when the
pinned provider stops answering.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from . import wire
from .chaincode import ChaincodeError, ChaincodeRegistry, DEFAULT_REGISTRY
from .encoding import DecodeError
from .harness import Clock, Network, ProviderFault
from .identity import (
    Address,
    KeyPair,
    RootRecord,
    SeedPhrase,
    ZERO_SIGNATURE,
    derive_ledger_keypair,
    derive_root_keypair,
    verify,
)
from .ledger import (
    DEFAULT_MAX_PAYLOAD,
    ESP_KEYS_CONFIG,
    GBA_KEY_CONFIG,
    OSP_KEYS_CONFIG,
    USER_KEY_CONFIG,
    VSP_KEYS_CONFIG,
    ZERO_OUTPUT,
    BlockCandidate,
    BlockHeaderCore,
    CompleteTransaction,
    ConfigEntry,
    DataBlock,
    GenesisBlock,
    Ledger,
    Transaction,
    block_user_signing_bytes,
    build_candidate,
    chain_hash,
    complete_transaction,
    config_data_hash,
    encode_payload_with_inputs,
    hash_header,
    ledger_from_bytes,
    ledger_to_bytes,
    new_transaction,
    output_id,
    payload_inputs,
    seal_candidate,
)
from .merkle import ZERO_DIGEST
from .validation import (
    B_EXEC_SIGNATURES,
    KeyDirectory,
    validate_candidate,
    validate_connection,
    validate_genesis_block,
)

logger = logging.getLogger(__name__)

GBA = "GBA"
ESP = "ESP"
OSP = "OSP"
VSP = "VSP"
STORAGE = "STORAGE"
SERVICE_KINDS = (GBA, ESP, OSP, VSP, STORAGE)


class RefusalError(Exception):
    """A service refused a request; maps to a wire Refusal."""

    def __init__(self, code: str, detail: str = "") -> None:
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail

    def to_message(self) -> wire.Refusal:
        return wire.Refusal(self.code, self.detail)


class Unavailable(Exception):
    """Every provider of one kind faulted past the TTL."""

    def __init__(self, kind: str, detail: str = "") -> None:
        super().__init__(f"all {kind} providers unavailable" + (f": {detail}" if detail else ""))
        self.kind = kind


@dataclass(frozen=True)
class ProviderRecord:
    provider_id: str
    service_kind: str
    public_key: bytes
    endpoint: str

    def __post_init__(self) -> None:
        if self.service_kind not in SERVICE_KINDS:
            raise ValueError(f"unknown service kind {self.service_kind!r}")


class ProviderPool:
    """The user's trusted providers, with a seeded selection RNG."""

    def __init__(self, records: Iterable[ProviderRecord], rng_seed: int | None = None) -> None:
        self._by_kind: dict[str, list[ProviderRecord]] = {k: [] for k in SERVICE_KINDS}
        seen: set[str] = set()
        for record in records:
            if record.provider_id in seen:
                raise ValueError(f"duplicate provider id {record.provider_id!r}")
            seen.add(record.provider_id)
            self._by_kind[record.service_kind].append(record)
        for kind, entries in self._by_kind.items():
            if not entries:
                raise ValueError(f"provider pool has no {kind} providers")
        self.rng = random.Random(rng_seed)

    def records(self, kind: str) -> tuple[ProviderRecord, ...]:
        return tuple(self._by_kind[kind])

    def size(self, kind: str) -> int:
        return len(self._by_kind[kind])

    def keys_of(self, kind: str) -> list[bytes]:
        return [r.public_key for r in self._by_kind[kind]]

    def draw(self, kind: str, exclude: frozenset[str] | set[str] = frozenset()) -> ProviderRecord:
        candidates = [r for r in self._by_kind[kind] if r.provider_id not in exclude]
        if not candidates:
            raise Unavailable(kind, "no providers left to try")
        return self.rng.choice(candidates)

    def all_records(self) -> tuple[ProviderRecord, ...]:
        return tuple(r for kind in SERVICE_KINDS for r in self._by_kind[kind])


COUNT = "count"
INTERVAL = "interval"
SIZE = "size"


@dataclass(frozen=True)
class CuttingCondition:
    """When an ordering provider closes a block."""

    kind: str
    threshold: int

    def __post_init__(self) -> None:
        if self.kind not in (COUNT, INTERVAL, SIZE):
            raise ValueError(f"unknown cutting condition {self.kind!r}")
        if self.threshold < 1:
            raise ValueError("cutting threshold must be >= 1")

    @classmethod
    def count(cls, n: int) -> "CuttingCondition":
        return cls(COUNT, n)

    @classmethod
    def interval(cls, seconds: int) -> "CuttingCondition":
        return cls(INTERVAL, seconds)

    @classmethod
    def size(cls, max_bytes: int) -> "CuttingCondition":
        return cls(SIZE, max_bytes)


@dataclass
class RoundState:
    """The providers pinned for the lifetime of one block."""

    current_vsp: str
    current_osp: str
    established_at_height: int
    sequence: int


class LedgerDirectory:
    """Public per-ledger information all providers consult.

    Stands in for out-of-band trust onboarding: when a user enrols with a
    provider they hand over the genesis configuration, which names the
    user key and every registered signing key.
    """

    def __init__(self) -> None:
        self._genesis: dict[str, GenesisBlock] = {}

    def register_genesis(self, address: Address, genesis: GenesisBlock) -> None:
        self._genesis[address.render()] = genesis

    def genesis_of(self, address: Address) -> GenesisBlock | None:
        return self._genesis.get(address.render())

    def keys_for(self, address: Address) -> KeyDirectory | None:
        genesis = self.genesis_of(address)
        if genesis is None:
            return None
        return KeyDirectory.from_genesis(genesis)


# --- Storage ---------------------------------------------------------------

class MemoryBackend:
    """In-memory key/value store."""

    def __init__(self) -> None:
        self._data: dict[str, bytes] = {}

    def get(self, key: str) -> bytes | None:
        return self._data.get(key)

    def put(self, key: str, value: bytes) -> None:
        self._data[key] = value

    def clear(self) -> None:
        self._data.clear()


class FileBackend:
    """Filesystem-backed store; keys map to paths below a root directory."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        parts = [p for p in key.split("/") if p and p not in (".", "..")]
        return self.root.joinpath(*parts)

    def get(self, key: str) -> bytes | None:
        path = self._path(key)
        return path.read_bytes() if path.exists() else None

    def put(self, key: str, value: bytes) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(value)
        tmp.replace(path)

    def clear(self) -> None:
        import shutil

        if self.root.exists():
            shutil.rmtree(self.root)
        self.root.mkdir(parents=True, exist_ok=True)


class StorageService:
    """Durable append-only block store plus user metadata.

    Accepts only blocks that extend the stored tip, so a provider can
    never hold two blocks at one height (no storage-level forks).
    """

    def __init__(self, provider_id: str, backend) -> None:
        self.provider_id = provider_id
        self.backend = backend

    def _block_key(self, address: Address, height: int) -> str:
        return f"ledger/{address.render()}/{height:08d}"

    def _tip_key(self, address: Address) -> str:
        return f"ledger/{address.render()}/tip"

    def _tip_height(self, address: Address) -> int | None:
        raw = self.backend.get(self._tip_key(address))
        return None if raw is None else int.from_bytes(raw, "big")

    def put_block(self, address: Address, block: DataBlock | GenesisBlock) -> None:
        height = block.core.height
        encoded = block.encode()
        tip = self._tip_height(address)
        if tip is not None and height <= tip:
            if self.backend.get(self._block_key(address, height)) == encoded:
                return  # idempotent re-put of an already stored block
            raise RefusalError(wire.NOT_EXTENDING_TIP, f"height {height} already stored")
        if isinstance(block, GenesisBlock):
            if tip is not None:
                raise RefusalError(wire.NOT_EXTENDING_TIP, "ledger already has a genesis block")
            if height != 0 or block.core.previous_hash != ZERO_DIGEST:
                raise RefusalError(wire.NOT_EXTENDING_TIP, "not a genesis block")
        else:
            if tip is None:
                raise RefusalError(wire.NOT_EXTENDING_TIP, "no genesis stored yet")
            if height != tip + 1:
                raise RefusalError(wire.NOT_EXTENDING_TIP,
                                   f"height {height} does not extend tip {tip}")
            prev = self._load_block(address, tip)
            if not validate_connection(prev, block):
                raise RefusalError(wire.NOT_EXTENDING_TIP, "previous hash does not match the tip")
        if block.user_signature == ZERO_SIGNATURE:
            raise RefusalError(wire.BAD_USER_SIGNATURE, "block lacks the user signature")
        self.backend.put(self._block_key(address, height), encoded)
        self.backend.put(self._tip_key(address), height.to_bytes(8, "big"))

    def _load_block(self, address: Address, height: int) -> DataBlock | GenesisBlock:
        raw = self.backend.get(self._block_key(address, height))
        if raw is None:
            raise RefusalError(wire.UNKNOWN_ADDRESS, f"missing block {height}")
        if height == 0:
            return GenesisBlock.decode_bytes(raw)
        return DataBlock.decode_bytes(raw)

    def get_ledger(self, address: Address) -> Ledger:
        tip = self._tip_height(address)
        if tip is None:
            raise RefusalError(wire.UNKNOWN_ADDRESS, address.render())
        genesis = self._load_block(address, 0)
        blocks = tuple(self._load_block(address, h) for h in range(1, tip + 1))
        return Ledger(genesis, blocks, address)  # type: ignore[arg-type]

    def put_root_record(self, record: RootRecord) -> None:
        self.backend.put(f"root/{record.root_address.render()}", record.encode())

    def get_root_record(self, root_address: Address) -> RootRecord:
        raw = self.backend.get(f"root/{root_address.render()}")
        if raw is None:
            raise RefusalError(wire.UNKNOWN_ADDRESS, root_address.render())
        return RootRecord.decode_bytes(raw)

    def list_ledgers(self, root_address: Address) -> tuple[Address, ...]:
        return self.get_root_record(root_address).ledger_addresses

    def handle(self, sender: str, msg: wire.Message) -> wire.Message:
        try:
            if isinstance(msg, wire.CommitBlockMsg):
                self.put_block(msg.ledger_address, msg.block)
                return wire.Ack("stored")
            if isinstance(msg, wire.Query):
                return self._handle_query(msg)
        except RefusalError as exc:
            return exc.to_message()
        except DecodeError as exc:
            return wire.Refusal(wire.MALFORMED_PAYLOAD, str(exc))
        return wire.Refusal(wire.UNSUPPORTED, type(msg).__name__)

    def _handle_query(self, msg: wire.Query) -> wire.Message:
        if msg.kind == wire.Q_GET_LEDGER:
            address = wire.AddressParam.decode_bytes(msg.params).address
            return wire.QueryResponse(ledger_to_bytes(self.get_ledger(address)))
        if msg.kind == wire.Q_GET_ROOT_RECORD:
            address = wire.AddressParam.decode_bytes(msg.params).address
            return wire.QueryResponse(self.get_root_record(address).encode())
        if msg.kind == wire.Q_PUT_ROOT_RECORD:
            self.put_root_record(RootRecord.decode_bytes(msg.params))
            return wire.Ack("stored")
        if msg.kind == wire.Q_LIST_LEDGERS:
            address = wire.AddressParam.decode_bytes(msg.params).address
            addresses = self.list_ledgers(address)
            return wire.QueryResponse(b"".join(a.packed for a in addresses))
        return wire.Refusal(wire.UNSUPPORTED, msg.kind)


# --- Genesis Block Authority ------------------------------------------------

@dataclass(frozen=True)
class KycPolicy:
    """Stub know-your-customer policy: deny list, optional allow list."""

    denied: frozenset[bytes] = frozenset()
    allowed: frozenset[bytes] | None = None

    def permits(self, blob: bytes) -> bool:
        if blob in self.denied:
            return False
        return self.allowed is None or blob in self.allowed


class GenesisAuthority:
    """Issues signed genesis blocks after verifying the requester."""

    def __init__(self, provider_id: str, keypair: KeyPair, clock: Clock,
                 kyc: KycPolicy = KycPolicy()) -> None:
        self.provider_id = provider_id
        self.keypair = keypair
        self.clock = clock
        self.kyc = kyc

    def build_genesis(self, request: wire.GenesisRequest) -> GenesisBlock:
        """Issue a genesis whose user signature is still the zero placeholder.

        The user countersigns client-side; secrets never reach the
        authority.
        """
        if not self.kyc.permits(request.kyc_blob):
            raise RefusalError(wire.KYC_DENIED, "requester failed the KYC policy")
        if len(request.user_public_key) != 32:
            raise RefusalError(wire.MISSING_USER_KEY, "request lacks a user public key")
        entries = list(request.config_entries)
        if not any(e.key == USER_KEY_CONFIG for e in entries):
            entries.insert(0, ConfigEntry(USER_KEY_CONFIG, request.user_public_key))
        elif next(e.value for e in entries if e.key == USER_KEY_CONFIG) != request.user_public_key:
            raise RefusalError(wire.MISSING_USER_KEY,
                               "configured user key differs from the requester's")
        if not any(e.key == GBA_KEY_CONFIG for e in entries):
            entries.append(ConfigEntry(GBA_KEY_CONFIG, self.keypair.public))
        core = BlockHeaderCore(
            previous_hash=ZERO_DIGEST,
            data_hash=config_data_hash(entries),
            exec_sig_root=ZERO_DIGEST,
            ordering_signature=ZERO_SIGNATURE,
            height=0,
            created_at=self.clock.now_ms(),
        )
        gba_signature = self.keypair.sign(hash_header(core))
        return GenesisBlock(core, tuple(entries), gba_signature, ZERO_SIGNATURE)

    def issue_genesis(self, request: wire.GenesisRequest, user_countersign) -> GenesisBlock:
        """Issue and have the user countersign in one step (in-process path)."""
        genesis = self.build_genesis(request)
        user_sig = user_countersign.sign(
            block_user_signing_bytes(genesis.core, genesis.gba_signature))
        return replace(genesis, user_signature=user_sig)

    def handle(self, sender: str, msg: wire.Message) -> wire.Message:
        if isinstance(msg, wire.GenesisRequest):
            try:
                return wire.GenesisResponse(self.build_genesis(msg))
            except RefusalError as exc:
                return exc.to_message()
        return wire.Refusal(wire.UNSUPPORTED, type(msg).__name__)


# --- Executing Service -------------------------------------------------------

class ExecutingService:
    """Runs chaincode over submitted transactions and signs the result."""

    def __init__(self, provider_id: str, keypair: KeyPair, network: Network,
                 directory: LedgerDirectory, registry: ChaincodeRegistry = DEFAULT_REGISTRY,
                 max_payload: int = DEFAULT_MAX_PAYLOAD) -> None:
        self.provider_id = provider_id
        self.keypair = keypair
        self.network = network
        self.directory = directory
        self.registry = registry
        self.max_payload = max_payload
        self.seen_transactions: list[bytes] = []  # encodings, for privacy analysis

    def execute_and_sign(self, tx: Transaction, prior_state: bytes | None = None) -> CompleteTransaction:
        keys = self.directory.keys_for(tx.ledger_address)
        if keys is None:
            raise RefusalError(wire.UNKNOWN_ADDRESS, tx.ledger_address.render())
        if not verify(keys.user, tx.signing_bytes(), tx.user_signature):
            raise RefusalError(wire.BAD_USER_SIGNATURE,
                               "transaction signature does not verify under the ledger owner")
        if len(tx.payload) > self.max_payload:
            raise RefusalError(wire.PAYLOAD_TOO_LARGE,
                               f"payload exceeds {self.max_payload} bytes")
        for i, extra in enumerate(tx.extra_signatures):
            if len(extra.value) != 64 or len(extra.signer_id) != 8:
                raise RefusalError(wire.MALFORMED_PAYLOAD, f"extra signature {i} malformed")
        if tx.chaincode_id is None:
            output = ZERO_OUTPUT
        else:
            definition = self.registry.get(tx.chaincode_id)
            if definition is None:
                raise RefusalError(wire.UNKNOWN_CHAINCODE, tx.chaincode_id)
            state = definition.initial_state if prior_state is None else prior_state
            try:
                _, body = payload_inputs(tx.payload)
                _, output = definition.step(state, body)
            except (ChaincodeError, DecodeError) as exc:
                raise RefusalError(wire.MALFORMED_PAYLOAD, str(exc)) from exc
        ct = complete_transaction(tx, output, self.keypair)
        self.seen_transactions.append(tx.encode())
        return ct

    def handle(self, sender: str, msg: wire.Message) -> wire.Message:
        if not isinstance(msg, wire.SubmitTx):
            return wire.Refusal(wire.UNSUPPORTED, type(msg).__name__)
        try:
            ct = self.execute_and_sign(msg.tx, msg.prior_state)
        except RefusalError as exc:
            return exc.to_message()
        try:
            return self.network.request(msg.osp_id, wire.CompleteTx(ct), sender=self.provider_id)
        except ProviderFault as exc:
            return wire.Refusal(wire.OSP_UNAVAILABLE, str(exc))


# --- Ordering Service --------------------------------------------------------

@dataclass
class _Mempool:
    pending: list[CompleteTransaction] = field(default_factory=list)
    vsp_id: str | None = None
    window_start: int | None = None
    retry_used: bool = False


def dependency_sort(cts: Sequence[CompleteTransaction]) -> list[CompleteTransaction]:
    """Stable topological order honouring intra-set output dependencies."""
    ids = [output_id(ct) for ct in cts]
    position = {oid: i for i, oid in enumerate(ids)}
    deps: list[set[int]] = []
    for ct in cts:
        try:
            inputs, _ = payload_inputs(ct.inner.payload)
        except DecodeError:
            inputs = ()
        deps.append({position[d] for d in inputs if d in position})
    ordered: list[int] = []
    placed: set[int] = set()
    remaining = list(range(len(cts)))
    while remaining:
        progressed = False
        for idx in list(remaining):
            if deps[idx] <= placed:
                ordered.append(idx)
                placed.add(idx)
                remaining.remove(idx)
                progressed = True
        if not progressed:  # dependency cycle: keep arrival order for the rest
            ordered.extend(remaining)
            break
    return [cts[i] for i in ordered]


class OrderingService:
    """Collects complete transactions and cuts blocks per its condition.

    Checks only that the executing signer is registered for the ledger;
    cryptographic verification of every signature is the validation
    provider's job.
    """

    def __init__(self, provider_id: str, keypair: KeyPair, network: Network,
                 directory: LedgerDirectory, cutting: CuttingCondition, clock: Clock) -> None:
        self.provider_id = provider_id
        self.keypair = keypair
        self.network = network
        self.directory = directory
        self.cutting = cutting
        self.clock = clock
        self._pools: dict[str, _Mempool] = {}
        self.dropped: list[tuple[CompleteTransaction, str]] = []  # audit trail

    def _pool(self, address: Address) -> _Mempool:
        return self._pools.setdefault(address.render(), _Mempool())

    def start_round(self, address: Address, vsp_id: str) -> None:
        self._pool(address).vsp_id = vsp_id

    def accept(self, ct: CompleteTransaction) -> None:
        address = ct.inner.ledger_address
        keys = self.directory.keys_for(address)
        if keys is None:
            raise RefusalError(wire.UNKNOWN_ADDRESS, address.render())
        if ct.executing_signature.signer_id not in keys.esp:
            self.dropped.append((ct, "unregistered executing signer"))
            logger.warning("%s: dropped transaction from unregistered signer %s",
                           self.provider_id, ct.executing_signature.signer_id.hex())
            raise RefusalError(wire.UNREGISTERED_SIGNER,
                               ct.executing_signature.signer_id.hex())
        pool = self._pool(address)
        pool.pending.append(ct)
        if pool.window_start is None:
            pool.window_start = self.clock.now_ms()

    def maybe_cut(self, address: Address) -> BlockCandidate | None:
        """Close a block when the cutting condition is met.

        Empty blocks are never emitted: a block needs at least one
        transaction.
        """
        pool = self._pool(address)
        if not pool.pending:
            return None
        taken: list[CompleteTransaction] | None = None
        if self.cutting.kind == COUNT:
            if len(pool.pending) >= self.cutting.threshold:
                taken = pool.pending[:self.cutting.threshold]
                pool.pending = pool.pending[self.cutting.threshold:]
        elif self.cutting.kind == INTERVAL:
            start = pool.window_start if pool.window_start is not None else self.clock.now_ms()
            if self.clock.now_ms() - start >= self.cutting.threshold * 1000:
                taken = pool.pending
                pool.pending = []
        else:  # SIZE: cut at the boundary, the overflowing entry starts the next pool
            total = sum(len(ct.encode()) for ct in pool.pending)
            if total > self.cutting.threshold:
                if len(pool.pending) == 1:
                    taken = pool.pending
                    pool.pending = []
                else:
                    taken = pool.pending[:-1]
                    pool.pending = pool.pending[-1:]
        if taken is None:
            return None
        pool.window_start = self.clock.now_ms() if pool.pending else None
        return build_candidate(address, taken, self.keypair, self.clock.now_ms())

    def _requeue(self, pool: _Mempool, cts: Sequence[CompleteTransaction]) -> None:
        pool.pending = list(cts) + pool.pending
        if pool.window_start is None and pool.pending:
            pool.window_start = self.clock.now_ms()

    def _forward(self, address: Address, candidate: BlockCandidate) -> wire.Message:
        pool = self._pool(address)
        if pool.vsp_id is None:
            self._requeue(pool, candidate.transactions)
            return wire.Refusal(wire.VSP_UNAVAILABLE, "no validation round established")
        try:
            response = self.network.request(pool.vsp_id, wire.BlockCandidateMsg(candidate),
                                            sender=self.provider_id)
        except ProviderFault as exc:
            self._requeue(pool, candidate.transactions)
            return wire.Refusal(wire.VSP_UNAVAILABLE, str(exc))
        if isinstance(response, wire.ValidatedBlockMsg):
            pool.retry_used = False
            return response
        if isinstance(response, wire.Refusal):
            return self._handle_rejection(pool, candidate, response)
        return response

    def _handle_rejection(self, pool: _Mempool, candidate: BlockCandidate,
                          refusal: wire.Refusal) -> wire.Message:
        cts = list(candidate.transactions)
        if refusal.code == wire.DEPENDENCY_VIOLATION and not pool.retry_used:
            # One re-sorted attempt: a bad arrival order may still be fixable.
            pool.retry_used = True
            self._requeue(pool, dependency_sort(cts))
            retry = self.maybe_cut(candidate.ledger_address)
            if retry is not None:
                return self._forward(candidate.ledger_address, retry)
            return refusal
        pool.retry_used = False
        violating = _violating_index(refusal.detail)
        if violating is not None and 0 <= violating < len(cts):
            bad = cts.pop(violating)
            self.dropped.append((bad, refusal.code))
            logger.warning("%s: dropped transaction %d after %s",
                           self.provider_id, violating, refusal.code)
        self._requeue(pool, cts)
        return refusal

    def handle(self, sender: str, msg: wire.Message) -> wire.Message:
        if isinstance(msg, wire.CompleteTx):
            try:
                self.accept(msg.ct)
            except RefusalError as exc:
                return exc.to_message()
            address = msg.ct.inner.ledger_address
            candidate = self.maybe_cut(address)
            if candidate is None:
                return wire.Ack("accepted")
            return self._forward(address, candidate)
        if isinstance(msg, wire.Query) and msg.kind == wire.Q_ROUND_START_OSP:
            try:
                params = wire.RoundStartOsp.decode_bytes(msg.params)
            except DecodeError as exc:
                return wire.Refusal(wire.MALFORMED_PAYLOAD, str(exc))
            self.start_round(params.ledger_address, params.vsp_id)
            return wire.Ack("round started")
        if isinstance(msg, wire.Query) and msg.kind == wire.Q_MAYBE_CUT:
            try:
                address = wire.AddressParam.decode_bytes(msg.params).address
            except DecodeError as exc:
                return wire.Refusal(wire.MALFORMED_PAYLOAD, str(exc))
            candidate = self.maybe_cut(address)
            if candidate is None:
                return wire.Ack("nothing to cut")
            return self._forward(address, candidate)
        return wire.Refusal(wire.UNSUPPORTED, type(msg).__name__)


def _violating_index(detail: str) -> int | None:
    for token in detail.replace(":", " ").split():
        if token.isdigit():
            return int(token)
    return None


# --- Validation Service ------------------------------------------------------

@dataclass(frozen=True)
class TipInfo:
    """What the validation provider knows about the chain it extends."""

    tip_hash: bytes
    tip_height: int
    known_output_ids: frozenset[bytes] = frozenset()


@dataclass(frozen=True)
class IgnoredBlock:
    """A dependency-misordered candidate, returned rather than signed."""

    candidate: BlockCandidate
    violating_index: int
    reason: str


class ValidationService:
    """Verifies candidate blocks and signs their sealed headers."""

    def __init__(self, provider_id: str, keypair: KeyPair,
                 max_payload: int = DEFAULT_MAX_PAYLOAD) -> None:
        self.provider_id = provider_id
        self.keypair = keypair
        self.max_payload = max_payload
        self._rounds: dict[str, wire.RoundStartVsp] = {}

    def start_round(self, params: wire.RoundStartVsp) -> None:
        self._rounds[params.ledger_address.render()] = params

    def validate_and_sign(
        self, candidate: BlockCandidate, tip: TipInfo, keys: KeyDirectory
    ) -> wire.ValidatedBlockMsg | IgnoredBlock:
        """Fully check a candidate, then seal and sign its header.

        Signature or structural failures raise :class:`RefusalError` with
        the failing block condition; a dependency-order violation returns
        an :class:`IgnoredBlock` instead, since the ordering provider can
        fix and resubmit those.
        """
        if not candidate.transactions:
            raise RefusalError(wire.EMPTY_BLOCK, "candidate has no transactions")
        condition = validate_candidate(candidate, keys, max_payload=self.max_payload)
        if condition is not None:
            raise RefusalError(condition, _first_bad_transaction(candidate, keys, condition))
        for i, ct in enumerate(candidate.transactions):
            if not verify(keys.user, ct.inner.signing_bytes(), ct.inner.user_signature):
                raise RefusalError(wire.BAD_USER_SIGNATURE, f"transaction {i}")
        seen = set(tip.known_output_ids)
        for i, ct in enumerate(candidate.transactions):
            try:
                inputs, _ = payload_inputs(ct.inner.payload)
            except DecodeError as exc:
                raise RefusalError(wire.MALFORMED_PAYLOAD, f"transaction {i}: {exc}") from exc
            for dep in inputs:
                if dep not in seen:
                    return IgnoredBlock(candidate, i,
                                        f"transaction {i} consumes output {dep.hex()[:16]} "
                                        "that does not appear earlier")
            seen.add(output_id(ct))
        core, signature = seal_candidate(candidate, tip.tip_hash, tip.tip_height + 1, self.keypair)
        return wire.ValidatedBlockMsg(candidate.ledger_address, core,
                                      candidate.transactions, signature)

    def handle(self, sender: str, msg: wire.Message) -> wire.Message:
        if isinstance(msg, wire.Query) and msg.kind == wire.Q_ROUND_START_VSP:
            try:
                self.start_round(wire.RoundStartVsp.decode_bytes(msg.params))
            except DecodeError as exc:
                return wire.Refusal(wire.MALFORMED_PAYLOAD, str(exc))
            return wire.Ack("round started")
        if isinstance(msg, wire.BlockCandidateMsg):
            round_info = self._rounds.get(msg.candidate.ledger_address.render())
            if round_info is None:
                return wire.Refusal(wire.STALE_TIP, "no validation round established")
            tip = TipInfo(round_info.tip_hash, round_info.tip_height,
                          frozenset(round_info.known_output_ids))
            try:
                outcome = self.validate_and_sign(msg.candidate, tip, round_info.keys)
            except RefusalError as exc:
                return exc.to_message()
            if isinstance(outcome, IgnoredBlock):
                return wire.Refusal(wire.DEPENDENCY_VIOLATION,
                                    f"{outcome.violating_index}: {outcome.reason}")
            # The pinned providers change once the user adds this block.
            del self._rounds[msg.candidate.ledger_address.render()]
            return outcome
        return wire.Refusal(wire.UNSUPPORTED, type(msg).__name__)


def _first_bad_transaction(candidate: BlockCandidate, keys: KeyDirectory, condition: str) -> str:
    if condition == B_EXEC_SIGNATURES:
        for i, ct in enumerate(candidate.transactions):
            key = keys.esp.get(ct.executing_signature.signer_id)
            if key is None or not verify(key, ct.signing_bytes(), ct.executing_signature):
                return str(i)
    return ""


# --- Ledger API (user agent) --------------------------------------------------

@dataclass
class SubmitReceipt:
    """Outcome of one submission, kept for distribution analysis."""

    esp_id: str
    osp_id: str
    vsp_id: str
    round_sequence: int
    committed_height: int | None = None
    stored_count: int = 0
    refusal: tuple[str, str] | None = None


@dataclass
class CreateResult:
    ledger_address: Address
    genesis: GenesisBlock
    storage_status: dict[str, str]


@dataclass
class _Session:
    address: Address
    keypair: KeyPair
    genesis: GenesisBlock
    keys: KeyDirectory
    tip_hash: bytes
    tip_height: int
    round: RoundState | None = None
    round_counter: int = 0
    known_output_ids: set[bytes] = field(default_factory=set)
    chain_states: dict[str, bytes] = field(default_factory=dict)
    pending_commits: list[DataBlock] = field(default_factory=list)
    receipts: list[SubmitReceipt] = field(default_factory=list)
    commits: list[tuple[int, int, str, str]] = field(default_factory=list)
    refused_blocks: list[str] = field(default_factory=list)  # audit trail


class LedgerApi:
    """The user agent: a single point of contact for all services.

    Owns the seed phrase, derives every key client-side, pins one
    validation and one ordering provider per round, draws a fresh
    executing provider per transaction, and is the only writer to its
    view of each ledger's tip.
    """

    def __init__(self, phrase: SeedPhrase, pool: ProviderPool, network: Network,
                 directory: LedgerDirectory, clock: Clock,
                 registry: ChaincodeRegistry = DEFAULT_REGISTRY) -> None:
        self.pool = pool
        self.network = network
        self.directory = directory
        self.clock = clock
        self.registry = registry
        self.root = derive_root_keypair(phrase)
        self.root_address = Address.root(self.root.public)
        self.root_record = RootRecord(
            self.root_address,
            (),
            tuple((r.provider_id, r.public_key) for r in pool.all_records()),
        )
        self._phrase = phrase
        self._sessions: dict[str, _Session] = {}

    # -- provider selection ---------------------------------------------

    def _try_providers(self, kind: str, attempt):
        """Call ``attempt(record)`` on randomly drawn providers of ``kind``.

        Redraws on faults, trying each provider at most once, up to the
        pool size; raises :class:`Unavailable` when every try faulted.
        """
        tried: set[str] = set()
        last = ""
        for _ in range(self.pool.size(kind)):
            record = self.pool.draw(kind, exclude=tried)
            tried.add(record.provider_id)
            try:
                return record, attempt(record)
            except ProviderFault as exc:
                last = str(exc)
        raise Unavailable(kind, last)

    # -- ledger creation --------------------------------------------------

    def create_ledger(self, index: int, config_entries: Sequence[ConfigEntry] = (),
                      kyc_blob: bytes = b"") -> CreateResult:
        keypair = derive_ledger_keypair(self.root, index)
        address = Address.ledger(keypair.public)
        if address.render() in self._sessions or self._ledger_exists(address):
            raise RefusalError(wire.DUPLICATE_LEDGER, address.render())

        entries = list(config_entries)
        for key, kind in ((ESP_KEYS_CONFIG, ESP), (OSP_KEYS_CONFIG, OSP), (VSP_KEYS_CONFIG, VSP)):
            if not any(e.key == key for e in entries):
                entries.append(ConfigEntry(key, b"".join(self.pool.keys_of(kind))))
        request = wire.GenesisRequest(keypair.public, tuple(entries), kyc_blob)

        def ask(record: ProviderRecord) -> GenesisBlock:
            response = self.network.request(record.endpoint, request)
            if isinstance(response, wire.Refusal):
                raise RefusalError(response.code, response.detail)
            if not isinstance(response, wire.GenesisResponse):
                raise RefusalError(wire.UNSUPPORTED, type(response).__name__)
            return response.genesis

        gba_record, genesis = self._try_providers(GBA, ask)
        user_sig = keypair.sign(block_user_signing_bytes(genesis.core, genesis.gba_signature))
        genesis = replace(genesis, user_signature=user_sig)
        report = validate_genesis_block(genesis, gba_record.public_key, keypair.public)
        if not report.ok:
            failure = report.first_failure
            raise RefusalError(wire.BAD_VSP_SIGNATURE,
                               f"authority returned an invalid genesis: {failure.condition}")

        status = self._commit_to_storage(address, genesis)
        if not any(v == "stored" for v in status.values()):
            raise Unavailable(STORAGE, "genesis could not be stored anywhere")

        self.root_record = self.root_record.with_ledger(address)
        self._put_root_record_everywhere()
        self.directory.register_genesis(address, genesis)
        self._sessions[address.render()] = _Session(
            address=address,
            keypair=keypair,
            genesis=genesis,
            keys=KeyDirectory.from_genesis(genesis),
            tip_hash=chain_hash(genesis),
            tip_height=0,
        )
        return CreateResult(address, genesis, status)

    def _ledger_exists(self, address: Address) -> bool:
        for record in self.pool.records(STORAGE):
            try:
                response = self.network.request(
                    record.endpoint,
                    wire.Query(wire.Q_GET_LEDGER, wire.AddressParam(address).encode()))
            except ProviderFault:
                continue
            if isinstance(response, wire.QueryResponse):
                return True
        return False

    def _commit_to_storage(self, address: Address, block) -> dict[str, str]:
        status: dict[str, str] = {}
        for record in self.pool.records(STORAGE):
            try:
                response = self.network.request(record.endpoint,
                                                wire.CommitBlockMsg(address, block))
            except ProviderFault as exc:
                status[record.provider_id] = f"fault: {exc.reason}"
                continue
            if isinstance(response, wire.Ack):
                status[record.provider_id] = "stored"
            elif isinstance(response, wire.Refusal):
                status[record.provider_id] = f"refused: {response.code}"
            else:
                status[record.provider_id] = "unexpected response"
        return status

    def _put_root_record_everywhere(self) -> None:
        msg = wire.Query(wire.Q_PUT_ROOT_RECORD, self.root_record.encode())
        for record in self.pool.records(STORAGE):
            try:
                self.network.request(record.endpoint, msg)
            except ProviderFault:
                continue

    # -- sessions ---------------------------------------------------------

    def session(self, address: Address) -> _Session:
        sess = self._sessions.get(address.render())
        if sess is None:
            raise RefusalError(wire.UNKNOWN_ADDRESS, address.render())
        return sess

    def open_ledger(self, address: Address, index: int) -> _Session:
        """Resume a stored ledger after a restart."""
        if address.render() in self._sessions:
            return self._sessions[address.render()]
        ledger = self.read_ledger(address)
        keypair = derive_ledger_keypair(self.root, index)
        if Address.ledger(keypair.public) != address:
            raise RefusalError(wire.UNKNOWN_ADDRESS,
                               f"index {index} does not derive {address.render()}")
        known: set[bytes] = set()
        states: dict[str, bytes] = {}
        for block in ledger.blocks:
            for ct in block.transactions:
                known.add(output_id(ct))
                cc = ct.inner.chaincode_id
                if cc is not None:
                    definition = self.registry.get(cc)
                    if definition is not None:
                        _, body = payload_inputs(ct.inner.payload)
                        states[cc], _ = definition.step(
                            states.get(cc, definition.initial_state), body)
        self.directory.register_genesis(address, ledger.genesis)
        sess = _Session(
            address=address,
            keypair=keypair,
            genesis=ledger.genesis,
            keys=KeyDirectory.from_genesis(ledger.genesis),
            tip_hash=chain_hash(ledger.tip),
            tip_height=ledger.tip.core.height,
            known_output_ids=known,
            chain_states=states,
        )
        self._sessions[address.render()] = sess
        return sess

    # -- rounds -----------------------------------------------------------

    def _ensure_round(self, sess: _Session,
                      exclude_vsp: set[str] | None = None,
                      exclude_osp: set[str] | None = None) -> RoundState:
        if sess.round is not None:
            return sess.round

        params = wire.RoundStartVsp(
            sess.address, sess.tip_hash, sess.tip_height,
            tuple(sorted(sess.known_output_ids)), sess.keys)
        vsp_msg = wire.Query(wire.Q_ROUND_START_VSP, params.encode())

        def start_vsp(record: ProviderRecord):
            if exclude_vsp and record.provider_id in exclude_vsp:
                raise ProviderFault(record.provider_id, "excluded after earlier fault")
            response = self.network.request(record.endpoint, vsp_msg)
            if not isinstance(response, wire.Ack):
                raise ProviderFault(record.provider_id, "round start rejected")
            return response

        vsp_record, _ = self._try_providers(VSP, start_vsp)

        osp_params = wire.RoundStartOsp(sess.address, vsp_record.provider_id)
        osp_msg = wire.Query(wire.Q_ROUND_START_OSP, osp_params.encode())

        def start_osp(record: ProviderRecord):
            if exclude_osp and record.provider_id in exclude_osp:
                raise ProviderFault(record.provider_id, "excluded after earlier fault")
            response = self.network.request(record.endpoint, osp_msg)
            if not isinstance(response, wire.Ack):
                raise ProviderFault(record.provider_id, "round start rejected")
            return response

        osp_record, _ = self._try_providers(OSP, start_osp)

        sess.round_counter += 1
        sess.round = RoundState(
            current_vsp=vsp_record.provider_id,
            current_osp=osp_record.provider_id,
            established_at_height=sess.tip_height,
            sequence=sess.round_counter,
        )
        return sess.round

    # -- submission ---------------------------------------------------------

    def submit(self, address: Address, payload: bytes, chaincode_id: str | None = None,
               inputs: Sequence[bytes] = (), extra_signatures: Sequence = ()) -> SubmitReceipt:
        """Sign and submit one transaction through a fresh executing provider."""
        sess = self.session(address)
        if inputs:
            payload = encode_payload_with_inputs(inputs, payload)

        exclude_vsp: set[str] = set()
        exclude_osp: set[str] = set()
        for _ in range(self.pool.size(OSP) + self.pool.size(VSP) + 1):
            round_state = self._ensure_round(sess, exclude_vsp, exclude_osp)
            tx = new_transaction(address, payload, sess.keypair,
                                 chaincode_id=chaincode_id,
                                 submitted_at=self.clock.now_ms(),
                                 extra_signatures=extra_signatures)
            prior_state = None
            if chaincode_id is not None:
                definition = self.registry.get(chaincode_id)
                if definition is not None:
                    prior_state = sess.chain_states.get(chaincode_id, definition.initial_state)
            msg = wire.SubmitTx(tx, round_state.current_osp, prior_state)

            def ask(record: ProviderRecord):
                return self.network.request(record.endpoint, msg)

            esp_record, response = self._try_providers(ESP, ask)
            receipt = SubmitReceipt(
                esp_id=esp_record.provider_id,
                osp_id=round_state.current_osp,
                vsp_id=round_state.current_vsp,
                round_sequence=round_state.sequence,
            )

            if isinstance(response, wire.Refusal) and response.code == wire.OSP_UNAVAILABLE:
                exclude_osp.add(round_state.current_osp)
                sess.round = None
                if len(exclude_osp) >= self.pool.size(OSP):
                    raise Unavailable(OSP, response.detail)
                continue
            if isinstance(response, wire.Refusal) and response.code == wire.VSP_UNAVAILABLE:
                exclude_vsp.add(round_state.current_vsp)
                sess.round = None
                if len(exclude_vsp) >= self.pool.size(VSP):
                    raise Unavailable(VSP, response.detail)
                continue

            if isinstance(response, wire.Refusal):
                receipt.refusal = (response.code, response.detail)
            elif isinstance(response, wire.ValidatedBlockMsg):
                self._advance_state(sess, tx, chaincode_id)
                height, stored = self.on_validated_block(response)
                receipt.committed_height = height
                receipt.stored_count = stored
            elif isinstance(response, wire.Ack):
                self._advance_state(sess, tx, chaincode_id)
            sess.receipts.append(receipt)
            return receipt
        raise Unavailable(OSP, "could not establish a round")

    def _advance_state(self, sess: _Session, tx: Transaction, chaincode_id: str | None) -> None:
        if chaincode_id is None:
            return
        definition = self.registry.get(chaincode_id)
        if definition is None:
            return
        try:
            _, body = payload_inputs(tx.payload)
            new_state, _ = definition.step(
                sess.chain_states.get(chaincode_id, definition.initial_state), body)
        except (ChaincodeError, DecodeError):
            return
        sess.chain_states[chaincode_id] = new_state

    def poll(self, address: Address) -> SubmitReceipt | None:
        """Ask the round's ordering provider to apply its cutting condition.

        Needed for interval conditions, where a block may become due with
        no new submission arriving.
        """
        sess = self.session(address)
        round_state = self._ensure_round(sess)
        msg = wire.Query(wire.Q_MAYBE_CUT, wire.AddressParam(address).encode())
        try:
            response = self.network.request(round_state.current_osp, msg)
        except ProviderFault as exc:
            raise Unavailable(OSP, str(exc)) from exc
        if isinstance(response, wire.ValidatedBlockMsg):
            height, stored = self.on_validated_block(response)
            receipt = SubmitReceipt("", round_state.current_osp, round_state.current_vsp,
                                    round_state.sequence, height, stored)
            sess.receipts.append(receipt)
            return receipt
        if isinstance(response, wire.Refusal):
            receipt = SubmitReceipt("", round_state.current_osp, round_state.current_vsp,
                                    round_state.sequence,
                                    refusal=(response.code, response.detail))
            sess.receipts.append(receipt)
            return receipt
        return None

    # -- block commitment ---------------------------------------------------

    def on_validated_block(self, msg: wire.ValidatedBlockMsg) -> tuple[int, int]:
        """Countersign a validated block and commit it to every storage provider.

        Returns (height, number of providers that stored it). With zero
        stores the block is held client-side for :meth:`retry_pending`.
        The round is re-drawn either way: the pinned providers change once
        the user has added a block.
        """
        sess = self.session(msg.ledger_address)
        ok, why = self._check_validated(sess, msg)
        if not ok:
            sess.refused_blocks.append(why)
            logger.warning("refused validated block for %s: %s",
                           msg.ledger_address.render(), why)
            raise RefusalError(wire.BAD_VSP_SIGNATURE if "signature" in why else wire.STALE_TIP,
                               why)
        user_sig = sess.keypair.sign(block_user_signing_bytes(msg.core, msg.validation_signature))
        block = DataBlock(msg.core, msg.transactions, msg.validation_signature, user_sig)
        # Held blocks must reach storage in chain order before this one can.
        sess.pending_commits.append(block)
        stored = self._flush_pending(sess, block)
        sess.tip_hash = chain_hash(block)
        sess.tip_height = block.core.height
        for ct in block.transactions:
            sess.known_output_ids.add(output_id(ct))
        if sess.round is not None:
            sess.commits.append((block.core.height, sess.round.sequence,
                                 sess.round.current_osp, sess.round.current_vsp))
        sess.round = None
        return block.core.height, stored

    def _check_validated(self, sess: _Session, msg: wire.ValidatedBlockMsg) -> tuple[bool, str]:
        key = sess.keys.vsp.get(msg.validation_signature.signer_id)
        if key is None or not verify(key, hash_header(msg.core), msg.validation_signature):
            return False, "validation signature does not verify"
        if msg.core.previous_hash != sess.tip_hash or msg.core.height != sess.tip_height + 1:
            return False, f"stale previous hash for height {msg.core.height}"
        return True, ""

    def _flush_pending(self, sess: _Session, target: DataBlock | None = None) -> int:
        """Commit held blocks in chain order; stop at the first that lands nowhere.

        Returns how many providers stored ``target`` (or how many blocks
        flushed when no target is given).
        """
        flushed = 0
        target_stored = 0
        while sess.pending_commits:
            block = sess.pending_commits[0]
            status = self._commit_to_storage(sess.address, block)
            stored = sum(1 for v in status.values() if v == "stored")
            if target is not None and block is target:
                target_stored = stored
            if stored == 0:
                break
            sess.pending_commits.pop(0)
            flushed += 1
        return target_stored if target is not None else flushed

    def retry_pending(self, address: Address) -> int:
        """Push held blocks to storage again; returns how many flushed."""
        return self._flush_pending(self.session(address))

    # -- reads ----------------------------------------------------------------

    def read_ledger(self, address: Address) -> Ledger:
        """Fetch the ledger from the first storage provider that answers."""
        msg = wire.Query(wire.Q_GET_LEDGER, wire.AddressParam(address).encode())
        missing = 0
        for record in self.pool.records(STORAGE):
            try:
                response = self.network.request(record.endpoint, msg)
            except ProviderFault:
                continue
            if isinstance(response, wire.QueryResponse):
                return ledger_from_bytes(response.payload)
            missing += 1
        if missing:
            raise RefusalError(wire.UNKNOWN_ADDRESS, address.render())
        raise Unavailable(STORAGE, "no storage provider answered")

    def list_ledgers(self) -> tuple[Address, ...]:
        msg = wire.Query(wire.Q_GET_ROOT_RECORD, wire.AddressParam(self.root_address).encode())
        for record in self.pool.records(STORAGE):
            try:
                response = self.network.request(record.endpoint, msg)
            except ProviderFault:
                continue
            if isinstance(response, wire.QueryResponse):
                return RootRecord.decode_bytes(response.payload).ledger_addresses
        raise Unavailable(STORAGE, "no storage provider answered")
