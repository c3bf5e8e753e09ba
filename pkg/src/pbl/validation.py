"""Validity predicates over blocks, connections, and whole ledgers.

Reports are structured: every evaluated condition appears as a check with
a stable id, its height, and a reason on failure, so that tampering can
be localized precisely instead of collapsing to one boolean. Condition
ids for genesis and data blocks follow the numbering of the formal
definitions (the first four genesis conditions and the six data-block
conditions); supplemental structural checks come after them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

from .identity import PUBLIC_KEY_SIZE, SIGNATURE_SIZE, FINGERPRINT_SIZE, Signature, fingerprint, verify
from .ledger import (
    DEFAULT_MAX_PAYLOAD,
    ESP_KEYS_CONFIG,
    GBA_KEY_CONFIG,
    OSP_KEYS_CONFIG,
    USER_KEY_CONFIG,
    VSP_KEYS_CONFIG,
    ZERO_OUTPUT,
    Block,
    BlockCandidate,
    BlockHeaderCore,
    CompleteTransaction,
    DataBlock,
    GenesisBlock,
    Ledger,
    LedgerError,
    block_user_signing_bytes,
    chain_hash,
    complete_transaction,
    config_data_hash,
    data_hash_of,
    exec_sig_root_of,
    hash_header,
)
from .merkle import DIGEST_SIZE, ZERO_DIGEST

# Genesis conditions, in definition order.
G_FIELDS = "genesis.fields_present"
G_ZERO_PREVIOUS = "genesis.zero_previous_hash"
G_GBA_SIGNATURE = "genesis.gba_signature"
G_USER_SIGNATURE = "genesis.user_signature"
G_DATA_HASH = "genesis.data_hash"
G_USER_KEY = "genesis.user_key_present"

# Data-block conditions, in definition order.
B_FIELDS = "block.fields_present"
B_DATA_HASH = "block.data_hash"
B_EXEC_SIGNATURES = "block.executing_signatures"
B_ORDERING_SIGNATURE = "block.ordering_signature"
B_VALIDATION_SIGNATURE = "block.validation_signature"
B_USER_SIGNATURE = "block.user_signature"

CONNECTION = "connection"
SINGLE_GENESIS = "ledger.single_genesis"
STRUCTURE = "ledger.structure"

_MALFORMED = (ValueError, TypeError, AttributeError)


@dataclass(frozen=True)
class Check:
    """Outcome of one validity condition at one height."""

    height: int
    condition: str
    ok: bool
    reason: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> tuple[Check, ...]:
        return tuple(c for c in self.checks if not c.ok)

    @property
    def first_failure(self) -> Check | None:
        for check in self.checks:
            if not check.ok:
                return check
        return None


def _keymap(keys: Sequence[bytes]) -> dict[bytes, bytes]:
    return {fingerprint(k): k for k in keys}


def _chunk_keys(raw: bytes, what: str) -> list[bytes]:
    if len(raw) % PUBLIC_KEY_SIZE:
        raise LedgerError(f"{what} is not a whole number of {PUBLIC_KEY_SIZE}-byte keys")
    return [raw[i:i + PUBLIC_KEY_SIZE] for i in range(0, len(raw), PUBLIC_KEY_SIZE)]


@dataclass(frozen=True)
class KeyDirectory:
    """Resolves signer fingerprints to public keys, scoped by role."""

    user: bytes
    esp: Mapping[bytes, bytes]
    osp: Mapping[bytes, bytes]
    vsp: Mapping[bytes, bytes]
    gba: Mapping[bytes, bytes]

    @classmethod
    def build(
        cls,
        user: bytes,
        esp_keys: Sequence[bytes] = (),
        osp_keys: Sequence[bytes] = (),
        vsp_keys: Sequence[bytes] = (),
        gba_keys: Sequence[bytes] = (),
    ) -> "KeyDirectory":
        return cls(user, _keymap(esp_keys), _keymap(osp_keys), _keymap(vsp_keys), _keymap(gba_keys))

    @classmethod
    def from_genesis(cls, genesis: GenesisBlock) -> "KeyDirectory":
        """Assemble the directory from a genesis block's configuration."""
        user = genesis.config_value(USER_KEY_CONFIG)
        if user is None:
            raise LedgerError("genesis configuration lacks the user public key")
        def keys_for(name: str) -> list[bytes]:
            raw = genesis.config_value(name)
            return [] if raw is None else _chunk_keys(raw, name)
        gba = genesis.config_value(GBA_KEY_CONFIG)
        return cls.build(
            user,
            esp_keys=keys_for(ESP_KEYS_CONFIG),
            osp_keys=keys_for(OSP_KEYS_CONFIG),
            vsp_keys=keys_for(VSP_KEYS_CONFIG),
            gba_keys=[gba] if gba is not None else [],
        )


def _verify_role(
    role: Mapping[bytes, bytes], message: bytes, sig: Signature
) -> tuple[bool, str]:
    key = role.get(sig.signer_id)
    if key is None:
        return False, f"unregistered signer {sig.signer_id.hex()}"
    if not verify(key, message, sig):
        return False, "signature does not verify"
    return True, ""


def _signature_shape_ok(sig: Signature) -> bool:
    return len(sig.signer_id) == FINGERPRINT_SIZE and len(sig.value) == SIGNATURE_SIZE


def _tx_field_problem(ct: CompleteTransaction, max_payload: int) -> str | None:
    tx = ct.inner
    if len(tx.payload) > max_payload:
        return f"payload exceeds {max_payload} bytes"
    if not _signature_shape_ok(tx.user_signature) or not _signature_shape_ok(ct.executing_signature):
        return "malformed signature"
    for extra in tx.extra_signatures:
        if not _signature_shape_ok(extra):
            return "malformed extra signature"
    if tx.chaincode_id is None and ct.output != ZERO_OUTPUT:
        return "raw-data transaction must carry the zero output sentinel"
    return None


def _core_field_problem(core: BlockHeaderCore) -> str | None:
    for name, value in (
        ("previous_hash", core.previous_hash),
        ("data_hash", core.data_hash),
        ("exec_sig_root", core.exec_sig_root),
    ):
        if len(value) != DIGEST_SIZE:
            return f"{name} must be {DIGEST_SIZE} bytes"
    if not _signature_shape_ok(core.ordering_signature):
        return "malformed ordering signature"
    if core.height < 0 or core.created_at < 0:
        return "negative header integer"
    return None


def validate_genesis_block(
    genesis: GenesisBlock,
    gba_key: bytes,
    user_key: bytes,
    *,
    height: int = 0,
) -> ValidationReport:
    """Check the genesis-block conditions, reporting each one."""
    checks: list[Check] = []

    def add(condition: str, ok: bool, reason: str = "") -> None:
        checks.append(Check(height, condition, ok, "" if ok else reason))

    try:
        problem = _core_field_problem(genesis.core)
        if problem is None and genesis.core.height != 0:
            problem = "genesis height must be 0"
        if problem is None and not (
            _signature_shape_ok(genesis.gba_signature)
            and _signature_shape_ok(genesis.user_signature)
        ):
            problem = "malformed signature"
        add(G_FIELDS, problem is None, problem or "")
        add(G_ZERO_PREVIOUS, genesis.core.previous_hash == ZERO_DIGEST,
            "previous hash of a genesis block must be all zeros")
        header_digest = hash_header(genesis.core)
        add(G_GBA_SIGNATURE, verify(gba_key, header_digest, genesis.gba_signature),
            "genesis authority signature does not verify")
        add(G_USER_SIGNATURE,
            verify(user_key, block_user_signing_bytes(genesis.core, genesis.gba_signature),
                   genesis.user_signature),
            "user signature does not verify")
        add(G_DATA_HASH, genesis.core.data_hash == config_data_hash(genesis.config_entries),
            "data hash does not match the configuration entries")
        stored_user = genesis.config_value(USER_KEY_CONFIG)
        add(G_USER_KEY, stored_user == user_key,
            "configuration lacks the user public key" if stored_user is None
            else "configured user key differs from the ledger owner's")
    except _MALFORMED as exc:
        checks.append(Check(height, G_FIELDS, False, f"malformed block: {exc}"))
    return ValidationReport(tuple(checks))


def validate_data_block(
    block: DataBlock,
    keys: KeyDirectory,
    *,
    height: int | None = None,
    max_payload: int = DEFAULT_MAX_PAYLOAD,
) -> ValidationReport:
    """Check the six data-block conditions, reporting each one."""
    at = block.core.height if height is None else height
    checks: list[Check] = []

    def add(condition: str, ok: bool, reason: str = "") -> None:
        checks.append(Check(at, condition, ok, "" if ok else reason))

    try:
        problem = _core_field_problem(block.core)
        if problem is None and not block.transactions:
            problem = "a data block needs at least one transaction"
        if problem is None and not (
            _signature_shape_ok(block.validation_signature)
            and _signature_shape_ok(block.user_signature)
        ):
            problem = "malformed signature"
        if problem is None:
            for i, ct in enumerate(block.transactions):
                tx_problem = _tx_field_problem(ct, max_payload)
                if tx_problem is not None:
                    problem = f"transaction {i}: {tx_problem}"
                    break
        add(B_FIELDS, problem is None, problem or "")

        add(B_DATA_HASH, block.core.data_hash == data_hash_of(block.transactions),
            "data hash does not match the transactions")

        bad: list[str] = []
        for i, ct in enumerate(block.transactions):
            ok, why = _verify_role(keys.esp, ct.signing_bytes(), ct.executing_signature)
            if not ok:
                bad.append(f"transaction {i}: {why}")
        add(B_EXEC_SIGNATURES, not bad, "; ".join(bad))

        if block.core.exec_sig_root != exec_sig_root_of(block.transactions):
            add(B_ORDERING_SIGNATURE, False,
                "executing-signature root does not match the transactions")
        else:
            ok, why = _verify_role(keys.osp, block.core.exec_sig_root,
                                   block.core.ordering_signature)
            add(B_ORDERING_SIGNATURE, ok, f"ordering signature: {why}")

        header_digest = hash_header(block.core)
        ok, why = _verify_role(keys.vsp, header_digest, block.validation_signature)
        add(B_VALIDATION_SIGNATURE, ok, f"validation signature: {why}")

        add(B_USER_SIGNATURE,
            verify(keys.user, block_user_signing_bytes(block.core, block.validation_signature),
                   block.user_signature),
            "user signature does not verify")
    except _MALFORMED as exc:
        checks.append(Check(at, B_FIELDS, False, f"malformed block: {exc}"))
    return ValidationReport(tuple(checks))


def validate_connection(prev: Block, nxt: DataBlock) -> bool:
    """True iff ``nxt`` chains directly onto ``prev``."""
    try:
        return (
            nxt.core.previous_hash == chain_hash(prev)
            and nxt.core.height == prev.core.height + 1
        )
    except _MALFORMED:
        return False


def _connection_check(prev: Block, nxt: DataBlock, position: int) -> Check:
    ok = validate_connection(prev, nxt)
    reason = ""
    if not ok:
        if nxt.core.height != prev.core.height + 1:
            reason = (f"connection ({position - 1},{position}): height "
                      f"{nxt.core.height} does not follow {prev.core.height}")
        else:
            reason = (f"connection ({position - 1},{position}): previous hash "
                      f"does not match the chain hash of height {position - 1}")
    return Check(position, CONNECTION, ok, reason)


def validate_ledger(
    ledger: Ledger,
    keys: KeyDirectory,
    *,
    max_payload: int = DEFAULT_MAX_PAYLOAD,
) -> ValidationReport:
    """Aggregate validity of a whole ledger.

    Evaluates, in ledger order: the genesis conditions, then for each data
    block the single-genesis rule, its connection to the previous block,
    and the six block conditions. Every condition is evaluated (no early
    exit); ``first_failure`` localizes the earliest violation.
    """
    checks: list[Check] = []
    if ledger.genesis is None:
        return ValidationReport((Check(0, STRUCTURE, False, "ledger has no genesis block"),))

    gba_keys = list(keys.gba.values())
    gba_key = gba_keys[0] if len(gba_keys) == 1 else keys.gba.get(
        ledger.genesis.gba_signature.signer_id, b"")
    checks.extend(validate_genesis_block(ledger.genesis, gba_key or b"", keys.user).checks)

    prev: Block = ledger.genesis
    for position, block in enumerate(ledger.blocks, start=1):
        try:
            is_second_genesis = block.core.previous_hash == ZERO_DIGEST
        except _MALFORMED:
            is_second_genesis = False
        checks.append(Check(position, SINGLE_GENESIS, not is_second_genesis,
                            "only one genesis block is allowed (zero previous hash)"))
        checks.append(_connection_check(prev, block, position))
        checks.extend(
            validate_data_block(block, keys, max_payload=max_payload, height=position).checks
        )
        prev = block
    return ValidationReport(tuple(checks))


def tamper_scan(ledger: Ledger, keys: KeyDirectory) -> tuple[Check, ...]:
    """Exhaustive localization of every failed condition in a ledger.

    Unlike ``first_failure`` consumers, callers get every violating
    (height, condition, reason) triple; an untampered valid ledger yields
    an empty tuple.
    """
    return validate_ledger(ledger, keys).failures


def validate_candidate(candidate: BlockCandidate, keys: KeyDirectory,
                       *, max_payload: int = DEFAULT_MAX_PAYLOAD) -> str | None:
    """Pre-signature conditions for a candidate; failing condition id or None."""
    if not candidate.transactions:
        return B_FIELDS
    for ct in candidate.transactions:
        if _tx_field_problem(ct, max_payload) is not None:
            return B_FIELDS
    if candidate.data_hash != data_hash_of(candidate.transactions):
        return B_DATA_HASH
    for ct in candidate.transactions:
        ok, _ = _verify_role(keys.esp, ct.signing_bytes(), ct.executing_signature)
        if not ok:
            return B_EXEC_SIGNATURES
    if candidate.exec_sig_root != exec_sig_root_of(candidate.transactions):
        return B_ORDERING_SIGNATURE
    ok, _ = _verify_role(keys.osp, candidate.exec_sig_root, candidate.ordering_signature)
    if not ok:
        return B_ORDERING_SIGNATURE
    return None


def colluding_rewrite(
    ledger: Ledger,
    height: int,
    *,
    osp,
    vsp,
    user,
    esp=None,
    mutate: Callable[[DataBlock], tuple[Sequence[CompleteTransaction], int]] | None = None,
) -> Ledger:
    """Rewrite a ledger from ``height`` onward so it validates again.

    Models the colluding-services attack: after tampering with the block
    at ``height`` (1-based data-block height), every block from there to
    the tip is re-signed by the ordering, validation, and user signers —
    three signature operations per touched block, so 3*(n-height)+3 in
    total for a ledger of n data blocks. Transactions whose bytes were
    changed by ``mutate`` additionally need their inner user signature and
    executing signature redone (``esp`` required then).

    The default mutation bumps the block's creation time, which changes
    the header without touching any transaction.
    """
    if not 1 <= height <= len(ledger.blocks):
        raise LedgerError(f"height {height} out of range 1..{len(ledger.blocks)}")
    target = ledger.blocks[height - 1]
    if mutate is None:
        new_txs: Sequence[CompleteTransaction] = target.transactions
        created_at = target.core.created_at + 1
    else:
        new_txs, created_at = mutate(target)

    resigned: list[CompleteTransaction] = []
    for i, ct in enumerate(new_txs):
        original = target.transactions[i] if i < len(target.transactions) else None
        if original is not None and ct.encode() == original.encode():
            resigned.append(ct)
            continue
        if esp is None:
            raise LedgerError("changing transaction data requires an executing signer")
        inner = replace(ct.inner, user_signature=user.sign(ct.inner.signing_bytes()))
        resigned.append(complete_transaction(inner, ct.output, esp))

    rebuilt: list[DataBlock] = list(ledger.blocks[:height - 1])
    prev: Block = rebuilt[-1] if rebuilt else ledger.genesis
    for h in range(height, len(ledger.blocks) + 1):
        source = ledger.blocks[h - 1]
        txs = tuple(resigned) if h == height else source.transactions
        at = created_at if h == height else source.core.created_at
        exec_root = exec_sig_root_of(txs)
        core = BlockHeaderCore(
            previous_hash=chain_hash(prev),
            data_hash=data_hash_of(txs),
            exec_sig_root=exec_root,
            ordering_signature=osp.sign(exec_root),
            height=h,
            created_at=at,
        )
        validation_signature = vsp.sign(hash_header(core))
        user_signature = user.sign(block_user_signing_bytes(core, validation_signature))
        block = DataBlock(core, txs, validation_signature, user_signature)
        rebuilt.append(block)
        prev = block
    return Ledger(ledger.genesis, tuple(rebuilt), ledger.ledger_address)
