"""Full-system simulation: provider stacks, fault matrices, scenarios.

``build_stack`` wires a complete provider deployment onto one harness
network; ``run_fault_matrix`` sweeps every per-kind fault-count
combination and records read/write availability against the expected
rule (reads need one healthy storage provider, writes need one healthy
provider of every kind); ``run_scenario`` replays a text scenario file.

Scenario grammar (one directive per line, ``#`` comments):

    seed N                  ttl MS                cutting count|interval|size N
    provider ID KIND        create-ledger         submit PAYLOAD [CHAINCODE]
    fault ID silent|corrupt-signature|delayed MS [window START END]
    heal ID                 advance MS            poll
    read                    probe                 expect read|write ok|fail
    matrix
"""

from __future__ import annotations

import random
import shlex
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

from .chaincode import ChaincodeRegistry, DEFAULT_REGISTRY
from .harness import (
    CORRUPT_SIGNATURE,
    DELAYED,
    FaultProgram,
    Network,
    SILENT,
    VirtualClock,
)
from .identity import SeedPhrase, generate_seed_phrase
from .ledger import ledger_to_bytes
from .services import (
    CuttingCondition,
    ExecutingService,
    GBA,
    ESP,
    OSP,
    STORAGE,
    VSP,
    GenesisAuthority,
    KycPolicy,
    LedgerApi,
    LedgerDirectory,
    MemoryBackend,
    FileBackend,
    OrderingService,
    ProviderPool,
    ProviderRecord,
    RefusalError,
    SERVICE_KINDS,
    StorageService,
    Unavailable,
    ValidationService,
)
from .fixtures import keypair_for
from .validation import KeyDirectory, validate_ledger


@dataclass
class Stack:
    """A wired deployment: one network, one pool, all providers."""

    network: Network
    clock: VirtualClock
    pool: ProviderPool
    directory: LedgerDirectory
    registry: ChaincodeRegistry
    services: dict[str, object]
    storages: list[StorageService]
    seed: int

    def ids_of(self, kind: str) -> list[str]:
        return [r.provider_id for r in self.pool.records(kind)]

    def default_phrase(self) -> SeedPhrase:
        return generate_seed_phrase(12, random.Random(self.seed))

    def new_api(self, phrase: SeedPhrase | None = None) -> LedgerApi:
        return LedgerApi(phrase or self.default_phrase(), self.pool, self.network,
                         self.directory, self.network.clock, self.registry)

    def heal_all(self) -> None:
        for provider_id in self.services:
            self.network.heal(provider_id)


def build_stack(
    counts: dict[str, int] | int = 3,
    *,
    seed: int = 0,
    cutting: CuttingCondition = CuttingCondition.count(3),
    ttl_ms: int = 500,
    clock: VirtualClock | None = None,
    storage_paths: list[str | Path] | None = None,
    kyc: KycPolicy = KycPolicy(),
    registry: ChaincodeRegistry = DEFAULT_REGISTRY,
) -> Stack:
    """Build a deployment with ``counts`` providers per kind.

    Provider key pairs derive from ``seed``, so two stacks built with the
    same arguments behave identically. Storage uses in-memory backends
    unless ``storage_paths`` names a directory per storage provider.
    """
    if isinstance(counts, int):
        counts = {kind: counts for kind in SERVICE_KINDS}
    clock = clock or VirtualClock()
    network = Network(clock, default_ttl_ms=ttl_ms)
    directory = LedgerDirectory()
    records: list[ProviderRecord] = []
    services: dict[str, object] = {}
    storages: list[StorageService] = []

    for kind in SERVICE_KINDS:
        for i in range(1, counts.get(kind, 0) + 1):
            provider_id = f"{kind.lower()}-{i}"
            keypair = keypair_for(provider_id, seed)
            records.append(ProviderRecord(provider_id, kind, keypair.public, provider_id))
            if kind == GBA:
                service: object = GenesisAuthority(provider_id, keypair, clock, kyc)
            elif kind == ESP:
                service = ExecutingService(provider_id, keypair, network, directory, registry)
            elif kind == OSP:
                service = OrderingService(provider_id, keypair, network, directory, cutting, clock)
            elif kind == VSP:
                service = ValidationService(provider_id, keypair)
            else:
                if storage_paths is not None:
                    backend = FileBackend(storage_paths[len(storages)])
                else:
                    backend = MemoryBackend()
                storage = StorageService(provider_id, backend)
                storages.append(storage)
                service = storage
            services[provider_id] = service
            network.register(provider_id, service.handle)  # type: ignore[attr-defined]

    pool = ProviderPool(records, rng_seed=seed)
    return Stack(network, clock, pool, directory, registry, services, storages, seed)


# --- fault matrix -----------------------------------------------------------

@dataclass(frozen=True)
class MatrixCell:
    """One fault combination and what happened under it."""

    faults: tuple[tuple[str, int], ...]
    read_ok: bool
    write_ok: bool
    expected_read: bool
    expected_write: bool
    stored_valid: bool

    @property
    def matches(self) -> bool:
        return (self.read_ok == self.expected_read
                and self.write_ok == self.expected_write
                and self.stored_valid)


def run_fault_matrix(
    counts: dict[str, int] | int = 3,
    *,
    seed: int = 7,
    ttl_ms: int = 500,
) -> list[MatrixCell]:
    """Sweep every per-kind fault-count combination.

    For each cell the chosen providers go silent, a read of a pre-built
    reference ledger and a full create-submit-commit write round are
    attempted, and everything is healed again. Which providers fault is
    drawn from a seeded RNG, so repeated runs explore the same subsets.
    """
    if isinstance(counts, int):
        counts = {kind: counts for kind in SERVICE_KINDS}
    stack = build_stack(counts, seed=seed, cutting=CuttingCondition.count(1), ttl_ms=ttl_ms)
    api = stack.new_api()
    reference = api.create_ledger(0)
    api.submit(reference.ledger_address, b"reference data")
    rng = random.Random(seed)

    cells: list[MatrixCell] = []
    kinds = list(SERVICE_KINDS)
    grid = product(*(range(counts[k] + 1) for k in kinds))
    for cell_index, combo in enumerate(grid, start=1):
        faults = dict(zip(kinds, combo))
        for kind, n_faults in faults.items():
            for provider_id in rng.sample(stack.ids_of(kind), n_faults):
                stack.network.inject(provider_id, FaultProgram(SILENT))

        read_ok, stored_valid = _probe_read(api, reference.ledger_address)
        write_ok, write_valid = _probe_write(stack, api, cell_index)

        stack.heal_all()
        cells.append(MatrixCell(
            faults=tuple(sorted(faults.items())),
            read_ok=read_ok,
            write_ok=write_ok,
            expected_read=faults[STORAGE] < counts[STORAGE],
            expected_write=all(faults[k] < counts[k] for k in kinds),
            stored_valid=stored_valid and write_valid,
        ))
    return cells


def _probe_read(api: LedgerApi, address) -> tuple[bool, bool]:
    try:
        ledger = api.read_ledger(address)
    except (Unavailable, RefusalError):
        return False, True
    keys = KeyDirectory.from_genesis(ledger.genesis)
    return True, validate_ledger(ledger, keys).ok


def _probe_write(stack: Stack, api: LedgerApi, index: int) -> tuple[bool, bool]:
    try:
        created = api.create_ledger(index)
        receipt = api.submit(created.ledger_address, b"probe data")
    except (Unavailable, RefusalError):
        return False, True
    ok = receipt.committed_height is not None and receipt.stored_count >= 1
    if not ok:
        return False, True
    try:
        ledger = api.read_ledger(created.ledger_address)
    except (Unavailable, RefusalError):
        return ok, True  # stored but unreadable this instant: nothing to audit
    return ok, validate_ledger(ledger, KeyDirectory.from_genesis(ledger.genesis)).ok


# --- scenarios ---------------------------------------------------------------

@dataclass
class ScenarioResult:
    lines: list[str] = field(default_factory=list)
    ok: bool = True
    faulted: bool = False

    def emit(self, **fields) -> None:
        self.lines.append(" ".join(f"{k}={v}" for k, v in fields.items()))


class ScenarioError(ValueError):
    pass


_FAULT_MODES = {"silent": SILENT, "delayed": DELAYED, "corrupt-signature": CORRUPT_SIGNATURE}


def run_scenario(text: str, *, base_dir: Path | None = None) -> ScenarioResult:
    """Replay a scenario file and report availability outcomes."""
    result = ScenarioResult()
    seed = 0
    ttl = 500
    cutting = CuttingCondition.count(1)
    declared: dict[str, int] = {kind: 0 for kind in SERVICE_KINDS}
    stack: Stack | None = None
    api: LedgerApi | None = None
    address = None
    next_index = 0
    last_outcome = {"read": None, "write": None}

    def ensure_stack() -> Stack:
        nonlocal stack, api
        if stack is None:
            for kind, n in declared.items():
                if n == 0:
                    raise ScenarioError(f"scenario declares no {kind} providers")
            stack = build_stack(declared, seed=seed, cutting=cutting, ttl_ms=ttl)
            api = stack.new_api()
        return stack

    for line_no, raw in enumerate(text.splitlines(), start=1):
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScenarioError(f"line {line_no}: {exc}") from exc
        if not tokens:
            continue
        op, args = tokens[0], tokens[1:]
        try:
            if op == "seed":
                seed = int(args[0])
            elif op == "ttl":
                ttl = int(args[0])
            elif op == "cutting":
                cutting = CuttingCondition(args[0], int(args[1]))
            elif op == "provider":
                provider_id, kind = args[0], args[1].upper()
                if kind not in SERVICE_KINDS:
                    raise ScenarioError(f"line {line_no}: unknown kind {kind}")
                declared[kind] += 1
            elif op == "create-ledger":
                ensure_stack()
                created = api.create_ledger(next_index)
                next_index += 1
                address = created.ledger_address
                result.emit(op="create", ok="true", address=address.render())
            elif op == "submit":
                ensure_stack()
                payload = args[0].encode()
                chaincode = args[1] if len(args) > 1 else None
                receipt = api.submit(address, payload, chaincode)
                committed = receipt.committed_height
                result.emit(op="submit", ok=str(receipt.refusal is None).lower(),
                            esp=receipt.esp_id, osp=receipt.osp_id,
                            committed="none" if committed is None else committed,
                            refusal="none" if receipt.refusal is None else receipt.refusal[0])
                last_outcome["write"] = (receipt.refusal is None
                                         and (committed is None or receipt.stored_count >= 1))
            elif op == "poll":
                ensure_stack()
                receipt = api.poll(address)
                committed = None if receipt is None else receipt.committed_height
                result.emit(op="poll", committed="none" if committed is None else committed)
            elif op == "advance":
                ensure_stack().clock.advance(int(args[0]))
            elif op == "fault":
                provider_id, mode_name = args[0], args[1]
                mode = _FAULT_MODES.get(mode_name)
                if mode is None:
                    raise ScenarioError(f"line {line_no}: unknown fault mode {mode_name}")
                rest = args[2:]
                delay = 0
                if mode == DELAYED:
                    delay, rest = int(rest[0]), rest[1:]
                window = None
                if rest and rest[0] == "window":
                    window = (int(rest[1]), int(rest[2]))
                ensure_stack().network.inject(provider_id, FaultProgram(mode, delay, window))
                result.emit(op="fault", provider=provider_id, mode=mode_name)
            elif op == "heal":
                ensure_stack().network.heal(args[0])
                result.emit(op="heal", provider=args[0])
            elif op == "read":
                ensure_stack()
                ok, valid = _probe_read(api, address)
                last_outcome["read"] = ok and valid
                result.emit(op="read", ok=str(ok and valid).lower())
            elif op == "probe":
                ensure_stack()
                read_ok, read_valid = _probe_read(api, address)
                last_outcome["read"] = read_ok and read_valid
                try:
                    receipt = api.submit(address, f"probe {line_no}".encode())
                    write_ok = (receipt.refusal is None
                                and (receipt.committed_height is None
                                     or receipt.stored_count >= 1))
                except (Unavailable, RefusalError):
                    write_ok = False
                last_outcome["write"] = write_ok
                result.emit(op="probe", read=str(last_outcome["read"]).lower(),
                            write=str(write_ok).lower())
            elif op == "expect":
                what, wanted = args[0], args[1] == "ok"
                actual = last_outcome.get(what)
                matched = actual is not None and actual == wanted
                if not matched:
                    result.ok = False
                result.emit(op="expect", what=what, wanted="ok" if wanted else "fail",
                            matched=str(matched).lower())
            elif op == "matrix":
                ensure_stack()
                cells = run_fault_matrix(declared, seed=seed, ttl_ms=ttl)
                mismatches = 0
                for cell in cells:
                    if not cell.matches:
                        mismatches += 1
                    result.emit(
                        op="matrix",
                        **{k.lower(): n for k, n in cell.faults},
                        read="ok" if cell.read_ok else "fail",
                        write="ok" if cell.write_ok else "fail",
                        matched=str(cell.matches).lower(),
                    )
                result.emit(op="matrix-summary", cells=len(cells), mismatches=mismatches)
                if mismatches:
                    result.ok = False
            else:
                raise ScenarioError(f"line {line_no}: unknown directive {op!r}")
        except (Unavailable,) as exc:
            result.emit(op=op, ok="false", error=str(exc))
            result.faulted = True
            if op in ("create-ledger", "submit", "poll"):
                last_outcome["write"] = False
        except RefusalError as exc:
            result.emit(op=op, ok="false", refusal=exc.code)
            if op in ("create-ledger", "submit", "poll"):
                last_outcome["write"] = False
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"line {line_no}: bad arguments for {op!r}: {exc}") from exc
    return result


def final_ledger_bytes(stack: Stack, api: LedgerApi, address) -> bytes:
    """Canonical file bytes of a ledger as stored (for determinism checks)."""
    return ledger_to_bytes(api.read_ledger(address))
