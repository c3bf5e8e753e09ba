"""Service behaviours: genesis authority, executing, ordering, validation,
storage, and the user-agent flows that tie them together."""

from __future__ import annotations

import dataclasses
import random

import pytest

from pbl import wire
from pbl.fixtures import build_demo_ledger, keypair_for
from pbl.harness import FaultProgram, SILENT, VirtualClock
from pbl.identity import Address, ZERO_SIGNATURE
from pbl.ledger import (
    ConfigEntry,
    GBA_KEY_CONFIG,
    USER_KEY_CONFIG,
    ZERO_OUTPUT,
    build_candidate,
    chain_hash,
    complete_transaction,
    encode_payload_with_inputs,
    ledger_to_bytes,
    new_transaction,
    output_id,
)
from pbl.services import (
    CuttingCondition,
    FileBackend,
    GenesisAuthority,
    IgnoredBlock,
    KycPolicy,
    MemoryBackend,
    OrderingService,
    ProviderPool,
    ProviderRecord,
    RefusalError,
    StorageService,
    TipInfo,
    Unavailable,
    ValidationService,
    dependency_sort,
)
from pbl.simulate import build_stack
from pbl.validation import KeyDirectory, validate_genesis_block, validate_ledger


# --- provider pool ----------------------------------------------------------

def _records(m: int = 2) -> list[ProviderRecord]:
    records = []
    for kind in ("GBA", "ESP", "OSP", "VSP", "STORAGE"):
        for i in range(1, m + 1):
            pid = f"{kind.lower()}-{i}"
            records.append(ProviderRecord(pid, kind, keypair_for(pid).public, pid))
    return records


def test_pool_rejects_empty_kind():
    records = [r for r in _records() if r.service_kind != "VSP"]
    with pytest.raises(ValueError, match="VSP"):
        ProviderPool(records)


def test_pool_rejects_duplicate_ids():
    records = _records()
    with pytest.raises(ValueError, match="duplicate"):
        ProviderPool(records + [records[0]])


def test_pool_draw_respects_exclusions():
    pool = ProviderPool(_records(3), rng_seed=1)
    drawn = pool.draw("ESP", exclude={"esp-1", "esp-2"})
    assert drawn.provider_id == "esp-3"
    with pytest.raises(Unavailable):
        pool.draw("ESP", exclude={"esp-1", "esp-2", "esp-3"})


# --- genesis authority -------------------------------------------------------

def _gba(kyc: KycPolicy = KycPolicy()) -> GenesisAuthority:
    return GenesisAuthority("gba-1", keypair_for("gba-1"), VirtualClock(5), kyc)


def test_issue_genesis_with_empty_config_auto_inserts_user_key():
    gba = _gba()
    user = keypair_for("user-a")
    genesis = gba.issue_genesis(wire.GenesisRequest(user.public, (), b""), user)
    assert genesis.config_value(USER_KEY_CONFIG) == user.public
    report = validate_genesis_block(genesis, gba.keypair.public, user.public)
    assert report.ok, report.first_failure


def test_issue_genesis_keeps_extra_config_entries():
    gba = _gba()
    user = keypair_for("user-b")
    firewall = keypair_for("firewall")
    request = wire.GenesisRequest(
        user.public, (ConfigEntry("firewall_public_key", firewall.public),), b"")
    genesis = gba.issue_genesis(request, user)
    assert genesis.config_value("firewall_public_key") == firewall.public
    assert genesis.config_value(GBA_KEY_CONFIG) == gba.keypair.public


def test_kyc_deny_list_refuses():
    gba = _gba(KycPolicy(denied=frozenset({b"blocked"})))
    user = keypair_for("user-c")
    with pytest.raises(RefusalError) as exc:
        gba.build_genesis(wire.GenesisRequest(user.public, (), b"blocked"))
    assert exc.value.code == wire.KYC_DENIED
    assert gba.build_genesis(wire.GenesisRequest(user.public, (), b"fine"))


def test_missing_user_key_refused():
    gba = _gba()
    with pytest.raises(RefusalError) as exc:
        gba.build_genesis(wire.GenesisRequest(b"", (), b""))
    assert exc.value.code == wire.MISSING_USER_KEY


# --- executing service --------------------------------------------------------

def _esp_stack():
    stack = build_stack(2, seed=30, cutting=CuttingCondition.count(3))
    api = stack.new_api()
    created = api.create_ledger(0)
    esp = stack.services["esp-1"]
    return stack, api, created, esp


def test_esp_raw_data_gets_zero_output_and_valid_signature():
    stack, api, created, esp = _esp_stack()
    session = api.session(created.ledger_address)
    tx = new_transaction(created.ledger_address, b"raw bytes", session.keypair,
                         submitted_at=1)
    ct = esp.execute_and_sign(tx)
    assert ct.output == ZERO_OUTPUT
    from pbl.identity import verify

    assert verify(esp.keypair.public, ct.signing_bytes(), ct.executing_signature)


def test_esp_balance_output():
    stack, api, created, esp = _esp_stack()
    session = api.session(created.ledger_address)
    tx = new_transaction(created.ledger_address, b"+25", session.keypair,
                         chaincode_id="balance", submitted_at=1)
    ct = esp.execute_and_sign(tx, prior_state=b"100")
    assert ct.output == b"125"


def test_esp_rejects_tampered_payload():
    stack, api, created, esp = _esp_stack()
    session = api.session(created.ledger_address)
    tx = new_transaction(created.ledger_address, b"honest", session.keypair, submitted_at=1)
    tampered = dataclasses.replace(tx, payload=b"forged!")
    with pytest.raises(RefusalError) as exc:
        esp.execute_and_sign(tampered)
    assert exc.value.code == wire.BAD_USER_SIGNATURE


def test_esp_rejects_unknown_chaincode():
    stack, api, created, esp = _esp_stack()
    session = api.session(created.ledger_address)
    tx = new_transaction(created.ledger_address, b"x", session.keypair,
                         chaincode_id="nope", submitted_at=1)
    with pytest.raises(RefusalError) as exc:
        esp.execute_and_sign(tx)
    assert exc.value.code == wire.UNKNOWN_CHAINCODE


def test_esp_rejects_malformed_chaincode_payload_with_reason():
    stack, api, created, esp = _esp_stack()
    session = api.session(created.ledger_address)
    tx = new_transaction(created.ledger_address, b"12.5", session.keypair,
                         chaincode_id="balance", submitted_at=1)
    with pytest.raises(RefusalError) as exc:
        esp.execute_and_sign(tx)
    assert exc.value.code == wire.MALFORMED_PAYLOAD
    assert "decimal" in exc.value.detail


# --- ordering service -----------------------------------------------------------

def _osp_setup(cutting: CuttingCondition):
    stack = build_stack(2, seed=31, cutting=cutting)
    api = stack.new_api()
    created = api.create_ledger(0)
    session = api.session(created.ledger_address)
    osp: OrderingService = stack.services["osp-1"]
    esp = stack.services["esp-1"]
    osp.start_round(created.ledger_address, "vsp-1")

    def make_ct(payload: bytes):
        tx = new_transaction(created.ledger_address, payload, session.keypair,
                             submitted_at=stack.clock.now_ms())
        return esp.execute_and_sign(tx)

    return stack, created, osp, make_ct


def test_count_condition_cuts_on_third_transaction():
    stack, created, osp, make_ct = _osp_setup(CuttingCondition.count(3))
    for i in range(2):
        osp.accept(make_ct(f"doc {i}".encode()))
        assert osp.maybe_cut(created.ledger_address) is None
    osp.accept(make_ct(b"doc 2"))
    candidate = osp.maybe_cut(created.ledger_address)
    assert candidate is not None
    assert len(candidate.transactions) == 3


def test_interval_condition_with_no_pending_emits_nothing():
    stack, created, osp, make_ct = _osp_setup(CuttingCondition.interval(2))
    stack.clock.advance(10_000)
    assert osp.maybe_cut(created.ledger_address) is None


def test_interval_condition_cuts_after_expiry():
    stack, created, osp, make_ct = _osp_setup(CuttingCondition.interval(2))
    osp.accept(make_ct(b"early"))
    assert osp.maybe_cut(created.ledger_address) is None
    stack.clock.advance(2_000)
    candidate = osp.maybe_cut(created.ledger_address)
    assert candidate is not None
    assert len(candidate.transactions) == 1


def test_size_condition_cuts_at_boundary_overflow_starts_next():
    stack, created, osp0, make_ct = _osp_setup(CuttingCondition.count(99))
    cts = [make_ct(b"fixed-size payload!") for _ in range(4)]
    one = len(cts[0].encode())
    threshold = 3 * one + one // 2  # three fit, the fourth overflows
    osp = OrderingService("osp-z", keypair_for("osp-1", 31), stack.network,
                          stack.directory, CuttingCondition.size(threshold),
                          stack.clock)
    for ct in cts[:3]:
        osp.accept(ct)
        assert osp.maybe_cut(created.ledger_address) is None
    osp.accept(cts[3])
    candidate = osp.maybe_cut(created.ledger_address)
    assert candidate is not None
    assert len(candidate.transactions) == 3
    assert sum(len(ct.encode()) for ct in candidate.transactions) <= threshold
    # The overflowing transaction seeds the next pool.
    assert osp._pool(created.ledger_address).pending == [cts[3]]


def test_oversized_single_transaction_forms_its_own_block():
    stack, created, osp, make_ct = _osp_setup(CuttingCondition.size(100))
    big = make_ct(bytes(300))
    osp.accept(big)
    candidate = osp.maybe_cut(created.ledger_address)
    assert candidate is not None
    assert candidate.transactions == (big,)


def test_osp_drops_unregistered_signer():
    stack, created, osp, make_ct = _osp_setup(CuttingCondition.count(3))
    ct = make_ct(b"fine")
    rogue = keypair_for("rogue")
    forged = complete_transaction(ct.inner, ct.output, rogue)
    with pytest.raises(RefusalError) as exc:
        osp.accept(forged)
    assert exc.value.code == wire.UNREGISTERED_SIGNER
    assert osp.dropped


def test_dependency_sort_is_stable_and_topological():
    demo = build_demo_ledger(1, txs_per_block=3, seed=32)
    a, b, c = demo.ledger.blocks[0].transactions
    # Make c consume a's output; keep arrival order c, b, a.
    payload = encode_payload_with_inputs([output_id(a)], b"uses a")
    tx = new_transaction(demo.ledger.ledger_address, payload, demo.user, submitted_at=9)
    c = complete_transaction(tx, b"\x00", demo.esp)
    ordered = dependency_sort([c, b, a])
    assert ordered.index(a) < ordered.index(c)
    assert ordered.index(b) < ordered.index(c)


# --- validation service ----------------------------------------------------------

def _vsp_setup():
    demo = build_demo_ledger(2, txs_per_block=2, seed=33)
    vsp = ValidationService("vsp-x", demo.vsp)
    tip = TipInfo(chain_hash(demo.ledger.tip), demo.ledger.tip.core.height,
                  frozenset(output_id(ct) for b in demo.ledger.blocks
                            for ct in b.transactions))
    return demo, vsp, tip


def test_vsp_signs_well_formed_candidate():
    demo, vsp, tip = _vsp_setup()
    cts = demo.ledger.blocks[-1].transactions
    tx = new_transaction(demo.ledger.ledger_address, b"new doc", demo.user, submitted_at=50)
    candidate = build_candidate(demo.ledger.ledger_address,
                                [complete_transaction(tx, b"\x00", demo.esp)],
                                demo.osp, created_at=51)
    outcome = vsp.validate_and_sign(candidate, tip, demo.keys)
    assert isinstance(outcome, wire.ValidatedBlockMsg)
    from pbl.identity import verify
    from pbl.ledger import hash_header

    assert verify(demo.vsp.public, hash_header(outcome.core), outcome.validation_signature)
    assert outcome.core.previous_hash == tip.tip_hash
    assert outcome.core.height == tip.tip_height + 1


def test_vsp_ignores_forward_dependency():
    """Transaction 0 consuming transaction 1's output is marked ignored."""
    demo, vsp, tip = _vsp_setup()
    tx_b = new_transaction(demo.ledger.ledger_address, b"later", demo.user, submitted_at=60)
    ct_b = complete_transaction(tx_b, b"\x00", demo.esp)
    payload = encode_payload_with_inputs([output_id(ct_b)], b"too eager")
    tx_a = new_transaction(demo.ledger.ledger_address, payload, demo.user, submitted_at=61)
    ct_a = complete_transaction(tx_a, b"\x00", demo.esp)
    candidate = build_candidate(demo.ledger.ledger_address, [ct_a, ct_b],
                                demo.osp, created_at=62)
    outcome = vsp.validate_and_sign(candidate, tip, demo.keys)
    assert isinstance(outcome, IgnoredBlock)
    assert outcome.violating_index == 0


def test_vsp_rejects_foreign_ordering_signature():
    demo, vsp, tip = _vsp_setup()
    intruder = keypair_for("intruder-osp")
    tx = new_transaction(demo.ledger.ledger_address, b"doc", demo.user, submitted_at=70)
    candidate = build_candidate(demo.ledger.ledger_address,
                                [complete_transaction(tx, b"\x00", demo.esp)],
                                intruder, created_at=71)
    with pytest.raises(RefusalError) as exc:
        vsp.validate_and_sign(candidate, tip, demo.keys)
    assert exc.value.code == "block.ordering_signature"


def test_vsp_rejects_bad_transaction_user_signature():
    demo, vsp, tip = _vsp_setup()
    outsider = keypair_for("outsider")
    tx = new_transaction(demo.ledger.ledger_address, b"doc", outsider, submitted_at=72)
    candidate = build_candidate(demo.ledger.ledger_address,
                                [complete_transaction(tx, b"\x00", demo.esp)],
                                demo.osp, created_at=73)
    with pytest.raises(RefusalError) as exc:
        vsp.validate_and_sign(candidate, tip, demo.keys)
    assert exc.value.code == wire.BAD_USER_SIGNATURE


# --- storage -------------------------------------------------------------------

def test_storage_round_trip_is_byte_identical(demo5):
    storage = StorageService("storage-x", MemoryBackend())
    ledger = demo5.ledger
    storage.put_block(ledger.ledger_address, ledger.genesis)
    for block in ledger.blocks:
        storage.put_block(ledger.ledger_address, block)
    back = storage.get_ledger(ledger.ledger_address)
    assert ledger_to_bytes(back) == ledger_to_bytes(ledger)


def test_storage_rejects_non_extending_block(demo5):
    storage = StorageService("storage-x", MemoryBackend())
    ledger = demo5.ledger
    storage.put_block(ledger.ledger_address, ledger.genesis)
    storage.put_block(ledger.ledger_address, ledger.blocks[0])
    with pytest.raises(RefusalError) as exc:
        storage.put_block(ledger.ledger_address, ledger.blocks[2])
    assert exc.value.code == wire.NOT_EXTENDING_TIP
    # A forked alternative at an occupied height is also refused.
    fork = dataclasses.replace(
        ledger.blocks[0],
        core=dataclasses.replace(ledger.blocks[0].core, created_at=999_999))
    with pytest.raises(RefusalError):
        storage.put_block(ledger.ledger_address, fork)


def test_storage_rejects_user_unsigned_block(demo5):
    storage = StorageService("storage-x", MemoryBackend())
    ledger = demo5.ledger
    storage.put_block(ledger.ledger_address, ledger.genesis)
    unsigned = dataclasses.replace(ledger.blocks[0], user_signature=ZERO_SIGNATURE)
    with pytest.raises(RefusalError) as exc:
        storage.put_block(ledger.ledger_address, unsigned)
    assert exc.value.code == wire.BAD_USER_SIGNATURE


def test_storage_heights_form_single_chain(demo5):
    storage = StorageService("storage-x", MemoryBackend())
    ledger = demo5.ledger
    storage.put_block(ledger.ledger_address, ledger.genesis)
    for block in ledger.blocks:
        storage.put_block(ledger.ledger_address, block)
    heights = [b.core.height for b in storage.get_ledger(ledger.ledger_address).blocks]
    assert heights == sorted(set(heights))


def test_memory_and_file_backends_agree(tmp_path, demo5):
    mem = StorageService("storage-m", MemoryBackend())
    fil = StorageService("storage-f", FileBackend(tmp_path / "store"))
    ledger = demo5.ledger
    for target in (mem, fil):
        target.put_block(ledger.ledger_address, ledger.genesis)
        for block in ledger.blocks:
            target.put_block(ledger.ledger_address, block)
    assert ledger_to_bytes(mem.get_ledger(ledger.ledger_address)) == \
        ledger_to_bytes(fil.get_ledger(ledger.ledger_address))


def test_storage_root_record_round_trip(demo5):
    storage = StorageService("storage-x", MemoryBackend())
    root = keypair_for("rooty")
    record_addr = Address.root(root.public)
    from pbl.identity import RootRecord

    record = RootRecord(record_addr, (demo5.ledger.ledger_address,), ())
    storage.put_root_record(record)
    assert storage.get_root_record(record_addr) == record
    assert storage.list_ledgers(record_addr) == (demo5.ledger.ledger_address,)
    with pytest.raises(RefusalError):
        storage.get_root_record(Address.root(keypair_for("nobody").public))


# --- ledger api -----------------------------------------------------------------

def test_create_ledger_retrievable_from_every_storage_provider():
    stack = build_stack(3, seed=40, cutting=CuttingCondition.count(1))
    api = stack.new_api()
    created = api.create_ledger(0)
    assert all(v == "stored" for v in created.storage_status.values())
    for storage in stack.storages:
        stored = storage.get_ledger(created.ledger_address)
        keys = KeyDirectory.from_genesis(stored.genesis)
        assert validate_ledger(stored, keys).ok
    assert api.list_ledgers() == (created.ledger_address,)


def test_duplicate_create_refused():
    stack = build_stack(2, seed=41, cutting=CuttingCondition.count(1))
    api = stack.new_api()
    api.create_ledger(0)
    with pytest.raises(RefusalError) as exc:
        api.create_ledger(0)
    assert exc.value.code == wire.DUPLICATE_LEDGER


def test_create_with_all_storage_faulted_registers_nothing():
    stack = build_stack(2, seed=42, cutting=CuttingCondition.count(1))
    for sid in stack.ids_of("STORAGE"):
        stack.network.inject(sid, FaultProgram(SILENT))
    api = stack.new_api()
    with pytest.raises(Unavailable):
        api.create_ledger(0)
    stack.heal_all()
    for storage in stack.storages:
        with pytest.raises(RefusalError):
            storage.get_root_record(api.root_address)


def test_create_with_all_gbas_faulted_fails():
    stack = build_stack(2, seed=43, cutting=CuttingCondition.count(1))
    for gid in stack.ids_of("GBA"):
        stack.network.inject(gid, FaultProgram(SILENT))
    api = stack.new_api()
    with pytest.raises(Unavailable) as exc:
        api.create_ledger(0)
    assert exc.value.kind == "GBA"


def test_submit_with_wrong_phrase_rejected_at_esp():
    stack = build_stack(2, seed=44, cutting=CuttingCondition.count(1))
    api = stack.new_api()
    created = api.create_ledger(0)
    from pbl.identity import generate_seed_phrase

    impostor = stack.new_api(generate_seed_phrase(12, random.Random(999)))
    impostor._sessions = api._sessions  # impostor knows the address, not the key
    session = api.session(created.ledger_address)
    wrong = dataclasses.replace(session, keypair=keypair_for("impostor"))
    impostor._sessions = {created.ledger_address.render(): wrong}
    receipt = impostor.submit(created.ledger_address, b"forged")
    assert receipt.refusal is not None
    assert receipt.refusal[0] == wire.BAD_USER_SIGNATURE


def test_submit_survives_two_of_three_esp_faults():
    stack = build_stack(3, seed=45, cutting=CuttingCondition.count(1))
    api = stack.new_api()
    created = api.create_ledger(0)
    stack.network.inject("esp-1", FaultProgram(SILENT))
    stack.network.inject("esp-2", FaultProgram(SILENT))
    receipt = api.submit(created.ledger_address, b"doc")
    assert receipt.esp_id == "esp-3"
    assert receipt.committed_height == 1


def test_round_discipline_same_osp_within_block_redraw_after():
    stack = build_stack(3, seed=46, cutting=CuttingCondition.count(4))
    api = stack.new_api()
    created = api.create_ledger(0)
    for i in range(12):
        api.submit(created.ledger_address, f"doc {i}".encode())
    session = api.session(created.ledger_address)
    by_round: dict[int, set[tuple[str, str]]] = {}
    for receipt in session.receipts:
        by_round.setdefault(receipt.round_sequence, set()).add(
            (receipt.osp_id, receipt.vsp_id))
    for sequence, pairs in by_round.items():
        assert len(pairs) == 1, f"round {sequence} changed providers"
    assert len(session.commits) == 3
    assert len(by_round) == 3


def test_dependency_soundness_of_committed_ledgers():
    stack = build_stack(2, seed=47, cutting=CuttingCondition.count(2))
    api = stack.new_api()
    created = api.create_ledger(0)
    first = api.submit(created.ledger_address, b"base document")
    second = api.submit(created.ledger_address, b"second")
    assert second.committed_height == 1
    session = api.session(created.ledger_address)
    base_id = sorted(session.known_output_ids)[0]
    api.submit(created.ledger_address, b"uses base", inputs=[base_id])
    api.submit(created.ledger_address, b"filler")
    ledger = api.read_ledger(created.ledger_address)
    seen: set[bytes] = set()
    from pbl.ledger import payload_inputs

    for block in ledger.blocks:
        for ct in block.transactions:
            ids, _ = payload_inputs(ct.inner.payload)
            for dep in ids:
                assert dep in seen
            seen.add(output_id(ct))


def test_osp_requeues_after_ignored_block():
    """A forward dependency arriving first is fixed by the re-sorted retry."""
    stack = build_stack(2, seed=48, cutting=CuttingCondition.count(2))
    api = stack.new_api()
    created = api.create_ledger(0)
    api.submit(created.ledger_address, b"seed doc")
    api.submit(created.ledger_address, b"boundary")  # cuts block 1
    session = api.session(created.ledger_address)
    seed_id = sorted(session.known_output_ids)[0]

    # Hand-build the misordered pair at the ordering provider directly.
    esp = stack.services["esp-1"]
    osp = stack.services["osp-1"]
    vsp_id = stack.ids_of("VSP")[0]
    osp.start_round(created.ledger_address, vsp_id)
    round_params = wire.RoundStartVsp(
        created.ledger_address, session.tip_hash, session.tip_height,
        tuple(sorted(session.known_output_ids)), session.keys)
    stack.services[vsp_id].start_round(round_params)

    dependent_payload = encode_payload_with_inputs([seed_id], b"dependent")
    tx_dep = new_transaction(created.ledger_address, dependent_payload,
                             session.keypair, submitted_at=900)
    ct_dep = esp.execute_and_sign(tx_dep)
    plain = new_transaction(created.ledger_address, b"plain", session.keypair,
                            submitted_at=901)
    ct_plain = esp.execute_and_sign(plain)
    # Misorder: a transaction depending on ct_plain's own output cannot be
    # built here (ids are content hashes), so misorder against history:
    # ct_dep depends on seed_id (known); use an unknown id to force ignore.
    bogus = encode_payload_with_inputs([b"\xab" * 32], b"never satisfiable")
    tx_bad = new_transaction(created.ledger_address, bogus, session.keypair,
                             submitted_at=902)
    ct_bad = esp.execute_and_sign(tx_bad)
    osp.accept(ct_bad)
    osp.accept(ct_plain)
    candidate = osp.maybe_cut(created.ledger_address)
    assert candidate is not None
    response = osp._forward(created.ledger_address, candidate)
    assert isinstance(response, wire.Refusal)
    assert response.code == wire.DEPENDENCY_VIOLATION
    # The unsatisfiable transaction was dropped; the plain one survived.
    assert any(ct.inner.payload == b"plain" for ct in
               osp._pool(created.ledger_address).pending)
    assert any(reason == wire.DEPENDENCY_VIOLATION for _, reason in osp.dropped)


def test_end_to_end_workloads_across_cutting_conditions():
    """Randomized workloads stay valid under every cutting condition kind."""
    rng = random.Random(49)
    for cutting in (CuttingCondition.count(3), CuttingCondition.interval(1),
                    CuttingCondition.size(900)):
        stack = build_stack(2, seed=50, cutting=cutting)
        api = stack.new_api()
        created = api.create_ledger(0)
        n = rng.randrange(5, 30)
        for i in range(n):
            api.submit(created.ledger_address, rng.randbytes(rng.randrange(1, 80)))
            if cutting.kind == "interval" and i % 3 == 2:
                stack.clock.advance(1_100)
                api.poll(created.ledger_address)
        ledger = api.read_ledger(created.ledger_address)
        keys = KeyDirectory.from_genesis(ledger.genesis)
        assert validate_ledger(ledger, keys).ok, cutting
        assert all(len(b.transactions) >= 1 for b in ledger.blocks)


def test_rotation_privacy_no_esp_sees_everything():
    stack = build_stack(2, seed=51, cutting=CuttingCondition.count(2))
    api = stack.new_api()
    created = api.create_ledger(0)
    total = 8
    for i in range(total):
        api.submit(created.ledger_address, f"doc {i}".encode())
    for esp_id in stack.ids_of("ESP"):
        esp = stack.services[esp_id]
        assert 0 < len(esp.seen_transactions) < total


def test_open_ledger_resumes_after_restart(tmp_path):
    paths = [tmp_path / "s1", tmp_path / "s2"]
    stack = build_stack(2, seed=52, cutting=CuttingCondition.count(1),
                        storage_paths=paths)
    api = stack.new_api()
    created = api.create_ledger(3)
    api.submit(created.ledger_address, b"persisted")

    stack2 = build_stack(2, seed=52, cutting=CuttingCondition.count(1),
                         storage_paths=paths)
    api2 = stack2.new_api()
    session = api2.open_ledger(created.ledger_address, 3)
    assert session.tip_height == 1
    receipt = api2.submit(created.ledger_address, b"after restart")
    assert receipt.committed_height == 2


def test_commit_held_then_flushed_after_heal():
    stack = build_stack(2, seed=53, cutting=CuttingCondition.count(1))
    api = stack.new_api()
    created = api.create_ledger(0)
    for sid in stack.ids_of("STORAGE"):
        stack.network.inject(sid, FaultProgram(SILENT))
    receipt = api.submit(created.ledger_address, b"held")
    assert receipt.committed_height == 1
    assert receipt.stored_count == 0
    session = api.session(created.ledger_address)
    assert len(session.pending_commits) == 1
    stack.heal_all()
    assert api.retry_pending(created.ledger_address) == 1
    ledger = api.read_ledger(created.ledger_address)
    assert ledger.tip.core.height == 1
