"""Wire framing and the tagged message union."""

from __future__ import annotations

import pytest

from pbl.encoding import DecodeError
from pbl.fixtures import build_demo_ledger
from pbl import wire
from pbl.ledger import build_candidate


def _sample_messages():
    demo = build_demo_ledger(2, txs_per_block=2, seed=8)
    ledger = demo.ledger
    address = ledger.ledger_address
    tx = ledger.blocks[0].transactions[0].inner
    ct = ledger.blocks[0].transactions[0]
    candidate = build_candidate(address, ledger.blocks[0].transactions, demo.osp, 7)
    block = ledger.blocks[1]
    keys = demo.keys
    return demo, [
        wire.SubmitTx(tx, "osp-1", b"100"),
        wire.SubmitTx(tx, "osp-2", None),
        wire.CompleteTx(ct),
        wire.BlockCandidateMsg(candidate),
        wire.ValidatedBlockMsg(address, block.core, block.transactions,
                               block.validation_signature),
        wire.CommitBlockMsg(address, block),
        wire.CommitBlockMsg(address, ledger.genesis),
        wire.GenesisRequest(demo.user.public, ledger.genesis.config_entries, b"kyc"),
        wire.GenesisResponse(ledger.genesis),
        wire.Query(wire.Q_GET_LEDGER, wire.AddressParam(address).encode()),
        wire.QueryResponse(b"payload"),
        wire.Ack("accepted"),
        wire.Refusal(wire.BAD_USER_SIGNATURE, "transaction 2"),
    ]


def test_every_message_round_trips_through_a_frame():
    _, messages = _sample_messages()
    for msg in messages:
        frame = wire.encode_frame(msg)
        length = int.from_bytes(frame[:4], "big")
        assert len(frame) == 4 + length
        assert wire.decode_frame(frame) == msg


def test_unknown_tag_rejected():
    with pytest.raises(DecodeError):
        wire.decode_message(bytes([250]) + b"junk")


def test_frame_length_mismatch_rejected():
    frame = wire.encode_frame(wire.Ack("x"))
    with pytest.raises(DecodeError):
        wire.decode_frame(frame + b"extra")
    with pytest.raises(DecodeError):
        wire.decode_frame(frame[:5])


def test_refusal_codes_are_stable_strings():
    assert wire.BAD_USER_SIGNATURE == "bad_user_signature"
    assert wire.DEPENDENCY_VIOLATION == "dependency_violation"
    assert wire.NOT_EXTENDING_TIP == "not_extending_tip"
    assert wire.KYC_DENIED == "kyc_denied"
    assert wire.UNREGISTERED_SIGNER == "unregistered_signer"


def test_round_start_params_round_trip():
    demo, _ = _sample_messages()
    address = demo.ledger.ledger_address
    params = wire.RoundStartVsp(address, bytes(32), 4, (b"\x01" * 32,), demo.keys)
    back = wire.RoundStartVsp.decode_bytes(params.encode())
    assert back.tip_height == 4
    assert back.known_output_ids == (b"\x01" * 32,)
    assert back.keys.user == demo.keys.user
    assert set(back.keys.esp) == set(demo.keys.esp)

    osp_params = wire.RoundStartOsp(address, "vsp-2")
    assert wire.RoundStartOsp.decode_bytes(osp_params.encode()) == osp_params
