"""CLI surface: exit codes, output format, and thin-wrapper equivalence."""

from __future__ import annotations

import json
import random
import shlex

import pytest

from pbl.cli import EXIT_INVALID, EXIT_OK, EXIT_USAGE, main
from pbl.fixtures import build_demo_ledger, mutate_block_byte
from pbl.ledger import ledger_to_bytes
from pbl.validation import validate_ledger


def run_cli(capsys, *argv: str) -> tuple[int, str]:
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def parse_kv(line: str) -> dict[str, str]:
    return {k: v for k, v in
            (token.split("=", 1) for token in shlex.split(line))}


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("PBL_SEED_PHRASE", "")
    monkeypatch.chdir(tmp_path)
    return tmp_path


def test_keygen_prints_phrase_and_address(workdir, capsys):
    code, out = run_cli(capsys, "keygen", "--machine", "--seed", "9", "--words", "13")
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    phrase = parse_kv(lines[0])["phrase"]
    assert len(phrase.split()) == 13
    assert parse_kv(lines[1])["root_address"]


def test_keygen_rejects_short_phrase(workdir, capsys):
    code, _ = run_cli(capsys, "keygen", "--words", "11")
    assert code == EXIT_INVALID


def _set_phrase(monkeypatch) -> None:
    monkeypatch.setenv(
        "PBL_SEED_PHRASE",
        "absorb bacon cable daring eagle fabric gadget habit ice jacket kangaroo label")


def test_full_cli_lifecycle(workdir, monkeypatch, capsys):
    _set_phrase(monkeypatch)
    data = str(workdir / "data")
    code, out = run_cli(capsys, "create-ledger", "--machine", "--data-dir", data)
    assert code == EXIT_OK
    address = parse_kv(out.splitlines()[0])["address"]

    code, out = run_cli(capsys, "submit", "--machine", "--data-dir", data,
                        "--ledger", address, "one", "two")
    assert code == EXIT_OK
    assert parse_kv(out.splitlines()[0])["committed"] == "1"

    code, out = run_cli(capsys, "audit", "--machine", "--data-dir", data,
                        "--ledger", address)
    assert code == EXIT_OK
    assert parse_kv(out.splitlines()[0])["failures"] == "0"

    export = str(workdir / "ledger.pbl")
    code, out = run_cli(capsys, "show", "--machine", "--data-dir", data,
                        "--ledger", address, "--export", export)
    assert code == EXIT_OK
    code, out = run_cli(capsys, "audit", "--machine", "--data-dir", data,
                        "--file", export)
    assert code == EXIT_OK


def test_submit_unknown_ledger_is_usage_error(workdir, monkeypatch, capsys):
    _set_phrase(monkeypatch)
    code, _ = run_cli(capsys, "submit", "--data-dir", str(workdir / "d"),
                      "--ledger", "zzz", "payload")
    assert code == EXIT_USAGE


def test_audit_tampered_fixture_exits_two(workdir, capsys, fixtures_dir):
    code, out = run_cli(capsys, "audit", "--machine",
                        "--data-dir", str(workdir / "d"),
                        "--file", str(fixtures_dir / "tampered.pbl"))
    assert code == EXIT_INVALID
    fields = parse_kv(out.splitlines()[1])
    assert fields["first_failure_height"] == "3"
    assert fields["condition"].startswith("block.")


def test_audit_replay_flags_forged_output(workdir, capsys, tmp_path):
    import dataclasses

    demo = build_demo_ledger(3, txs_per_block=1, seed=60, chaincode_id="balance")
    block = demo.ledger.blocks[1]
    forged_ct = dataclasses.replace(block.transactions[0], output=b"31337")
    forged_block = dataclasses.replace(block, transactions=(forged_ct,))
    from pbl.ledger import Ledger

    forged = Ledger(demo.ledger.genesis,
                    (demo.ledger.blocks[0], forged_block, demo.ledger.blocks[2]),
                    demo.ledger.ledger_address)
    path = tmp_path / "forged.pbl"
    path.write_bytes(ledger_to_bytes(forged))
    code, out = run_cli(capsys, "audit", "--machine", "--data-dir",
                        str(tmp_path / "d"), "--file", str(path), "--replay", "balance")
    assert code == EXIT_INVALID
    assert any("mismatch_height=2" in line for line in out.splitlines())


def test_tamper_demo_detects_and_localizes(workdir, capsys, fixtures_dir):
    code, out = run_cli(capsys, "tamper-demo", "--machine",
                        "--data-dir", str(workdir / "d"),
                        "--file", str(fixtures_dir / "ledger5.pbl"), "--seed", "4")
    assert code == EXIT_OK
    assert "detected=" in out


def test_simulate_scenario_ok(workdir, capsys, tmp_path):
    scenario = tmp_path / "tiny.scn"
    scenario.write_text(
        "seed 5\nttl 400\ncutting count 1\n"
        + "".join(f"provider {k.lower()}-{i} {k}\n"
                  for k in ("GBA", "ESP", "OSP", "VSP", "STORAGE") for i in (1, 2))
        + "create-ledger\nsubmit hello\nprobe\nexpect read ok\nexpect write ok\n"
        + "fault storage-1 silent\nfault storage-2 silent\nprobe\n"
        + "expect read fail\nexpect write fail\n")
    code, out = run_cli(capsys, "simulate", str(scenario))
    assert code == EXIT_OK
    assert "scenario" in out


def test_simulate_shipped_fault_scenario(workdir, capsys):
    """The bundled m=3 scenario ends with a fully matching matrix."""
    import pathlib

    scenario = pathlib.Path(__file__).resolve().parent.parent / "scenarios" / "faults-m3.scn"
    code, out = run_cli(capsys, "simulate", str(scenario))
    assert code == EXIT_OK
    assert "matrix-summary" in out
    assert "mismatches=0" in out


def test_simulate_detects_expectation_mismatch(workdir, capsys, tmp_path):
    scenario = tmp_path / "bad.scn"
    scenario.write_text(
        "seed 5\ncutting count 1\n"
        + "".join(f"provider {k.lower()}-1 {k}\n"
                  for k in ("GBA", "ESP", "OSP", "VSP", "STORAGE"))
        + "create-ledger\nprobe\nexpect read fail\n")
    code, _ = run_cli(capsys, "simulate", str(scenario))
    assert code == EXIT_INVALID


def test_simulate_bad_directive_is_usage_error(workdir, capsys, tmp_path):
    scenario = tmp_path / "junk.scn"
    scenario.write_text("frobnicate everything\n")
    code, _ = run_cli(capsys, "simulate", str(scenario))
    assert code == EXIT_USAGE


def test_invalid_pool_config_rejected_at_startup(workdir, capsys, tmp_path):
    config = tmp_path / "pbl.json"
    config.write_text(json.dumps({"providers": {"esp": 0, "osp": 1, "vsp": 1,
                                                "gba": 1, "storage": 1}}))
    code, _ = run_cli(capsys, "keygen", "--config", str(config))
    assert code == EXIT_USAGE


def test_cli_audit_matches_direct_validation(workdir, capsys, tmp_path):
    """Differential check: CLI audit agrees with validate_ledger on 20
    randomized (possibly tampered) ledger files."""
    rng = random.Random(71)
    for trial in range(20):
        demo = build_demo_ledger(rng.randrange(1, 5), txs_per_block=1,
                                 seed=100 + trial)
        ledger = demo.ledger
        tampered = rng.random() < 0.5
        if tampered:
            while True:
                height = rng.randrange(0, len(ledger.blocks) + 1)
                raw = (ledger.genesis.encode() if height == 0
                       else ledger.blocks[height - 1].encode())
                try:
                    candidate = mutate_block_byte(ledger, height,
                                                  rng.randrange(len(raw)),
                                                  rng.randrange(1, 256))
                except Exception:
                    continue
                ledger = candidate
                break
        path = tmp_path / f"trial{trial}.pbl"
        path.write_bytes(ledger_to_bytes(ledger))
        code, out = run_cli(capsys, "audit", "--machine",
                            "--data-dir", str(tmp_path / "d"), "--file", str(path))
        report = validate_ledger(ledger, demo.keys)
        assert (code == EXIT_OK) == report.ok
        if not report.ok:
            fields = parse_kv(out.splitlines()[1])
            first = report.first_failure
            assert fields["first_failure_height"] == str(first.height)
            assert fields["condition"] == first.condition
