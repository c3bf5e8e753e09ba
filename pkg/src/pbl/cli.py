"""Command-line user agent for personal blockchain ledgers.

Runs a self-contained provider stack (file-backed storage under the data
directory, provider keys derived from the configured seed) and exposes
the full lifecycle: key generation, ledger creation, submission,
auditing, tamper demonstration, fault-scenario replay, and measurement
reports.

Exit codes: 0 success, 2 validation failure, 3 fault/timeout, 4 usage.

The seed phrase is read from the ``PBL_SEED_PHRASE`` environment
variable, or prompted for on a terminal — never taken as a flag, so it
stays out of shell history. Because the providers here live in-process,
an ordering provider's pending transactions last only for one
invocation; pass several payloads to one ``submit`` call to fill
multi-transaction blocks.
"""

from __future__ import annotations

import argparse
import getpass
import json
import os
import random
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .encoding import DecodeError
from .harness import ProviderFault, SystemClock
from .identity import Address, IdentityError, SeedPhrase, generate_seed_phrase, derive_root_keypair
from .ledger import ConfigEntry, ledger_from_bytes, ledger_to_bytes
from .services import (
    CuttingCondition,
    RefusalError,
    SERVICE_KINDS,
    Unavailable,
)
from .simulate import ScenarioError, build_stack, run_scenario
from .validation import KeyDirectory, validate_ledger, tamper_scan
from .fixtures import mutate_block_byte
from .chaincode import replay, DEFAULT_REGISTRY

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAULT = 3
EXIT_USAGE = 4

DEFAULT_PROVIDERS = {"GBA": 1, "ESP": 3, "OSP": 2, "VSP": 2, "STORAGE": 2}


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    data_dir: Path = Path(".pbl")
    providers: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_PROVIDERS))
    cutting: CuttingCondition = CuttingCondition.count(1)
    ttl_ms: int = 500
    rng_seed: int = 42
    machine: bool = False

    @classmethod
    def load(cls, path: str | None, overrides: argparse.Namespace) -> "CliConfig":
        cfg = cls()
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config {path}: {exc}") from exc
            if "data_dir" in raw:
                cfg.data_dir = Path(raw["data_dir"])
            if "providers" in raw:
                cfg.providers = {k.upper(): int(v) for k, v in raw["providers"].items()}
            if "cutting" in raw:
                cfg.cutting = CuttingCondition(raw["cutting"]["kind"],
                                               int(raw["cutting"]["threshold"]))
            cfg.ttl_ms = int(raw.get("ttl_ms", cfg.ttl_ms))
            cfg.rng_seed = int(raw.get("rng_seed", cfg.rng_seed))
            cfg.machine = raw.get("format", "text") == "machine"
        if getattr(overrides, "data_dir", None):
            cfg.data_dir = Path(overrides.data_dir)
        if getattr(overrides, "machine", False):
            cfg.machine = True
        for kind in SERVICE_KINDS:
            if cfg.providers.get(kind, 0) < 1:
                raise UsageError(f"provider pool has no {kind} providers")
        return cfg


class Printer:
    """Text or machine-readable (key=value) line output."""

    def __init__(self, machine: bool) -> None:
        self.machine = machine

    @staticmethod
    def _quote(value) -> str:
        text = str(value)
        return f'"{text}"' if " " in text else text

    def kv(self, **fields) -> None:
        if self.machine:
            print(" ".join(f"{k}={self._quote(v)}" for k, v in fields.items()))
        else:
            print("  ".join(f"{k}: {v}" for k, v in fields.items()))

    def raw(self, line: str) -> None:
        print(line)

    def text(self, line: str) -> None:
        if not self.machine:
            print(line)


def _phrase_from_env() -> SeedPhrase:
    raw = os.environ.get("PBL_SEED_PHRASE")
    if raw:
        return SeedPhrase.from_text(raw)
    if sys.stdin.isatty():
        return SeedPhrase.from_text(getpass.getpass("seed phrase: "))
    raise UsageError("set PBL_SEED_PHRASE or run interactively to supply the seed phrase")


def _build_cli_stack(cfg: CliConfig):
    storage_paths = [cfg.data_dir / f"storage-{i}"
                     for i in range(1, cfg.providers["STORAGE"] + 1)]
    return build_stack(
        cfg.providers,
        seed=cfg.rng_seed,
        cutting=cfg.cutting,
        ttl_ms=cfg.ttl_ms,
        clock=_CliClock(),
        storage_paths=storage_paths,
    )


class _CliClock(SystemClock):
    """Real time, but fault TTLs pass instantly (no need to sleep)."""

    def advance(self, ms: int) -> None:
        pass


def _ledger_index_file(cfg: CliConfig) -> Path:
    return cfg.data_dir / "ledgers.json"


def _load_ledger_indexes(cfg: CliConfig) -> dict[str, int]:
    path = _ledger_index_file(cfg)
    if path.exists():
        return {k: int(v) for k, v in json.loads(path.read_text()).items()}
    return {}


def _save_ledger_indexes(cfg: CliConfig, mapping: dict[str, int]) -> None:
    path = _ledger_index_file(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(mapping, indent=2, sort_keys=True))


def _open_session(cfg: CliConfig, api, address_text: str):
    mapping = _load_ledger_indexes(cfg)
    if address_text not in mapping:
        raise UsageError(f"unknown ledger {address_text}; create it first")
    address = Address.parse(address_text)
    return api.open_ledger(address, mapping[address_text])


# --- commands ---------------------------------------------------------------

def cmd_keygen(args, cfg: CliConfig, out: Printer) -> int:
    rng = random.Random(args.seed) if args.seed is not None else None
    phrase = generate_seed_phrase(args.words, rng)
    root = derive_root_keypair(phrase)
    out.text("Store this phrase safely; it derives every key:")
    out.kv(phrase=phrase.text)
    out.kv(root_address=Address.root(root.public).render())
    return EXIT_OK


def cmd_create_ledger(args, cfg: CliConfig, out: Printer) -> int:
    phrase = _phrase_from_env()
    stack = _build_cli_stack(cfg)
    api = stack.new_api(phrase)
    mapping = _load_ledger_indexes(cfg)
    index = args.index if args.index is not None else (max(mapping.values(), default=-1) + 1)
    entries = []
    for item in args.config_entry or []:
        key, _, value = item.partition("=")
        if not key or not value:
            raise UsageError(f"config entry must be KEY=VALUE, got {item!r}")
        entries.append(ConfigEntry(key, value.encode()))
    result = api.create_ledger(index, entries, kyc_blob=args.kyc_blob.encode())
    address = result.ledger_address.render()
    mapping[address] = index
    _save_ledger_indexes(cfg, mapping)
    out.kv(address=address, index=index)
    for provider, status in sorted(result.storage_status.items()):
        out.kv(storage=provider, status=status)
    return EXIT_OK


def cmd_submit(args, cfg: CliConfig, out: Printer) -> int:
    phrase = _phrase_from_env()
    stack = _build_cli_stack(cfg)
    api = stack.new_api(phrase)
    session = _open_session(cfg, api, args.ledger)
    inputs = [bytes.fromhex(h) for h in args.input or []]
    code = EXIT_OK
    for payload in args.payload:
        receipt = api.submit(session.address, payload.encode(),
                             chaincode_id=args.chaincode, inputs=inputs)
        inputs = []  # dependency inputs apply to the first payload only
        out.kv(
            payload=payload,
            esp=receipt.esp_id,
            osp=receipt.osp_id,
            committed="none" if receipt.committed_height is None else receipt.committed_height,
            refusal="none" if receipt.refusal is None else receipt.refusal[0],
        )
        if receipt.refusal is not None:
            code = EXIT_INVALID
    return code


def _load_ledger_for(args, cfg: CliConfig, api_factory):
    if getattr(args, "file", None):
        try:
            return ledger_from_bytes(Path(args.file).read_bytes())
        except OSError as exc:
            raise UsageError(f"cannot read {args.file}: {exc}") from exc
    if not getattr(args, "ledger", None):
        raise UsageError("pass --ledger ADDRESS or --file PATH")
    api = api_factory()
    return api.read_ledger(Address.parse(args.ledger))


def cmd_show(args, cfg: CliConfig, out: Printer) -> int:
    stack = _build_cli_stack(cfg)
    if not args.ledger and not args.file:
        mapping = _load_ledger_indexes(cfg)
        if not mapping:
            out.text("no ledgers created yet")
        for address, index in sorted(mapping.items(), key=lambda kv: kv[1]):
            out.kv(address=address, index=index)
        return EXIT_OK
    ledger = _load_ledger_for(args, cfg, stack.new_api)
    out.kv(address=ledger.ledger_address.render(), blocks=len(ledger.blocks),
           tip_height=ledger.tip.core.height)
    for block in ledger.blocks:
        out.kv(height=block.core.height, transactions=len(block.transactions),
               created_at=block.core.created_at,
               header=block.core.data_hash.hex()[:16])
    if args.export:
        Path(args.export).write_bytes(ledger_to_bytes(ledger))
        out.kv(exported=args.export)
    return EXIT_OK


def cmd_audit(args, cfg: CliConfig, out: Printer) -> int:
    stack = _build_cli_stack(cfg)
    ledger = _load_ledger_for(args, cfg, stack.new_api)
    keys = KeyDirectory.from_genesis(ledger.genesis)
    report = validate_ledger(ledger, keys)
    out.kv(blocks=len(ledger.blocks), conditions=len(report.checks),
           failures=len(report.failures))
    code = EXIT_OK
    if not report.ok:
        first = report.first_failure
        out.kv(first_failure_height=first.height, condition=first.condition,
               reason=first.reason)
        code = EXIT_INVALID
    if args.replay:
        definition = DEFAULT_REGISTRY.get(args.replay)
        if definition is None:
            raise UsageError(f"unknown chaincode {args.replay!r}")
        result = replay(definition, ledger)
        out.kv(chaincode=args.replay, final_state=result.final_state.decode("ascii", "replace"),
               output_mismatches=len(result.mismatches))
        for mismatch in result.mismatches:
            out.kv(mismatch_height=mismatch.height, tx=mismatch.tx_index)
        if result.mismatches:
            code = EXIT_INVALID
    return code


def cmd_tamper_demo(args, cfg: CliConfig, out: Printer) -> int:
    stack = _build_cli_stack(cfg)
    ledger = _load_ledger_for(args, cfg, stack.new_api)
    keys = KeyDirectory.from_genesis(ledger.genesis)
    rng = random.Random(args.seed)
    height = rng.randrange(0, len(ledger.blocks) + 1)
    raw_len = len(ledger.genesis.encode() if height == 0 else ledger.blocks[height - 1].encode())
    offset = rng.randrange(raw_len)
    xor = rng.randrange(1, 256)
    out.kv(mutated_height=height, offset=offset, xor=f"{xor:#04x}")
    try:
        tampered = mutate_block_byte(ledger, height, offset, xor)
    except DecodeError as exc:
        out.kv(detected="structural", reason=str(exc))
        return EXIT_OK
    findings = tamper_scan(tampered, keys)
    for finding in findings:
        out.kv(finding_height=finding.height, condition=finding.condition,
               reason=finding.reason)
    out.kv(detected=str(bool(findings)).lower(), findings=len(findings))
    return EXIT_OK if findings else EXIT_INVALID


def cmd_simulate(args, cfg: CliConfig, out: Printer) -> int:
    try:
        text = Path(args.scenario).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read scenario {args.scenario}: {exc}") from exc
    result = run_scenario(text)
    for line in result.lines:
        out.raw(line)
    out.kv(scenario="ok" if result.ok else "failed")
    return EXIT_OK if result.ok else EXIT_INVALID


def cmd_report(args, cfg: CliConfig, out: Printer) -> int:
    from . import report as report_mod

    out_dir = Path(args.out_dir)
    if args.study == "tamper-cost":
        rows, fit = report_mod.tamper_cost_study(out_dir, seed=args.seed)
        for n, ops in rows:
            out.kv(blocks=n, signature_ops=ops)
        out.kv(slope=f"{fit.slope:.4f}", intercept=f"{fit.intercept:.4f}",
               r_squared=f"{fit.r_squared:.6f}")
    elif args.study == "rotation":
        rows = report_mod.rotation_study(out_dir, seed=args.seed)
        for esp_id, seen in rows:
            out.kv(esp=esp_id, transactions_seen=seen)
    else:
        rows = report_mod.fault_matrix_study(out_dir, m=args.m, seed=args.seed)
        mismatches = sum(1 for row in rows if row[-1] != "true")
        out.kv(cells=len(rows), mismatches=mismatches)
    out.kv(csv=str(out_dir / f"{args.study.replace('-', '_')}.csv"),
           figure=str(out_dir / f"{args.study.replace('-', '_')}.png"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--data-dir", help="override the data directory")
    common.add_argument("--machine", action="store_true",
                        help="machine-readable key=value output")
    parser = argparse.ArgumentParser(
        prog="pbl", description="Personal blockchain ledgers from modular services",
        parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=lambda **kw:
                                argparse.ArgumentParser(parents=[common], **kw))

    p = sub.add_parser("keygen", help="generate a seed phrase and root address")
    p.add_argument("--words", type=int, default=12)
    p.add_argument("--seed", type=int, help="deterministic phrase (testing only)")
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("create-ledger", help="request a genesis block and store it")
    p.add_argument("--index", type=int)
    p.add_argument("--config-entry", action="append", metavar="KEY=VALUE")
    p.add_argument("--kyc-blob", default="")
    p.set_defaults(fn=cmd_create_ledger)

    p = sub.add_parser("submit", help="sign and submit transactions")
    p.add_argument("--ledger", required=True)
    p.add_argument("--chaincode")
    p.add_argument("--input", action="append", metavar="HEX_OUTPUT_ID")
    p.add_argument("payload", nargs="+")
    p.set_defaults(fn=cmd_submit)

    p = sub.add_parser("show", help="list ledgers or show one ledger")
    p.add_argument("--ledger")
    p.add_argument("--file")
    p.add_argument("--export", help="write the ledger file here")
    p.set_defaults(fn=cmd_show)

    p = sub.add_parser("audit", help="validate a ledger; exit 2 on failure")
    p.add_argument("--ledger")
    p.add_argument("--file")
    p.add_argument("--replay", help="also audit this chaincode's outputs")
    p.set_defaults(fn=cmd_audit)

    p = sub.add_parser("tamper-demo", help="mutate a copy and localize the damage")
    p.add_argument("--ledger")
    p.add_argument("--file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_tamper_demo)

    p = sub.add_parser("simulate", help="replay a fault scenario file")
    p.add_argument("scenario")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("report", help="write a CSV table and figure for a study")
    p.add_argument("study", choices=["tamper-cost", "rotation", "fault-matrix"])
    p.add_argument("--out-dir", default="reports")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int, default=2, help="providers per kind (fault-matrix)")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = CliConfig.load(args.config, args)
        out = Printer(cfg.machine)
        return args.fn(args, cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IdentityError, RefusalError, DecodeError) as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (Unavailable, ProviderFault) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
