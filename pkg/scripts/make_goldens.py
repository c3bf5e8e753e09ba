#!/usr/bin/env python3
"""One-off generator for the frozen regression vectors in tests/fixtures/.

Run once and commit the outputs; the tests compare live values against
these bytes, so regenerating them after an encoding change is a
deliberate, reviewable act.
"""

from __future__ import annotations

import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from pbl.fixtures import build_demo_ledger, keypair_for, mutate_block_byte  # noqa: E402
from pbl.identity import Address, SeedPhrase, derive_root_keypair  # noqa: E402
from pbl.ledger import (  # noqa: E402
    BlockHeaderCore,
    hash_header,
    ledger_to_bytes,
    new_transaction,
)
from pbl.identity import ZERO_SIGNATURE  # noqa: E402
from pbl.merkle import ZERO_DIGEST  # noqa: E402
from pbl.validation import validate_ledger  # noqa: E402

FIXTURES = ROOT / "tests" / "fixtures"

GOLDEN_PHRASE = ("absorb bacon cable daring eagle fabric gadget habit "
                 "ice jacket kangaroo label")


def main() -> None:
    FIXTURES.mkdir(parents=True, exist_ok=True)

    user = keypair_for("golden-user", seed=99)
    address = Address.ledger(user.public)
    tx = new_transaction(address, b"abc", user, submitted_at=1_234)
    (FIXTURES / "transaction.bin").write_bytes(tx.encode())

    core = BlockHeaderCore(ZERO_DIGEST, ZERO_DIGEST, ZERO_DIGEST, ZERO_SIGNATURE, 0, 0)
    (FIXTURES / "header_digest.hex").write_text(hash_header(core).hex() + "\n")

    root = derive_root_keypair(SeedPhrase.from_text(GOLDEN_PHRASE))
    (FIXTURES / "root_address.txt").write_text(Address.root(root.public).render() + "\n")

    demo = build_demo_ledger(5, txs_per_block=2, seed=0)
    assert validate_ledger(demo.ledger, demo.keys).ok
    (FIXTURES / "ledger5.pbl").write_bytes(ledger_to_bytes(demo.ledger))

    # A decodable single-byte mutation that audit must localize: flip one
    # payload byte in block 3.
    tampered = mutate_block_byte(demo.ledger, 3, offset=120, xor=0x41)
    assert not validate_ledger(tampered, demo.keys).ok
    (FIXTURES / "tampered.pbl").write_bytes(ledger_to_bytes(tampered))

    for path in sorted(FIXTURES.iterdir()):
        print(f"{path.name}: {path.stat().st_size} bytes")


if __name__ == "__main__":
    main()
