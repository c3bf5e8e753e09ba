"""Personal blockchain ledgers built from independent modular services.

A user's data lives in a single-owner, signature-secured ledger: every
transaction is user-signed, executed and signed by an executing provider,
ordered into Merkle-committed blocks by an ordering provider, sealed by a
validation provider, and countersigned by the user before storage. The
package ships the core data model and validity predicates, deterministic
key derivation from seed phrases, pluggable chaincode, the six services,
a fault-injecting simulation harness, and a CLI.
"""

from .encoding import DecodeError, canonical_encode
from .identity import (
    Address,
    KeyPair,
    RootRecord,
    SeedPhrase,
    Signature,
    derive_ledger_keypair,
    derive_root_keypair,
    generate_seed_phrase,
    sign,
    verify,
)
from .ledger import (
    BlockCandidate,
    BlockHeaderCore,
    CompleteTransaction,
    ConfigEntry,
    DataBlock,
    GenesisBlock,
    Ledger,
    Transaction,
    append_block,
    build_candidate,
    build_genesis,
    chain_hash,
    complete_transaction,
    hash_header,
    ledger_from_bytes,
    ledger_to_bytes,
    new_transaction,
    output_id,
)
from .merkle import ZERO_DIGEST, merkle_root
from .validation import (
    KeyDirectory,
    ValidationReport,
    colluding_rewrite,
    tamper_scan,
    validate_connection,
    validate_data_block,
    validate_genesis_block,
    validate_ledger,
)

__version__ = "0.1.0"

__all__ = [
    "Address",
    "BlockCandidate",
    "BlockHeaderCore",
    "CompleteTransaction",
    "ConfigEntry",
    "DataBlock",
    "DecodeError",
    "GenesisBlock",
    "KeyDirectory",
    "KeyPair",
    "Ledger",
    "RootRecord",
    "SeedPhrase",
    "Signature",
    "Transaction",
    "ValidationReport",
    "ZERO_DIGEST",
    "append_block",
    "build_candidate",
    "build_genesis",
    "canonical_encode",
    "chain_hash",
    "colluding_rewrite",
    "complete_transaction",
    "derive_ledger_keypair",
    "derive_root_keypair",
    "generate_seed_phrase",
    "hash_header",
    "ledger_from_bytes",
    "ledger_to_bytes",
    "merkle_root",
    "new_transaction",
    "output_id",
    "sign",
    "tamper_scan",
    "validate_connection",
    "validate_data_block",
    "validate_genesis_block",
    "validate_ledger",
    "verify",
]
