"""Seed phrases, key derivation, addresses, signatures."""

from __future__ import annotations

import math
import random

import pytest

from pbl._ripemd160 import ripemd160
from pbl.identity import (
    Address,
    IdentityError,
    InvalidWordError,
    LEDGER_VERSION,
    ROOT_VERSION,
    RootRecord,
    SeedPhrase,
    Signature,
    base58_decode,
    base58_encode,
    derive_ledger_keypair,
    derive_root_keypair,
    fingerprint,
    generate_seed_phrase,
    keypair_from_seed,
    sign,
    verify,
    wordlist,
)


def test_wordlist_is_fixed_size_and_unique():
    words = wordlist()
    assert len(words) == 2048
    assert len(set(words)) == 2048


def test_phrase_entropy_is_132_bits():
    assert 12 * math.log2(len(wordlist())) == 132


def test_generate_seed_phrase_words_come_from_list():
    phrase = generate_seed_phrase(12, random.Random(0))
    assert len(phrase.words) == 12
    allowed = set(wordlist())
    assert all(w in allowed for w in phrase.words)


def test_generate_rejects_short_phrases():
    with pytest.raises(IdentityError):
        generate_seed_phrase(11)


def test_root_derivation_is_deterministic():
    phrase = generate_seed_phrase(12, random.Random(3))
    assert derive_root_keypair(phrase).public == derive_root_keypair(phrase).public


def test_root_derivation_rejects_unknown_word_with_index():
    words = list(generate_seed_phrase(12, random.Random(4)).words)
    words[7] = "zzzznotaword"
    with pytest.raises(InvalidWordError) as exc:
        derive_root_keypair(SeedPhrase(tuple(words)))
    assert exc.value.index == 7


def test_one_word_difference_changes_key():
    """100 near-identical phrase pairs, zero public-key collisions."""
    rng = random.Random(5)
    words = wordlist()
    for _ in range(100):
        phrase = list(generate_seed_phrase(12, rng).words)
        other = list(phrase)
        position = rng.randrange(12)
        replacement = words[rng.randrange(2048)]
        while replacement == other[position]:
            replacement = words[rng.randrange(2048)]
        other[position] = replacement
        a = derive_root_keypair(SeedPhrase(tuple(phrase)))
        b = derive_root_keypair(SeedPhrase(tuple(other)))
        assert a.public != b.public


def test_golden_root_address(fixtures_dir):
    phrase = SeedPhrase.from_text(
        "absorb bacon cable daring eagle fabric gadget habit ice jacket kangaroo label")
    root = derive_root_keypair(phrase)
    expected = (fixtures_dir / "root_address.txt").read_text().strip()
    assert Address.root(root.public).render() == expected


def test_child_indices_give_distinct_addresses():
    root = derive_root_keypair(generate_seed_phrase(12, random.Random(6)))
    a = derive_ledger_keypair(root, 0)
    b = derive_ledger_keypair(root, 1)
    assert a.public != b.public
    assert Address.ledger(a.public) != Address.ledger(b.public)


def test_child_derivation_is_deterministic():
    root = derive_root_keypair(generate_seed_phrase(12, random.Random(7)))
    assert derive_ledger_keypair(root, 5).public == derive_ledger_keypair(root, 5).public


def test_sibling_children_never_collide():
    root = derive_root_keypair(generate_seed_phrase(12, random.Random(8)))
    publics = {derive_ledger_keypair(root, i).public for i in range(100)}
    assert len(publics) == 100


def test_child_index_overflow_rejected():
    root = derive_root_keypair(generate_seed_phrase(12, random.Random(9)))
    with pytest.raises(IdentityError):
        derive_ledger_keypair(root, 2**31)
    with pytest.raises(IdentityError):
        derive_ledger_keypair(root, -1)


def test_sign_verify_round_trip_empty_message():
    kp = keypair_from_seed(bytes(32))
    assert verify(kp.public, b"", sign(kp, b""))


def test_verify_with_wrong_key_fails():
    a = keypair_from_seed(bytes([1]) * 32)
    b = keypair_from_seed(bytes([2]) * 32)
    assert not verify(b.public, b"msg", sign(a, b"msg"))


def test_random_bitflips_never_verify():
    """1000 random single-bit flips in message or signature all fail."""
    rng = random.Random(10)
    kp = keypair_from_seed(bytes([3]) * 32)
    for _ in range(1000):
        message = rng.randbytes(rng.randrange(1, 40))
        sig = kp.sign(message)
        if rng.random() < 0.5:
            flipped = bytearray(message)
            flipped[rng.randrange(len(flipped))] ^= 1 << rng.randrange(8)
            assert not verify(kp.public, bytes(flipped), sig)
        else:
            value = bytearray(sig.value)
            value[rng.randrange(len(value))] ^= 1 << rng.randrange(8)
            assert not verify(kp.public, message, Signature(sig.signer_id, bytes(value)))


def test_verify_tolerates_malformed_signature_lengths():
    kp = keypair_from_seed(bytes([4]) * 32)
    assert not verify(kp.public, b"m", Signature(kp.fingerprint, b"short"))
    assert not verify(b"not-a-key", b"m", kp.sign(b"m"))


def test_fingerprint_mismatch_fails_verification():
    kp = keypair_from_seed(bytes([5]) * 32)
    sig = kp.sign(b"m")
    assert not verify(kp.public, b"m", Signature(bytes(8), sig.value))


def test_ripemd160_vectors():
    assert ripemd160(b"").hex() == "9c1185a5c5e9fc54612808977ee8f548b2258d31"
    assert ripemd160(b"abc").hex() == "8eb208f7e05d987a9b044a8e98c6b087f15a0bfc"
    assert ripemd160(b"message digest").hex() == "5d0689ef49d2fae572b881b123a85ffa21595f36"


def test_base58_leading_zeros():
    assert base58_encode(b"\x00") == "1"
    assert base58_encode(b"\x00\x01") == "12"
    assert base58_decode("12") == b"\x00\x01"


def test_address_round_trip_and_checksum():
    """500 random addresses render, parse back, and reject corruption."""
    rng = random.Random(11)
    alphabet = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
    for _ in range(500):
        kp = keypair_from_seed(rng.randbytes(32))
        version = rng.choice([ROOT_VERSION, LEDGER_VERSION])
        address = Address.from_public_key(kp.public, version)
        text = address.render()
        parsed = Address.parse(text)
        assert parsed == address
        position = rng.randrange(len(text))
        replacement = rng.choice(alphabet.replace(text[position], ""))
        corrupted = text[:position] + replacement + text[position + 1:]
        with pytest.raises(IdentityError):
            Address.parse(corrupted)


def test_address_version_enforced_per_context():
    kp = keypair_from_seed(bytes([6]) * 32)
    root_text = Address.root(kp.public).render()
    with pytest.raises(IdentityError):
        Address.parse(root_text, expected_version=LEDGER_VERSION)
    assert Address.parse(root_text, expected_version=ROOT_VERSION)
    assert ROOT_VERSION != LEDGER_VERSION


def test_full_derivation_chain_reproducible():
    phrase = SeedPhrase.from_text(
        "absorb bacon cable daring eagle fabric gadget habit ice jacket kangaroo label")
    addresses = []
    for _ in range(2):
        root = derive_root_keypair(phrase)
        child = derive_ledger_keypair(root, 3)
        addresses.append(Address.ledger(child.public).render())
    assert addresses[0] == addresses[1]


def test_root_record_round_trip_and_no_secrets():
    rng = random.Random(12)
    root = keypair_from_seed(rng.randbytes(32))
    child = keypair_from_seed(rng.randbytes(32))
    record = RootRecord(
        Address.root(root.public),
        (Address.ledger(child.public),),
        (("esp-1", keypair_from_seed(rng.randbytes(32)).public),),
    )
    blob = record.encode()
    assert RootRecord.decode_bytes(blob) == record
    assert root.secret not in blob
    assert child.secret not in blob


def test_fingerprint_is_eight_bytes():
    kp = keypair_from_seed(bytes([7]) * 32)
    assert len(fingerprint(kp.public)) == 8
    assert kp.sign(b"x").signer_id == fingerprint(kp.public)
