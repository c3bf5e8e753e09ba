"""Seed-phrase identities: deterministic keys, addresses, and signatures.

A user's whole identity derives from a phrase of words sampled from the
bundled 2048-word list: the phrase yields the root key pair, the root key
yields one child key pair per ledger index, and each public key maps to a
versioned Base58Check address. Signing is Ed25519; signatures carry an
8-byte public-key fingerprint so verifiers can resolve the signer.
"""

from __future__ import annotations

import hashlib
import hmac
import importlib.resources
import random
import secrets
import struct
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519

from ._ripemd160 import ripemd160
from .encoding import DecodeError, Reader, Writer

MIN_WORDS = 12
WORDLIST_SIZE = 2048

PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64
FINGERPRINT_SIZE = 8

ROOT_VERSION = 0x50
LEDGER_VERSION = 0x51
ADDRESS_BODY_SIZE = 20
ADDRESS_CHECKSUM_SIZE = 4

MAX_LEDGER_INDEX = 2**31 - 1

_ROOT_HMAC_KEY = b"PBL seed"
_LEDGER_DERIVE_TAG = b"ledger"

_B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(_B58_ALPHABET)}


class IdentityError(ValueError):
    pass


class InvalidWordError(IdentityError):
    """A phrase word is not in the bundled word list."""

    def __init__(self, index: int, word: str) -> None:
        super().__init__(f"word {index} ({word!r}) is not in the word list")
        self.index = index
        self.word = word


_wordlist: tuple[str, ...] | None = None


def wordlist() -> tuple[str, ...]:
    """The bundled word list: exactly 2048 words, one per line."""
    global _wordlist
    if _wordlist is None:
        text = importlib.resources.files(__package__).joinpath("wordlist.txt").read_text("utf-8")
        words = tuple(text.split())
        if len(words) != WORDLIST_SIZE:
            raise RuntimeError(f"word list must have {WORDLIST_SIZE} words, found {len(words)}")
        _wordlist = words
    return _wordlist


@dataclass(frozen=True)
class SeedPhrase:
    """An ordered list of at least twelve words from the word list."""

    words: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.words)

    @classmethod
    def from_text(cls, text: str) -> "SeedPhrase":
        return cls(tuple(text.split()))


def generate_seed_phrase(word_count: int = MIN_WORDS, rng: random.Random | None = None) -> SeedPhrase:
    """Sample a new phrase uniformly from the word list.

    ``rng`` may be injected for reproducible tests; by default each word
    draws fresh system entropy.
    """
    if word_count < MIN_WORDS:
        raise IdentityError(f"a seed phrase needs at least {MIN_WORDS} words, got {word_count}")
    words = wordlist()
    if rng is None:
        picks = [secrets.randbelow(WORDLIST_SIZE) for _ in range(word_count)]
    else:
        picks = [rng.randrange(WORDLIST_SIZE) for _ in range(word_count)]
    return SeedPhrase(tuple(words[i] for i in picks))


def _validate_phrase(phrase: SeedPhrase) -> None:
    if len(phrase.words) < MIN_WORDS:
        raise IdentityError(f"a seed phrase needs at least {MIN_WORDS} words, got {len(phrase.words)}")
    allowed = set(wordlist())
    for i, word in enumerate(phrase.words):
        if word not in allowed:
            raise InvalidWordError(i, word)


def _clamp(seed: bytes) -> bytes:
    raw = bytearray(seed)
    raw[0] &= 0xF8
    raw[31] &= 0x7F
    raw[31] |= 0x40
    return bytes(raw)


def fingerprint(public_key: bytes) -> bytes:
    """8-byte identifier of a public key, used as ``Signature.signer_id``."""
    return hashlib.sha256(public_key).digest()[:FINGERPRINT_SIZE]


@dataclass(frozen=True)
class Signature:
    """An Ed25519 signature tagged with the signer's key fingerprint."""

    signer_id: bytes
    value: bytes

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.signer_id)
        w.bytes_field(self.value)
        return w.getvalue()

    @classmethod
    def decode(cls, reader: Reader) -> "Signature":
        signer_id = reader.bytes_field()
        value = reader.bytes_field()
        if len(signer_id) != FINGERPRINT_SIZE:
            raise DecodeError(f"signer id must be {FINGERPRINT_SIZE} bytes")
        if len(value) != SIGNATURE_SIZE:
            raise DecodeError(f"signature must be {SIGNATURE_SIZE} bytes")
        return cls(signer_id, value)

    @classmethod
    def decode_bytes(cls, data: bytes) -> "Signature":
        reader = Reader(data)
        sig = cls.decode(reader)
        reader.expect_end()
        return sig


ZERO_SIGNATURE = Signature(bytes(FINGERPRINT_SIZE), bytes(SIGNATURE_SIZE))


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 key pair; the secret never enters any canonical encoding."""

    public: bytes
    secret: bytes = field(repr=False)

    @property
    def fingerprint(self) -> bytes:
        return fingerprint(self.public)

    def sign(self, message: bytes) -> Signature:
        key = ed25519.Ed25519PrivateKey.from_private_bytes(self.secret)
        return Signature(self.fingerprint, key.sign(message))


def keypair_from_seed(seed: bytes) -> KeyPair:
    if len(seed) != 32:
        raise IdentityError(f"key seed must be 32 bytes, got {len(seed)}")
    secret = _clamp(seed)
    key = ed25519.Ed25519PrivateKey.from_private_bytes(secret)
    public = key.public_key().public_bytes_raw()
    return KeyPair(public=public, secret=secret)


def derive_root_keypair(phrase: SeedPhrase) -> KeyPair:
    """Deterministic root key pair for a phrase."""
    _validate_phrase(phrase)
    digest = hmac.new(_ROOT_HMAC_KEY, phrase.text.encode("utf-8"), hashlib.sha512).digest()
    return keypair_from_seed(digest[:32])


def derive_ledger_keypair(root: KeyPair, index: int) -> KeyPair:
    """Child key pair for ledger ``index`` (0 <= index < 2**31)."""
    if not 0 <= index <= MAX_LEDGER_INDEX:
        raise IdentityError(f"ledger index out of range: {index}")
    message = _LEDGER_DERIVE_TAG + struct.pack(">Q", index)
    digest = hmac.new(root.secret, message, hashlib.sha512).digest()
    return keypair_from_seed(digest[:32])


def sign(signer: KeyPair, message: bytes) -> Signature:
    return signer.sign(message)


def verify(public_key: bytes, message: bytes, signature: Signature) -> bool:
    """True iff ``signature`` is ``public_key``'s signature over ``message``.

    Never raises: malformed keys or signature bytes simply verify false.
    A mismatched fingerprint also fails, so the signer id participates in
    what a signature commits to.
    """
    if len(signature.value) != SIGNATURE_SIZE or len(public_key) != PUBLIC_KEY_SIZE:
        return False
    if signature.signer_id != fingerprint(public_key):
        return False
    try:
        ed25519.Ed25519PublicKey.from_public_bytes(public_key).verify(signature.value, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def base58_encode(raw: bytes) -> str:
    num = int.from_bytes(raw, "big")
    digits = []
    while num:
        num, rem = divmod(num, 58)
        digits.append(_B58_ALPHABET[rem])
    pad = 0
    for byte in raw:
        if byte:
            break
        pad += 1
    return "1" * pad + "".join(reversed(digits))


def base58_decode(text: str) -> bytes:
    num = 0
    for char in text:
        try:
            num = num * 58 + _B58_INDEX[char]
        except KeyError:
            raise IdentityError(f"invalid base58 character {char!r}") from None
    raw = num.to_bytes((num.bit_length() + 7) // 8, "big")
    pad = 0
    for char in text:
        if char != "1":
            break
        pad += 1
    return b"\x00" * pad + raw


@dataclass(frozen=True)
class Address:
    """Versioned Base58Check address of a public key.

    ``body`` is RIPEMD-160(SHA-256(public key)); the checksum is the first
    four bytes of the double SHA-256 of version and body.
    """

    version: int
    body: bytes
    checksum: bytes

    @staticmethod
    def _checksum(version: int, body: bytes) -> bytes:
        payload = bytes([version]) + body
        return hashlib.sha256(hashlib.sha256(payload).digest()).digest()[:ADDRESS_CHECKSUM_SIZE]

    @classmethod
    def from_public_key(cls, public_key: bytes, version: int) -> "Address":
        body = ripemd160(hashlib.sha256(public_key).digest())
        return cls(version, body, cls._checksum(version, body))

    @classmethod
    def root(cls, public_key: bytes) -> "Address":
        return cls.from_public_key(public_key, ROOT_VERSION)

    @classmethod
    def ledger(cls, public_key: bytes) -> "Address":
        return cls.from_public_key(public_key, LEDGER_VERSION)

    @property
    def packed(self) -> bytes:
        return bytes([self.version]) + self.body + self.checksum

    def render(self) -> str:
        return base58_encode(self.packed)

    @classmethod
    def from_packed(cls, raw: bytes, expected_version: int | None = None) -> "Address":
        if len(raw) != 1 + ADDRESS_BODY_SIZE + ADDRESS_CHECKSUM_SIZE:
            raise IdentityError(f"address must be 25 bytes, got {len(raw)}")
        version, body, checksum = raw[0], raw[1:21], raw[21:]
        if checksum != cls._checksum(version, body):
            raise IdentityError("address checksum mismatch")
        if expected_version is not None and version != expected_version:
            raise IdentityError(f"expected version {expected_version:#x}, got {version:#x}")
        return cls(version, body, checksum)

    @classmethod
    def parse(cls, text: str, expected_version: int | None = None) -> "Address":
        return cls.from_packed(base58_decode(text), expected_version)


@dataclass(frozen=True)
class RootRecord:
    """Public metadata kept with the storage service for one user.

    Holds the root address, the user's ledger addresses, and the public
    keys of the user's trusted providers, so signatures stay verifiable
    even when every signing service is unreachable.
    """

    root_address: Address
    ledger_addresses: tuple[Address, ...] = ()
    service_provider_keys: tuple[tuple[str, bytes], ...] = ()

    def provider_key(self, provider_id: str) -> bytes | None:
        for pid, key in self.service_provider_keys:
            if pid == provider_id:
                return key
        return None

    def with_ledger(self, address: Address) -> "RootRecord":
        if address in self.ledger_addresses:
            return self
        return RootRecord(self.root_address, self.ledger_addresses + (address,),
                          self.service_provider_keys)

    def encode(self) -> bytes:
        w = Writer()
        w.bytes_field(self.root_address.packed)
        w.list_field([a.packed for a in self.ledger_addresses])
        entries = []
        for pid, key in sorted(self.service_provider_keys):
            ew = Writer()
            ew.str_field(pid)
            ew.bytes_field(key)
            entries.append(ew.getvalue())
        w.list_field(entries)
        return w.getvalue()

    @classmethod
    def decode_bytes(cls, data: bytes) -> "RootRecord":
        reader = Reader(data)
        try:
            root = Address.from_packed(reader.bytes_field())
            ledgers = tuple(Address.from_packed(raw) for raw in reader.list_field())
            keys = []
            for raw in reader.list_field():
                er = Reader(raw)
                pid = er.str_field()
                key = er.bytes_field()
                er.expect_end()
                keys.append((pid, key))
        except IdentityError as exc:
            raise DecodeError(str(exc)) from exc
        reader.expect_end()
        return cls(root, ledgers, tuple(keys))
