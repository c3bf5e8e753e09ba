"""Canonical byte encoding shared by hashing, signing, storage, and the wire.

Every domain value encodes to a unique byte string: fields are emitted in
declaration order, each wrapped in a 4-byte big-endian length prefix.
Integers are 8-byte big-endian, optional fields carry a 1-byte presence
flag, strings are UTF-8, and lists a 4-byte element count with each element
length-prefixed. The scheme is injective for a fixed schema, which is what
makes hashes and signatures over encodings well-defined.
"""

from __future__ import annotations

import struct

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")

U32_MAX = 2**32 - 1
U64_MAX = 2**64 - 1


class DecodeError(ValueError):
    """Raised when bytes are not a valid canonical encoding."""


def encode_u32(value: int) -> bytes:
    if not 0 <= value <= U32_MAX:
        raise ValueError(f"u32 out of range: {value}")
    return _U32.pack(value)


def encode_u64(value: int) -> bytes:
    if not 0 <= value <= U64_MAX:
        raise ValueError(f"u64 out of range: {value}")
    return _U64.pack(value)


class Writer:
    """Accumulates length-prefixed fields in declaration order."""

    __slots__ = ("_parts",)

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def bytes_field(self, raw: bytes) -> None:
        self._parts.append(encode_u32(len(raw)))
        self._parts.append(raw)

    def int_field(self, value: int) -> None:
        self.bytes_field(encode_u64(value))

    def str_field(self, value: str) -> None:
        self.bytes_field(value.encode("utf-8"))

    def opt_bytes_field(self, raw: bytes | None) -> None:
        if raw is None:
            self.bytes_field(b"\x00")
        else:
            self.bytes_field(b"\x01" + raw)

    def opt_str_field(self, value: str | None) -> None:
        self.opt_bytes_field(None if value is None else value.encode("utf-8"))

    def list_field(self, items: list[bytes]) -> None:
        inner = Writer()
        for item in items:
            inner.bytes_field(item)
        self.bytes_field(encode_u32(len(items)) + inner.getvalue())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    """Reads back fields written by :class:`Writer`, with bounds checking."""

    __slots__ = ("_data", "_pos")

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if n < 0 or end > len(self._data):
            raise DecodeError("truncated encoding")
        chunk = self._data[self._pos:end]
        self._pos = end
        return chunk

    def bytes_field(self) -> bytes:
        (length,) = _U32.unpack(self._take(4))
        return self._take(length)

    def int_field(self) -> int:
        raw = self.bytes_field()
        if len(raw) != 8:
            raise DecodeError(f"integer field must be 8 bytes, got {len(raw)}")
        (value,) = _U64.unpack(raw)
        return value

    def str_field(self) -> str:
        try:
            return self.bytes_field().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid UTF-8 in string field") from exc

    def opt_bytes_field(self) -> bytes | None:
        raw = self.bytes_field()
        if not raw:
            raise DecodeError("optional field missing presence flag")
        flag, rest = raw[0], raw[1:]
        if flag == 0:
            if rest:
                raise DecodeError("absent optional field carries payload")
            return None
        if flag != 1:
            raise DecodeError(f"bad presence flag {flag:#x}")
        return rest

    def opt_str_field(self) -> str | None:
        raw = self.opt_bytes_field()
        if raw is None:
            return None
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid UTF-8 in string field") from exc

    def list_field(self) -> list[bytes]:
        raw = self.bytes_field()
        inner = Reader(raw)
        (count,) = _U32.unpack(inner._take(4))
        items = [inner.bytes_field() for _ in range(count)]
        inner.expect_end()
        return items

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError(f"{len(self._data) - self._pos} trailing bytes")


def canonical_encode(value) -> bytes:
    """Canonical encoding of any domain value exposing ``encode()``."""
    encode = getattr(value, "encode", None)
    if encode is None:
        raise TypeError(f"{type(value).__name__} has no canonical encoding")
    return encode()
