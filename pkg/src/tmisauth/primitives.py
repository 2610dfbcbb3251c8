"""Hash, keystream cipher, fixed-width encodings and XOR.

Every value that takes part in the scheme's XOR algebra is a ``Block``: a
``bytes`` object exactly ``width`` bytes long, where ``width`` is the digest
size of the configured hash. A :class:`Suite` bundles the hash choice with the
derived operations so that the card, the server and the adversary all compute
with the same functions.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Sequence

Block = bytes

DEFAULT_HASH = "sha256"

# Timestamps occupy the low-order 8 bytes of a Block; everything above must be zero.
TIMESTAMP_BYTES = 8
MAX_TICKS = (1 << (8 * TIMESTAMP_BYTES)) - 1


class PrimitiveError(ValueError):
    """Raised for inputs outside a primitive's domain."""


class DecodeError(PrimitiveError):
    """A Block did not decode to a valid identity or timestamp.

    After an XOR recovery with the wrong mask this is the expected outcome,
    so callers treat it as a semantic failure signal rather than a bug.
    """


def concat_fields(fields: Sequence[bytes]) -> bytes:
    """Injective ``||``: every field is prefixed with its 4-byte big-endian length."""
    if not fields:
        raise PrimitiveError("concat_fields needs at least one field")
    out = bytearray()
    for f in fields:
        out += struct.pack(">I", len(f))
        out += f
    return bytes(out)


def split_fields(data: bytes) -> list[bytes]:
    fields = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise PrimitiveError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise PrimitiveError("field runs past end of input")
        fields.append(data[pos:pos + n])
        pos += n
    if not fields:
        raise PrimitiveError("no fields")
    return fields


def xor(*blocks: bytes) -> Block:
    if not blocks:
        raise PrimitiveError("xor needs at least one operand")
    width = len(blocks[0])
    acc = int.from_bytes(blocks[0], "big")
    for b in blocks[1:]:
        if len(b) != width:
            raise PrimitiveError(f"xor width mismatch: {width} vs {len(b)}")
        acc ^= int.from_bytes(b, "big")
    return acc.to_bytes(width, "big")


def _as_bytes(value: bytes | str) -> bytes:
    return value.encode("utf-8") if isinstance(value, str) else value


@dataclass(frozen=True)
class Suite:
    """A hash algorithm plus the primitives derived from it."""

    algorithm: str = DEFAULT_HASH
    width: int = field(init=False)

    def __post_init__(self) -> None:
        try:
            h = hashlib.new(self.algorithm)
        except ValueError as exc:
            raise PrimitiveError(f"unknown hash algorithm {self.algorithm!r}") from exc
        if h.digest_size == 0:
            raise PrimitiveError(f"{self.algorithm} is an extendable-output function")
        if h.digest_size < TIMESTAMP_BYTES:
            raise PrimitiveError(f"{self.algorithm} digest too short")
        object.__setattr__(self, "width", h.digest_size)

    # -- hashing ---------------------------------------------------------

    def hash(self, data: bytes) -> Block:
        return hashlib.new(self.algorithm, data).digest()

    def hash_fields(self, *fields: bytes | str) -> Block:
        """``h(f1 || f2 || ...)`` with strings taken as UTF-8."""
        return self.hash(concat_fields([_as_bytes(f) for f in fields]))

    @property
    def zero(self) -> Block:
        return bytes(self.width)

    # -- identities ------------------------------------------------------

    def encode_id(self, identity: str) -> Block:
        raw = identity.encode("utf-8")
        if not raw:
            raise PrimitiveError("empty identity")
        if b"\x00" in raw:
            raise PrimitiveError("identity must not contain NUL")
        if len(raw) > self.width:
            raise PrimitiveError(
                f"identity is {len(raw)} bytes, limit is {self.width}")
        return raw.ljust(self.width, b"\x00")

    def decode_id(self, block: Block) -> str:
        self._check_width(block)
        raw = block.rstrip(b"\x00")
        if not raw or b"\x00" in raw:
            raise DecodeError("block is not an encoded identity")
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("identity bytes are not UTF-8") from exc

    # -- timestamps ------------------------------------------------------

    def encode_timestamp(self, ticks: int) -> Block:
        if not 0 <= ticks <= MAX_TICKS:
            raise PrimitiveError(f"timestamp {ticks} out of range")
        return ticks.to_bytes(self.width, "big")

    def decode_timestamp(self, block: Block) -> int:
        self._check_width(block)
        if any(block[: self.width - TIMESTAMP_BYTES]):
            raise DecodeError("nonzero bytes above the timestamp field")
        return int.from_bytes(block, "big")

    # -- cipher ----------------------------------------------------------

    def keystream(self, key: Block, nblocks: int) -> bytes:
        return b"".join(
            self.hash(concat_fields([key, struct.pack(">I", j)]))
            for j in range(nblocks))

    def encrypt(self, key: Block, plaintext: bytes) -> bytes:
        """Counter-mode keystream over the hash; encrypt and decrypt coincide.

        There is no authentication tag, so decrypting under the wrong key
        silently yields garbage.
        """
        if len(plaintext) % self.width:
            raise PrimitiveError(
                f"plaintext length {len(plaintext)} is not a multiple of {self.width}")
        ks = self.keystream(key, len(plaintext) // self.width)
        n = len(plaintext)
        return (int.from_bytes(plaintext, "big") ^ int.from_bytes(ks, "big")).to_bytes(n, "big")

    decrypt = encrypt

    def split_blocks(self, data: bytes, count: int) -> list[Block]:
        if len(data) != count * self.width:
            raise PrimitiveError(
                f"expected {count} blocks ({count * self.width} bytes), got {len(data)}")
        w = self.width
        return [data[i * w:(i + 1) * w] for i in range(count)]

    def _check_width(self, block: bytes) -> None:
        if len(block) != self.width:
            raise PrimitiveError(f"block must be {self.width} bytes, got {len(block)}")


DEFAULT_SUITE = Suite()


def hash(data: bytes) -> Block:  # noqa: A001 - mirrors the scheme's h()
    return DEFAULT_SUITE.hash(data)


def encode_id(identity: str) -> Block:
    return DEFAULT_SUITE.encode_id(identity)


def decode_id(block: Block) -> str:
    return DEFAULT_SUITE.decode_id(block)


def encode_timestamp(ticks: int) -> Block:
    return DEFAULT_SUITE.encode_timestamp(ticks)


def decode_timestamp(block: Block) -> int:
    return DEFAULT_SUITE.decode_timestamp(block)


def sym_encrypt(key: Block, plaintext: bytes) -> bytes:
    return DEFAULT_SUITE.encrypt(key, plaintext)


def sym_decrypt(key: Block, ciphertext: bytes) -> bytes:
    return DEFAULT_SUITE.decrypt(key, ciphertext)
