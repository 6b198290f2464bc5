"""Bit buffers and little varint helpers used by the stream formats."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import CorruptStreamError


@dataclass(frozen=True)
class BitStream:
    data: bytes
    bit_count: int

    def __post_init__(self):
        if not self.bit_count <= 8 * len(self.data) < self.bit_count + 8:
            raise ValueError(f"{len(self.data)} bytes cannot hold exactly {self.bit_count} bits")

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitStream":
        return cls(bytes(data), 8 * len(data))


def zigzag(v: int) -> int:
    return 2 * v if v >= 0 else -2 * v - 1


def unzigzag(u: int) -> int:
    return u // 2 if u % 2 == 0 else -(u + 1) // 2


def write_varint(out: bytearray, v: int) -> None:
    if v < 0:
        raise ValueError("varint must be non-negative")
    while v >= 0x80:
        out.append((v & 0x7F) | 0x80)
        v >>= 7
    out.append(v)


def read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    v = shift = 0
    while True:
        if pos >= len(buf):
            raise CorruptStreamError("varint runs past end of stream")
        b = buf[pos]
        pos += 1
        v |= (b & 0x7F) << shift
        if b < 0x80:
            return v, pos
        shift += 7
        if shift > 63:
            raise CorruptStreamError("varint too long")
