"""Static canonical Huffman coding for integer latents."""

from __future__ import annotations

import heapq
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..errors import CodecError, CorruptStreamError
from .bitstream import BitStream, read_varint, unzigzag, write_varint, zigzag


@dataclass(frozen=True)
class HuffmanTable:
    symbols: tuple[int, ...]  # sorted ascending
    code_lengths: tuple[int, ...]

    def __post_init__(self):
        if len(self.symbols) != len(self.code_lengths) or not self.symbols:
            raise CodecError("Huffman table needs one code length per symbol")
        if any(a >= b for a, b in zip(self.symbols, self.symbols[1:])):
            raise CodecError("Huffman symbols must be strictly increasing")
        if any(n < 1 for n in self.code_lengths):
            raise CodecError("code lengths must be positive")
        maxlen = max(self.code_lengths)
        if sum(1 << (maxlen - n) for n in self.code_lengths) > 1 << maxlen:
            raise CodecError("code lengths violate the Kraft inequality")

    def codes(self) -> dict[int, tuple[int, int]]:
        """Canonical ``symbol -> (code, length)``: ordered by (length, symbol)."""
        order = sorted(zip(self.code_lengths, self.symbols))
        out = {}
        code = 0
        prev = order[0][0]
        for n, s in order:
            code <<= n - prev
            prev = n
            out[s] = (code, n)
            code += 1
        return out

    def serialize(self) -> bytes:
        out = bytearray()
        write_varint(out, len(self.symbols))
        write_varint(out, zigzag(self.symbols[0]))
        for a, b in zip(self.symbols, self.symbols[1:]):
            write_varint(out, b - a - 1)
        for n in self.code_lengths:
            if n > 255:
                raise CodecError("code length does not fit in one byte")
            out.append(n)
        return bytes(out)

    @classmethod
    def deserialize(cls, buf: bytes, pos: int = 0) -> tuple["HuffmanTable", int]:
        count, pos = read_varint(buf, pos)
        if count < 1:
            raise CorruptStreamError("empty Huffman table")
        first, pos = read_varint(buf, pos)
        symbols = [unzigzag(first)]
        for _ in range(count - 1):
            d, pos = read_varint(buf, pos)
            symbols.append(symbols[-1] + d + 1)
        if pos + count > len(buf):
            raise CorruptStreamError("Huffman table truncated")
        lengths = tuple(buf[pos:pos + count])
        try:
            table = cls(tuple(symbols), lengths)
        except CodecError as exc:
            raise CorruptStreamError(f"invalid Huffman table: {exc}") from None
        return table, pos + count


def huffman_build(histogram: Mapping[int, int]) -> HuffmanTable:
    """Optimal code lengths by repeatedly merging the two lightest nodes.

    Ties are broken by the smallest symbol in each subtree, which makes the
    table a pure function of the histogram.
    """
    items = sorted((int(s), int(c)) for s, c in histogram.items() if c > 0)
    if not items:
        raise CodecError("cannot build a Huffman table from an empty histogram")
    if len(items) == 1:
        return HuffmanTable((items[0][0],), (1,))
    depth = {s: 0 for s, _ in items}
    heap = [(c, s, [s]) for s, c in items]
    heapq.heapify(heap)
    while len(heap) > 1:
        c1, s1, m1 = heapq.heappop(heap)
        c2, s2, m2 = heapq.heappop(heap)
        for s in m1:
            depth[s] += 1
        for s in m2:
            depth[s] += 1
        heapq.heappush(heap, (c1 + c2, min(s1, s2), m1 + m2))
    symbols = tuple(s for s, _ in items)
    return HuffmanTable(symbols, tuple(depth[s] for s in symbols))


def histogram(values: Iterable[int]) -> dict[int, int]:
    return dict(Counter(int(v) for v in values))


def huffman_encode(values: Iterable[int], table: HuffmanTable) -> BitStream:
    codes = {s: format(c, f"0{n}b") for s, (c, n) in table.codes().items()}
    try:
        text = "".join([codes[int(v)] for v in values])
    except KeyError as exc:
        raise CodecError(f"symbol {exc.args[0]} is not in the Huffman table") from None
    nbits = len(text)
    text += "0" * (-nbits % 8)
    nbytes = len(text) // 8
    data = int(text, 2).to_bytes(nbytes, "big") if nbytes else b""
    return BitStream(data, nbits)


def huffman_decode(bits: BitStream, table: HuffmanTable, count: int) -> list[int]:
    # canonical decoding: per length, the first code and its index into the
    # (length, symbol)-sorted list
    order = sorted(zip(table.code_lengths, table.symbols))
    sorted_syms = [s for _, s in order]
    maxlen = order[-1][0]
    first_code = [0] * (maxlen + 2)
    first_index = [0] * (maxlen + 2)
    counts = [0] * (maxlen + 2)
    for n, _ in order:
        counts[n] += 1
    code = idx = 0
    for n in range(1, maxlen + 1):
        first_code[n] = code
        first_index[n] = idx
        code = (code + counts[n]) << 1
        idx += counts[n]

    stream = np.unpackbits(np.frombuffer(bits.data, dtype=np.uint8)).tolist()
    limit = bits.bit_count
    pos = 0
    out = []
    for _ in range(count):
        code = 0
        n = 0
        while True:
            if pos >= limit:
                raise CorruptStreamError("Huffman stream exhausted early")
            code = (code << 1) | stream[pos]
            pos += 1
            n += 1
            if n > maxlen:
                raise CorruptStreamError("invalid Huffman code")
            off = code - first_code[n]
            if 0 <= off < counts[n]:
                out.append(sorted_syms[first_index[n] + off])
                break
    return out
