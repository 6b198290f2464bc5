"""Byte-oriented range coder with carry propagation.

32-bit ``low``/``range`` registers, renormalisation one byte at a time once
``range`` drops below 2**24, and LZMA-style carry handling (a cached byte
plus a run of pending 0xFF bytes). Intervals are split with an exact
``range * cum // total`` so no range is wasted on rounding; totals must not
exceed 2**16.

The byte the LZMA scheme always emits first is a constant zero and is not
written.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import CodecError, CorruptStreamError
from .bitstream import BitStream

TOP = 1 << 24
MASK32 = (1 << 32) - 1
MAX_TOTAL = 1 << 16


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self._skip = True

    def _emit(self, byte: int) -> None:
        if self._skip:
            self._skip = False
        else:
            self.out.append(byte)

    def _shift_low(self) -> None:
        low = self.low
        if low < 0xFF000000 or low > MASK32:
            carry = low >> 32
            temp = self.cache
            while True:
                self._emit((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, cum: int, freq: int, total: int) -> None:
        if freq <= 0:
            raise CodecError("cannot code a symbol with zero frequency")
        if total > MAX_TOTAL or cum + freq > total:
            raise CodecError(f"bad frequency interval [{cum}, {cum + freq}) of {total}")
        r = self.range
        lo = r * cum // total
        self.low += lo
        self.range = r * (cum + freq) // total - lo
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def encode_many(self, cums: Sequence[int], freqs: Sequence[int], total: int) -> None:
        if total > MAX_TOTAL:
            raise CodecError(f"frequency total {total} exceeds {MAX_TOTAL}")
        # inlined hot loop of encode()
        for cum, freq in zip(cums, freqs):
            if freq <= 0:
                raise CodecError("cannot code a symbol with zero frequency")
            r = self.range
            lo = r * cum // total
            self.low += lo
            self.range = r * (cum + freq) // total - lo
            while self.range < TOP:
                self.range <<= 8
                self._shift_low()

    def finish(self) -> BitStream:
        for _ in range(5):
            self._shift_low()
        return BitStream.from_bytes(bytes(self.out))


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        if self.pos >= len(self.data):
            raise CorruptStreamError("range-coded stream truncated")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def target(self, total: int) -> int:
        """Largest cumulative count whose interval start lies at or below the code."""
        v = ((self.code + 1) * total - 1) // self.range
        if v >= total:
            raise CorruptStreamError("range-coded stream is inconsistent with its model")
        return v

    def consume(self, cum: int, freq: int, total: int) -> None:
        r = self.range
        lo = r * cum // total
        self.code -= lo
        self.range = r * (cum + freq) // total - lo
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next())
            self.range <<= 8

    def decode_row(self, cum_row: np.ndarray) -> int:
        """Decode one symbol given the cumulative table ``[0, f0, f0+f1, ..., total]``."""
        total = int(cum_row[-1])
        v = self.target(total)
        s = int(np.searchsorted(cum_row, v, side="right")) - 1
        lo = int(cum_row[s])
        self.consume(lo, int(cum_row[s + 1]) - lo, total)
        return s


def cumulative(freqs: np.ndarray) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=np.int64)
    cum = np.zeros(freqs.shape[:-1] + (freqs.shape[-1] + 1,), dtype=np.int64)
    np.cumsum(freqs, axis=-1, out=cum[..., 1:])
    return cum


def arith_encode(symbols: Sequence[int], freqs) -> BitStream:
    """Code ``symbols[i]`` under the integer frequency table ``freqs[i]``."""
    symbols = np.asarray(symbols, dtype=np.int64)
    freqs = np.asarray(freqs, dtype=np.int64)
    if freqs.ndim == 1:
        freqs = np.broadcast_to(freqs, (len(symbols), freqs.shape[0]))
    if len(freqs) != len(symbols):
        raise CodecError("need one frequency table per symbol")
    enc = RangeEncoder()
    if len(symbols) == 0:
        return enc.finish()
    if symbols.min() < 0 or symbols.max() >= freqs.shape[1]:
        raise CodecError("symbol outside the frequency table")
    cum = cumulative(freqs)
    totals = cum[:, -1]
    idx = np.arange(len(symbols))
    lows = cum[idx, symbols]
    fs = freqs[idx, symbols]
    if (fs <= 0).any():
        raise CodecError("a coded symbol has zero frequency")
    if (totals > MAX_TOTAL).any():
        raise CodecError(f"frequency total exceeds {MAX_TOTAL}")
    if (totals == totals[0]).all():
        enc.encode_many(lows.tolist(), fs.tolist(), int(totals[0]))
    else:
        for lo, f, t in zip(lows.tolist(), fs.tolist(), totals.tolist()):
            enc.encode(lo, f, t)
    return enc.finish()


def arith_decode(bits: BitStream, freqs, count: int) -> list[int]:
    freqs = np.asarray(freqs, dtype=np.int64)
    if freqs.ndim == 1:
        freqs = np.broadcast_to(freqs, (count, freqs.shape[0]))
    if len(freqs) < count:
        raise CodecError("need one frequency table per symbol")
    dec = RangeDecoder(bits.data)
    cum = cumulative(freqs[:count])
    return [dec.decode_row(cum[i]) for i in range(count)]
