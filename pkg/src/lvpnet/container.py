"""The ``.lvp`` container: header, Huffman-coded latents, range-coded pixels.

Layout (all integers little-endian)::

    magic "LVPN" | version u8 | orig_h u16 | orig_w u16 | pad_h u8 | pad_w u8
    | q_step f64 | rate_num u16 | rate_den u16 | stages u8 | model_hash 8B
    | huffman table | latent count u32 | latent bits u32 | latent bytes
    | pixel bits u32 | pixel bytes

Model parameters are not stored; the decoder must be handed the same model
file, which the 8-byte hash enforces.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .entropy import (FREQ_TOTAL, BitStream, HuffmanTable, RangeDecoder, RangeEncoder,
                      huffman_build, huffman_decode, huffman_encode, quantize_probs)
from .entropy.huffman import histogram
from .entropy.rangecoder import cumulative
from .errors import (ConfigurationError, CorruptStreamError, DegenerateInputError,
                     MagicMismatchError, ModelHashMismatchError)
from .model import LVPNet, normalize
from .predictor import block_rows
from .quantizer import dequantize, quantize
from .tensor import Tensor

MAGIC = b"LVPN"
VERSION = 1
HEADER = struct.Struct("<4sBHHBBdHHB8s")
MIN_SIZE, MAX_SIZE = 8, 4096


@dataclass(frozen=True)
class CompressedContainer:
    orig_h: int
    orig_w: int
    pad_h: int
    pad_w: int
    q_step: float
    rate_num: int
    rate_den: int
    stages: int
    model_hash: bytes
    table: HuffmanTable
    latent_count: int
    latent: BitStream
    pixels: BitStream
    version: int = VERSION

    def to_bytes(self) -> bytes:
        out = bytearray(HEADER.pack(MAGIC, self.version, self.orig_h, self.orig_w, self.pad_h,
                                    self.pad_w, self.q_step, self.rate_num, self.rate_den,
                                    self.stages, self.model_hash))
        out += self.table.serialize()
        out += struct.pack("<II", self.latent_count, self.latent.bit_count) + self.latent.data
        out += struct.pack("<I", self.pixels.bit_count) + self.pixels.data
        return bytes(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CompressedContainer":
        if len(blob) < 4 or blob[:4] != MAGIC:
            raise MagicMismatchError("not an LVPN container (bad magic)")
        if len(blob) < HEADER.size:
            raise CorruptStreamError("container header truncated")
        (_, version, oh, ow, ph, pw, q, rn, rd, stages, mh) = HEADER.unpack_from(blob, 0)
        if version != VERSION:
            raise CorruptStreamError(f"unsupported container version {version}")
        table, pos = HuffmanTable.deserialize(blob, HEADER.size)
        count, lbits, pos = *_u32s(blob, pos, 2), pos + 8
        latent, pos = _bits(blob, pos, lbits)
        (pbits,), pos = _u32s(blob, pos, 1), pos + 4
        pixels, pos = _bits(blob, pos, pbits)
        if pos != len(blob):
            raise CorruptStreamError("trailing bytes after pixel stream")
        c = cls(oh, ow, ph, pw, q, rn, rd, stages, mh, table, count, latent, pixels, version)
        block = 2 ** stages
        if (oh + ph) % block or (ow + pw) % block or ph >= block or pw >= block:
            raise CorruptStreamError("padding inconsistent with stage count")
        return c

    @property
    def header_bytes(self) -> int:
        return HEADER.size


def _u32s(blob: bytes, pos: int, n: int) -> tuple[int, ...]:
    if pos + 4 * n > len(blob):
        raise CorruptStreamError("container truncated")
    return struct.unpack_from(f"<{n}I", blob, pos)


def _bits(blob: bytes, pos: int, nbits: int) -> tuple[BitStream, int]:
    nbytes = (nbits + 7) // 8
    if pos + nbytes > len(blob):
        raise CorruptStreamError("container truncated")
    return BitStream(blob[pos:pos + nbytes], nbits), pos + nbytes


def pad_image(x: np.ndarray, block: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Edge-replicate to the next multiple of ``block`` on the bottom/right."""
    ph = -x.shape[0] % block
    pw = -x.shape[1] % block
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw)), mode="edge")
    return x, (ph, pw)


def _check_image(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ConfigurationError(f"expected a grayscale plane, got shape {x.shape}")
    if x.dtype != np.uint8:
        if x.size and (x.min() < 0 or x.max() > 255 or not np.all(x == np.round(x))):
            raise ConfigurationError("pixels must be integers in [0, 255]")
        x = x.astype(np.uint8)
    h, w = x.shape
    if not (MIN_SIZE <= h <= MAX_SIZE and MIN_SIZE <= w <= MAX_SIZE):
        raise DegenerateInputError(f"image size {h}x{w} outside [{MIN_SIZE}, {MAX_SIZE}]")
    return x


def _pixel_tables(model: LVPNet, hidden: np.ndarray, h: int, w: int):
    """Yield ``(row0, rows, cum)`` with cumulative frequency tables
    ``(rows*w, 257)`` for the unpadded region, in raster order."""
    for r0, probs in model.predictor.prob_rows(hidden, block_rows(hidden.shape[2])):
        rows = min(probs.shape[1], h - r0)
        if rows <= 0:
            break
        p = probs[:, :rows, :w].reshape(probs.shape[0], -1).T
        yield r0, rows, cumulative(quantize_probs(p))


def compress_image(x, model: LVPNet, model_digest: Optional[bytes] = None) -> CompressedContainer:
    x = _check_image(x)
    cfg = model.cfg
    h, w = x.shape
    xp, (ph, pw) = pad_image(x, cfg.block)
    zq = quantize(model.encode_latent(xp), cfg.q_step)
    z = zq.z.ravel().tolist()
    table = huffman_build(histogram(z))
    latent = huffman_encode(z, table)

    hidden = model.hidden(zq.z)
    enc = RangeEncoder()
    for r0, rows, cum in _pixel_tables(model, hidden, h, w):
        sym = x[r0:r0 + rows].astype(np.int64).ravel()
        idx = np.arange(len(sym))
        lows = cum[idx, sym]
        enc.encode_many(lows.tolist(), (cum[idx, sym + 1] - lows).tolist(), FREQ_TOTAL)
    pixels = enc.finish()
    return CompressedContainer(h, w, ph, pw, cfg.q_step, cfg.rate_num, cfg.rate_den, cfg.stages,
                               model_digest or model.hash(), table, len(z), latent, pixels)


def decompress_image(c, model: LVPNet, model_digest: Optional[bytes] = None) -> np.ndarray:
    if isinstance(c, (bytes, bytearray)):
        c = CompressedContainer.from_bytes(bytes(c))
    cfg = model.cfg
    digest = model_digest if model_digest is not None else model.hash()
    if c.model_hash != digest:
        raise ModelHashMismatchError("container was produced with a different model")
    if (c.q_step, c.rate_num, c.rate_den, c.stages) != (cfg.q_step, cfg.rate_num, cfg.rate_den,
                                                         cfg.stages):
        raise ConfigurationError("container parameters do not match the model configuration")
    hp, wp = c.orig_h + c.pad_h, c.orig_w + c.pad_w
    g = (hp // cfg.block, wp // cfg.block)
    m = cfg.gmsm_config().latent_channels
    if c.latent_count != m * g[0] * g[1]:
        raise CorruptStreamError("latent count does not match the image geometry")
    z = np.array(huffman_decode(c.latent, c.table, c.latent_count), dtype=np.int32)
    hidden = model.hidden(z.reshape(m, *g))

    out = np.empty((c.orig_h, c.orig_w), dtype=np.uint8)
    dec = RangeDecoder(c.pixels.data)
    for r0, rows, cum in _pixel_tables(model, hidden, c.orig_h, c.orig_w):
        vals = [dec.decode_row(row) for row in cum]
        out[r0:r0 + rows] = np.array(vals, dtype=np.uint8).reshape(rows, c.orig_w)
    return out


def compress(x, model: LVPNet) -> bytes:
    return compress_image(x, model).to_bytes()


def decompress(blob: bytes, model: LVPNet, model_digest: Optional[bytes] = None) -> np.ndarray:
    return decompress_image(CompressedContainer.from_bytes(blob), model, model_digest)


def measure_bpp(c) -> float:
    """Whole-container bits per original pixel."""
    if isinstance(c, CompressedContainer):
        blob = c.to_bytes()
        h, w = c.orig_h, c.orig_w
    else:
        blob = bytes(c)
        cc = CompressedContainer.from_bytes(blob)
        h, w = cc.orig_h, cc.orig_w
    return 8 * len(blob) / (h * w)


def pixel_stream_bpp(c: CompressedContainer) -> float:
    return c.pixels.bit_count / (c.orig_h * c.orig_w)


def feature_maps(x, model: LVPNet) -> dict[str, np.ndarray]:
    """Raw intermediate planes for inspection: stage features, y, the
    compensated latent and its residual against y."""
    x = _check_image(x)
    xp, _ = pad_image(x, model.cfg.block)
    y, feats = model.gmsm.forward(Tensor(normalize(xp)[None]), return_features=True)
    y_hat = dequantize(quantize(y, model.cfg.q_step))
    comp = model.compensate(y_hat)
    out = {f"f{t + 1}": f.data for t, f in enumerate(feats)}
    out.update(y=y.data, y_hat=y_hat, compensated=comp, residual=y.data - comp)
    return out
