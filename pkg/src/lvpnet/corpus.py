"""Image corpora: binary PGM files, the raw LVPC bundle, synthetic sets."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CodecError

RAW_MAGIC = b"LVPC"


@dataclass
class Corpus:
    images: list[np.ndarray]
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.names:
            self.names = [f"img{i:05d}" for i in range(len(self.images))]
        if len(self.names) != len(self.images):
            raise ConfigurationError("one name per image required")
        self.images = [_as_u8(im) for im in self.images]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def pixel_count(self) -> int:
        return sum(im.size for im in self.images)


def _as_u8(im) -> np.ndarray:
    a = np.asarray(im)
    if a.ndim != 2:
        raise ConfigurationError(f"expected a 2-D grayscale plane, got shape {a.shape}")
    if a.dtype != np.uint8:
        if a.size and (a.min() < 0 or a.max() > 255):
            raise ConfigurationError("pixel values must lie in [0, 255]")
        a = a.astype(np.uint8)
    return np.ascontiguousarray(a)


# -- PGM -------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens = []
    pos = 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise CodecError("malformed PGM header")
        tokens.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def decode_pgm(data: bytes) -> np.ndarray:
    if data[:2] != b"P5":
        raise CodecError("only binary PGM (P5) is supported")
    (w, h, maxval), pos = _pgm_tokens(data, 3)
    if not 0 < maxval < 256:
        raise CodecError(f"only 8-bit PGM is supported (maxval {maxval})")
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise CodecError("PGM raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()


def encode_pgm(image: np.ndarray) -> bytes:
    image = _as_u8(image)
    h, w = image.shape
    return b"P5\n%d %d\n255\n" % (w, h) + image.tobytes()


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())


def write_pgm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(image))


# -- raw bundle ------------------------------------------------------------

def encode_raw(images: list[np.ndarray]) -> bytes:
    """16-byte header (magic, count, h, w as little-endian u32) then planes."""
    if not images:
        raise ConfigurationError("raw bundle needs at least one image")
    h, w = images[0].shape
    if any(im.shape != (h, w) for im in images):
        raise ConfigurationError("raw bundle images must share one size")
    body = b"".join(_as_u8(im).tobytes() for im in images)
    return RAW_MAGIC + struct.pack("<III", len(images), h, w) + body


def decode_raw(data: bytes) -> list[np.ndarray]:
    if len(data) < 16 or data[:4] != RAW_MAGIC:
        raise CodecError("not an LVPC raw bundle")
    n, h, w = struct.unpack_from("<III", data, 4)
    if len(data) != 16 + n * h * w:
        raise CodecError("raw bundle size does not match its header")
    arr = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, h, w)
    return [a.copy() for a in arr]


def load_corpus(directory) -> Corpus:
    """All ``*.pgm`` and ``*.lvpc`` files in a directory, in name order."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"corpus directory {d} does not exist")
    images, names = [], []
    for p in sorted(d.iterdir()):
        if p.suffix == ".pgm":
            images.append(read_pgm(p))
            names.append(p.name)
        elif p.suffix == ".lvpc":
            for i, im in enumerate(decode_raw(p.read_bytes())):
                images.append(im)
                names.append(f"{p.name}#{i}")
    if not images:
        raise ConfigurationError(f"no .pgm or .lvpc images in {d}")
    return Corpus(images, names)


# -- synthetic sets --------------------------------------------------------

def smooth_gradient_images(n: int, size: int = 32, seed: int = 0,
                           noise: float = 0.5) -> list[np.ndarray]:
    """Linear ramps plus a low-frequency ripple and mild rounding noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = []
    for _ in range(n):
        base = rng.uniform(60, 196)
        gx, gy = rng.uniform(-2.5, 2.5, size=2)
        amp = rng.uniform(0, 12)
        fx, fy = rng.uniform(0.0, 0.25, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        c = (size - 1) / 2
        img = (base + gx * (xx - c) + gy * (yy - c)
               + amp * np.sin(fx * xx + fy * yy + phase)
               + noise * rng.standard_normal((size, size)))
        out.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
    return out


def constant_images(n: int, size: int = 32, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [np.full((size, size), v, dtype=np.uint8) for v in rng.integers(0, 256, size=n)]


def marginal_entropy_bpp(corpus: Corpus) -> float:
    """Zeroth-order baseline: ideal cost of coding every pixel with the
    corpus-wide pixel histogram, in bits per pixel."""
    counts = np.zeros(256, dtype=np.int64)
    for im in corpus.images:
        counts += np.bincount(im.ravel(), minlength=256)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())
