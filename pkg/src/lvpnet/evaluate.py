"""Corpus-level rate and timing report with a lossless check."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .container import (CompressedContainer, compress_image, decompress_image, measure_bpp,
                        pixel_stream_bpp)
from .corpus import Corpus
from .errors import RoundTripError
from .model import LVPNet

TIMING_RUNS = 5


@dataclass
class ImageReport:
    name: str
    height: int
    width: int
    bytes: int
    bpp: float
    pixel_bpp: float
    encode_ms: float
    decode_ms: float


@dataclass
class EvalReport:
    images: list[ImageReport] = field(default_factory=list)
    model_bytes: int = 0

    @property
    def mean_bpp(self) -> float:
        return float(np.mean([r.bpp for r in self.images]))

    @property
    def mean_pixel_bpp(self) -> float:
        return float(np.mean([r.pixel_bpp for r in self.images]))

    @property
    def amortized_bpp(self) -> float:
        """Container bits plus the model file, over all pixels."""
        bits = sum(8 * r.bytes for r in self.images) + 8 * self.model_bytes
        return bits / sum(r.height * r.width for r in self.images)

    @property
    def encode_ms(self) -> float:
        return float(np.mean([r.encode_ms for r in self.images]))

    @property
    def decode_ms(self) -> float:
        return float(np.mean([r.decode_ms for r in self.images]))


def _median_ms(fn, runs: int):
    times = []
    out = None
    for _ in range(runs):
        t0 = time.perf_counter()
        out = fn()
        times.append(1000 * (time.perf_counter() - t0))
    return out, statistics.median(times)


def round_trip(image: np.ndarray, model: LVPNet, digest: bytes | None = None,
               runs: int = 1) -> tuple[CompressedContainer, float, float]:
    """Compress and decompress once (or ``runs`` times for timing); raise on any mismatch."""
    c, enc_ms = _median_ms(lambda: compress_image(image, model, digest), runs)
    blob = c.to_bytes()
    out, dec_ms = _median_ms(lambda: decompress_image(blob, model, digest), runs)
    if out.shape != image.shape or not np.array_equal(out, image):
        raise RoundTripError("decoded image differs from the original")
    return c, enc_ms, dec_ms


def evaluate(corpus: Corpus, model: LVPNet, runs: int = TIMING_RUNS) -> EvalReport:
    blob = model.to_bytes()
    digest = model.hash()
    report = EvalReport(model_bytes=len(blob))
    for name, im in zip(corpus.names, corpus.images):
        try:
            c, enc_ms, dec_ms = round_trip(im, model, digest, runs)
        except RoundTripError:
            raise RoundTripError(f"{name}: decoded image differs from the original") from None
        report.images.append(ImageReport(name, im.shape[0], im.shape[1], len(c.to_bytes()),
                                         measure_bpp(c), pixel_stream_bpp(c), enc_ms, dec_ms))
    return report
