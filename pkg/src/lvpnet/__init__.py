"""Learned lossless grayscale image codec with latent-variable pixel prediction."""

from .container import (CompressedContainer, compress, compress_image, decompress,
                        decompress_image, measure_bpp, pixel_stream_bpp)
from .corpus import Corpus, load_corpus, read_pgm, write_pgm
from .evaluate import EvalReport, evaluate
from .model import CodecConfig, LVPNet, load_model, save_model
from .train import TrainConfig, train

__all__ = [
    "CodecConfig", "CompressedContainer", "Corpus", "EvalReport", "LVPNet", "TrainConfig",
    "compress", "compress_image", "decompress", "decompress_image", "evaluate", "load_corpus",
    "load_model", "measure_bpp", "pixel_stream_bpp", "read_pgm", "save_model", "train",
    "write_pgm",
]
