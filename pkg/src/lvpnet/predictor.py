"""Per-pixel 256-way probability prediction from compensated latents."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .errors import CodecError
from .init import bias_param, conv_param
from .tensor import Parameter, Tensor, conv2d, depth_to_space, relu, softmax

NBINS = 256
PROB_FLOOR = 2.0 ** -20


@dataclass
class PixelDistribution:
    probs: np.ndarray  # 256 x H x W, floored and normalised
    freq: Optional[np.ndarray] = None  # filled by the entropy coder when needed


def apply_floor(probs: np.ndarray, axis: int = 0) -> np.ndarray:
    """Mix in a uniform floor so every bin has probability >= 2**-20."""
    nb = probs.shape[axis]
    return probs * (1.0 - nb * PROB_FLOOR) + PROB_FLOOR


def nll_bits(dist: PixelDistribution, image: np.ndarray) -> float:
    """Code length of ``image`` in bits; uses the integer frequency table
    when one is attached, else the float probabilities."""
    image = np.asarray(image, dtype=np.int64)
    if dist.freq is not None:
        f = np.take_along_axis(dist.freq, image[None], axis=0)[0]
        return float((np.log2(dist.freq.sum(axis=0)) - np.log2(f)).sum())
    p = np.take_along_axis(dist.probs, image[None], axis=0)[0]
    return float(-np.log2(p).sum())


class Predictor:
    """Mirror of the encoder: ``stages`` rounds of 1x1 conv + depth-to-space."""

    def __init__(self, latent_ch: int, stages: int, channels: int, rng: np.random.Generator):
        self.stages = stages
        self.channels = channels
        self.up = []
        c_in = latent_ch
        for _ in range(stages):
            self.up.append((conv_param(rng, 4 * channels, c_in, 1), bias_param(4 * channels)))
            c_in = channels
        self.head = (conv_param(rng, NBINS, channels, 1, gain=0.05), bias_param(NBINS))

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = []
        for i, (w, b) in enumerate(self.up):
            out += [(f"predictor.up{i}.weight", w), (f"predictor.up{i}.bias", b)]
        out += [("predictor.head.weight", self.head[0]), ("predictor.head.bias", self.head[1])]
        return out

    def hidden(self, compensated: Tensor) -> Tensor:
        h = compensated
        for w, b in self.up:
            h = relu(depth_to_space(conv2d(h, w, b)))
        return h

    def logits(self, hidden: Tensor) -> Tensor:
        return conv2d(hidden, *self.head)

    def prob_rows(self, hidden: np.ndarray, rows: int) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(row0, probs)`` blocks of floored probabilities for one image.

        Blocks are fixed by the image shape alone, which keeps the encoder and
        decoder on identical arithmetic while bounding memory on large images.
        """
        w, b = self.head[0].data, self.head[1].data
        for r0 in range(0, hidden.shape[1], rows):
            blk = Tensor(hidden[:, r0:r0 + rows])
            logit = conv2d(blk, Tensor(w), Tensor(b)).data
            yield r0, apply_floor(softmax(logit, axis=0))

    def predict(self, compensated: Tensor, target_shape: tuple[int, int]) -> PixelDistribution:
        grid = compensated.shape[-2:]
        scale = 2 ** self.stages
        if (grid[0] * scale, grid[1] * scale) != tuple(target_shape):
            raise CodecError(f"latent grid {grid} cannot produce a {target_shape} image")
        hid = self.hidden(compensated).data
        rows = block_rows(hid.shape[2])
        probs = np.concatenate([p for _, p in self.prob_rows(hid, rows)], axis=1)
        return PixelDistribution(probs)


def block_rows(width: int) -> int:
    return max(1, 16384 // width)
