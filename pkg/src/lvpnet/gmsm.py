"""Global multi-scale sensing encoder.

Each stage halves the resolution with a 2x2 stride-2 convolution (relu) and
adds a space-to-depth copy of its input, so a stage maps ``C x H x W`` to
``4C x H/2 x W/2`` with the same number of values. The outputs of all stages
are folded down to the final grid, concatenated along channels and mixed by
a linear 1x1 convolution into ``m`` latent channels, where ``m`` is the
smallest integer meeting the sampling rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError
from .init import bias_param, conv_param
from .tensor import Parameter, Tensor, add, concat_channels, conv2d, relu, space_to_depth

SAMPLERS = ("gmsm", "cnn")


def latent_channels(rate: Fraction, stages: int) -> int:
    """Smallest channel count m with m * grid >= rate * H * W (grid = H*W / 4**stages)."""
    rate = Fraction(rate)
    if not 0 < rate <= 1:
        raise ConfigurationError(f"sampling rate must lie in (0, 1], got {rate}")
    m = math.ceil(rate * 4 ** stages)
    if m < 1:
        raise ConfigurationError("sampling rate too small for this stage count")
    return m


@dataclass(frozen=True)
class GmsmConfig:
    stages: int = 3
    rate: Fraction = Fraction(15, 100)
    sampler: str = "gmsm"

    def __post_init__(self):
        if self.stages < 1:
            raise ConfigurationError("stages must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ConfigurationError(f"unknown sampler {self.sampler!r}")
        latent_channels(self.rate, self.stages)

    @property
    def latent_channels(self) -> int:
        return latent_channels(self.rate, self.stages)


class Gmsm:
    """Encoder producing the real-valued latent plane ``y``.

    With ``sampler="cnn"`` the skip paths and multi-level aggregation are
    dropped: a plain stack of relu stride-2 convolutions feeds the 1x1 sampler
    from the last level only.
    """

    def __init__(self, cfg: GmsmConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.stage_w: list[Parameter] = []
        self.stage_b: list[Parameter] = []
        for t in range(cfg.stages):
            c = 4 ** t
            self.stage_w.append(conv_param(rng, 4 * c, c, 2))
            self.stage_b.append(bias_param(4 * c))
        top = 4 ** cfg.stages
        agg = cfg.stages * top if cfg.sampler == "gmsm" else top
        m = cfg.latent_channels
        self.sampler_w = conv_param(rng, m, agg, 1, gain=1.0)
        self.sampler_b = bias_param(m)

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = []
        for t, (w, b) in enumerate(zip(self.stage_w, self.stage_b)):
            out += [(f"gmsm.stage{t}.weight", w), (f"gmsm.stage{t}.bias", b)]
        out += [("gmsm.sampler.weight", self.sampler_w), ("gmsm.sampler.bias", self.sampler_b)]
        return out

    def stage(self, f: Tensor, t: int) -> Tensor:
        conv = relu(conv2d(f, self.stage_w[t], self.stage_b[t], stride=2))
        if self.cfg.sampler == "cnn":
            return conv
        return add(conv, space_to_depth(f))

    def features(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[-2:]
        step = 2 ** self.cfg.stages
        if h % step or w % step:
            raise ConfigurationError(f"input {h}x{w} is not divisible by {step}; pad it first")
        feats = []
        f = x
        for t in range(self.cfg.stages):
            f = self.stage(f, t)
            feats.append(f)
        return feats

    def forward(self, x: Tensor, return_features: bool = False):
        feats = self.features(x)
        if self.cfg.sampler == "gmsm":
            reduced = []
            for t, f in enumerate(feats):
                for _ in range(self.cfg.stages - 1 - t):
                    f = space_to_depth(f)
                reduced.append(f)
            agg = concat_channels(reduced)
        else:
            agg = feats[-1]
        y = conv2d(agg, self.sampler_w, self.sampler_b)
        return (y, feats) if return_features else y
