"""Quantization compensation network.

A conv trunk with residual blocks predicts a correction for the dequantized
latent. The correction passes through relu before the global shortcut adds
it, so the output never falls below its input: floor quantization only ever
rounds down.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .init import bias_param, conv_param
from .tensor import Parameter, Tensor, add, conv2d, relu


@dataclass(frozen=True)
class QcmConfig:
    num_blocks: int = 24
    channels: int = 10

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ConfigurationError("QCM needs at least one residual block")


class Qcm:
    def __init__(self, cfg: QcmConfig, rng: np.random.Generator, q_step: float = 0.01):
        c = cfg.channels
        self.cfg = cfg
        self.conv_in = (conv_param(rng, c, c, 3), bias_param(c))
        self.blocks = []
        for _ in range(cfg.num_blocks):
            w1 = conv_param(rng, c, c, 3)
            # keep the untrained trunk close to identity at any depth
            w2 = conv_param(rng, c, c, 3, gain=2.0 / cfg.num_blocks)
            self.blocks.append((w1, bias_param(c), w2, bias_param(c)))
        # start from the mean floor error of a uniform residual
        self.conv_out = (conv_param(rng, c, c, 3, gain=1e-4), bias_param(c, q_step / 2))

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        out = [("qcm.conv_in.weight", self.conv_in[0]), ("qcm.conv_in.bias", self.conv_in[1])]
        for i, (w1, b1, w2, b2) in enumerate(self.blocks):
            out += [(f"qcm.block{i}.conv1.weight", w1), (f"qcm.block{i}.conv1.bias", b1),
                    (f"qcm.block{i}.conv2.weight", w2), (f"qcm.block{i}.conv2.bias", b2)]
        out += [("qcm.conv_out.weight", self.conv_out[0]), ("qcm.conv_out.bias", self.conv_out[1])]
        return out

    def residual_block(self, h: Tensor, i: int) -> Tensor:
        w1, b1, w2, b2 = self.blocks[i]
        inner = relu(conv2d(h, w1, b1, padding=1))
        return add(h, conv2d(inner, w2, b2, padding=1))

    def compensation(self, y_hat: Tensor) -> Tensor:
        t = conv2d(y_hat, *self.conv_in, padding=1)
        for i in range(len(self.blocks)):
            t = self.residual_block(t, i)
        return relu(conv2d(t, *self.conv_out, padding=1))

    def forward(self, y_hat: Tensor) -> Tensor:
        return add(y_hat, self.compensation(y_hat))
