"""Seeded parameter initialisation."""

import numpy as np

from .tensor import Parameter


def conv_param(rng: np.random.Generator, out_ch: int, in_ch: int, k: int,
               gain: float = 2.0) -> Parameter:
    fan_in = in_ch * k * k
    return Parameter(rng.standard_normal((out_ch, in_ch, k, k)) * np.sqrt(gain / fan_in))


def bias_param(out_ch: int, value: float = 0.0) -> Parameter:
    return Parameter(np.full(out_ch, value, dtype=np.float64))
