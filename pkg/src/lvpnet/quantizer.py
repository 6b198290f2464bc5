"""Uniform floor quantization of latent coefficients.

``quantize`` maps real coefficients to integers with ``floor(y / q_step)`` and
``dequantize`` maps back with ``z * q_step``. For training, :func:`quantize_ste`
runs the same floor in the forward pass but propagates ``grad / q_step``
backwards, so that dequantize-after-quantize has unit gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CodecError, ConfigurationError
from .tensor import Tensor, make_node


@dataclass
class QuantizedLatent:
    z: np.ndarray  # int32, same shape as the y that produced it
    q_step: float


def _check_step(q_step: float) -> float:
    q_step = float(q_step)
    if not q_step > 0 or not np.isfinite(q_step):
        raise ConfigurationError(f"q_step must be a positive finite number, got {q_step}")
    return q_step


def quantize(y, q_step: float) -> QuantizedLatent:
    q_step = _check_step(q_step)
    y = np.asarray(y.data if isinstance(y, Tensor) else y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise CodecError("cannot quantize non-finite latent values")
    z = np.floor(y / q_step)
    # y / q_step can round across an integer; pin z so that
    # z*q <= y < (z+1)*q holds in the float arithmetic dequantize uses
    z -= z * q_step > y
    z += (z + 1) * q_step <= y
    if z.size and (z.min() < np.iinfo(np.int32).min or z.max() > np.iinfo(np.int32).max):
        raise CodecError("latent value overflows the 32-bit integer range")
    return QuantizedLatent(z.astype(np.int32), q_step)


def dequantize(zq: QuantizedLatent) -> np.ndarray:
    return zq.z.astype(np.float64) * zq.q_step


def ste_backward(upstream, q_step: float) -> np.ndarray:
    """Gradient w.r.t. y given the gradient w.r.t. z."""
    return np.asarray(upstream, dtype=np.float64) / _check_step(q_step)


def quantize_ste(y: Tensor, q_step: float) -> Tensor:
    """Differentiable quantize: true floor forward, straight-through backward."""
    zq = quantize(y, q_step)

    def backward(g: np.ndarray) -> None:
        y.accumulate(ste_backward(g, zq.q_step))

    return make_node(zq.z.astype(np.float64), [y], backward)


def dequantize_t(z: Tensor, q_step: float) -> Tensor:
    q_step = _check_step(q_step)
    out = z.data * q_step

    def backward(g: np.ndarray) -> None:
        z.accumulate(g * q_step)

    return make_node(out, [z], backward)


def frozen_offset_quantize(y: Tensor, offset: np.ndarray) -> Tensor:
    """``y + offset`` with ``offset`` treated as a constant.

    With ``offset = dequantize(quantize(y0)) - y0`` this equals the quantized
    path at ``y0`` and is the smooth surrogate whose exact gradient the
    straight-through rule returns; used for finite-difference checks.
    """
    out = y.data + offset

    def backward(g: np.ndarray) -> None:
        y.accumulate(g)

    return make_node(out, [y], backward)
