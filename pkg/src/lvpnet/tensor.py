"""Minimal dense tensor engine with reverse-mode autodiff and Adam.

Feature maps are laid out channels-first. Every op accepts either a single
``C x H x W`` map or a batch ``N x C x H x W`` and returns the same rank.
All arithmetic is float64 and each op has exactly one code path, so the
encoder and decoder reproduce probabilities bit for bit.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, TrainingError, UsageError

LN2 = math.log(2.0)


class Tensor:
    """A float64 array plus an optional gradient buffer and graph edge."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data


def make_node(data: np.ndarray, parents: Sequence[Tensor],
              backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, attaching ``backward_fn`` only if a parent needs grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


class Parameter:
    """A trainable tensor with its Adam moment accumulators."""

    def __init__(self, value):
        self.value = Tensor(value, requires_grad=True)
        self.adam_m = np.zeros_like(self.value.data)
        self.adam_v = np.zeros_like(self.value.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.value.grad = None


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ConfigurationError(f"expected a CxHxW or NxCxHxW feature map, got shape {x.shape}")


# ---------------------------------------------------------------------------
# convolution and channel/space permutations
# ---------------------------------------------------------------------------

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    col = np.empty((n, c, k, k, ho, wo), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            col[:, :, i, j] = xp[:, :, i:i + stride * (ho - 1) + 1:stride,
                                 j:j + stride * (wo - 1) + 1:stride]
    return col


def conv2d(x: Tensor, weight: Parameter | Tensor, bias: Parameter | Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with an ``O x C x K x K`` kernel and zero padding."""
    w_t = weight.value if isinstance(weight, Parameter) else weight
    b_t = bias.value if isinstance(bias, Parameter) else bias
    xb, squeeze = _as_batch(x.data)
    w = w_t.data
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ConfigurationError(f"conv weight must be OxCxKxK, got {w.shape}")
    o, c, k, _ = w.shape
    if k not in (1, 2, 3):
        raise ConfigurationError(f"kernel size {k} not supported")
    if stride not in (1, 2):
        raise ConfigurationError(f"stride {stride} not supported")
    if xb.shape[1] != c:
        raise ConfigurationError(f"input has {xb.shape[1]} channels, kernel expects {c}")
    if b_t is not None and b_t.shape != (o,):
        raise ConfigurationError(f"bias shape {b_t.shape} does not match {o} outputs")
    n, _, h, wd = xb.shape
    if k == 1 and stride == 1 and not padding:
        return _conv1x1(x, w_t, b_t, xb, squeeze)
    if padding:
        xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = xb
    hp, wp = xp.shape[2:]
    if hp < k or wp < k:
        raise DegenerateInputError(f"{h}x{wd} input is smaller than the {k}x{k} kernel")
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    col = _im2col(xp, k, stride, ho, wo)
    out = np.tensordot(col, w, axes=([1, 2, 3], [1, 2, 3])).transpose(0, 3, 1, 2)
    if b_t is not None:
        out = out + b_t.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray) -> None:
        gb = g[None] if squeeze else g
        if w_t.requires_grad:
            w_t.accumulate(np.tensordot(gb, col, axes=([0, 2, 3], [0, 4, 5])))
        if b_t is not None and b_t.requires_grad:
            b_t.accumulate(gb.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcol = np.tensordot(gb, w, axes=([1], [0]))  # n, ho, wo, c, k, k
            dxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                        j:j + stride * (wo - 1) + 1:stride] += dcol[..., i, j].transpose(0, 3, 1, 2)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x.accumulate(dxp[0] if squeeze else dxp)

    parents = [x, w_t] + ([b_t] if b_t is not None else [])
    return make_node(out[0] if squeeze else out, parents, backward)


def _conv1x1(x: Tensor, w_t: Tensor, b_t: Optional[Tensor], xb: np.ndarray,
             squeeze: bool) -> Tensor:
    n, c, h, wd = xb.shape
    w2 = w_t.data[:, :, 0, 0]
    flat = xb.reshape(n, c, h * wd)
    out = np.matmul(w2, flat)
    if b_t is not None:
        out += b_t.data[None, :, None]
    out = out.reshape(n, -1, h, wd)

    def backward(g: np.ndarray) -> None:
        gf = (g[None] if squeeze else g).reshape(n, -1, h * wd)
        if w_t.requires_grad:
            w_t.accumulate(np.tensordot(gf, flat, axes=([0, 2], [0, 2]))[:, :, None, None])
        if b_t is not None and b_t.requires_grad:
            b_t.accumulate(gf.sum(axis=(0, 2)))
        if x.requires_grad:
            dx = np.matmul(w2.T, gf).reshape(n, c, h, wd)
            x.accumulate(dx[0] if squeeze else dx)

    parents = [x, w_t] + ([b_t] if b_t is not None else [])
    return make_node(out[0] if squeeze else out, parents, backward)


def _s2d(a: np.ndarray) -> np.ndarray:
    n, c, h, w = a.shape
    a = a.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(a.reshape(n, 4 * c, h // 2, w // 2))


def _d2s(a: np.ndarray) -> np.ndarray:
    n, c4, h, w = a.shape
    c = c4 // 4
    a = a.reshape(n, c, 2, 2, h, w).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(a.reshape(n, c, 2 * h, 2 * w))


def space_to_depth(x: Tensor) -> Tensor:
    """Fold every 2x2 block into four channels (channel-major, then row, col)."""
    xb, squeeze = _as_batch(x.data)
    if xb.shape[2] % 2 or xb.shape[3] % 2:
        raise ConfigurationError(f"space_to_depth needs even extents, got {xb.shape[2:]}")
    out = _s2d(xb)

    def backward(g: np.ndarray) -> None:
        gb = _d2s(g[None] if squeeze else g)
        x.accumulate(gb[0] if squeeze else gb)

    return make_node(out[0] if squeeze else out, [x], backward)


def depth_to_space(x: Tensor) -> Tensor:
    """Inverse of :func:`space_to_depth`."""
    xb, squeeze = _as_batch(x.data)
    if xb.shape[1] % 4:
        raise ConfigurationError(f"depth_to_space needs channels divisible by 4, got {xb.shape[1]}")
    out = _d2s(xb)

    def backward(g: np.ndarray) -> None:
        gb = _s2d(g[None] if squeeze else g)
        x.accumulate(gb[0] if squeeze else gb)

    return make_node(out[0] if squeeze else out, [x], backward)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    axis = xs[0].data.ndim - 3
    sizes = [t.data.shape[axis] for t in xs]
    out = np.concatenate([t.data for t in xs], axis=axis)

    def backward(g: np.ndarray) -> None:
        start = 0
        for t, s in zip(xs, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + s)
                t.accumulate(g[tuple(idx)])
            start += s

    return make_node(out, xs, backward)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return make_node(out, [x], backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"add: shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return make_node(out, [a, b], backward)


def scale(x: Tensor, factor: float) -> Tensor:
    out = x.data * factor

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * factor)

    return make_node(out, [x], backward)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_bits(logits: Tensor, target: np.ndarray,
                 mask: Optional[np.ndarray] = None) -> tuple[Tensor, np.ndarray]:
    """Per-pixel softmax over the channel axis and total code length in bits.

    ``target`` holds integer bin indices with the logits' spatial (and batch)
    shape. ``mask``, if given, is a boolean plane selecting the pixels that
    count towards the loss.
    """
    axis = logits.data.ndim - 3
    nbins = logits.data.shape[axis]
    target = np.asarray(target, dtype=np.int64)
    if target.shape != logits.data.shape[:axis] + logits.data.shape[axis + 1:]:
        raise ConfigurationError(f"target shape {target.shape} does not match logits {logits.shape}")
    if target.size and (target.min() < 0 or target.max() >= nbins):
        raise ConfigurationError("target values out of range")
    shifted = logits.data - logits.data.max(axis=axis, keepdims=True)
    probs = np.exp(shifted)
    z = probs.sum(axis=axis, keepdims=True)
    probs /= z
    idx = np.expand_dims(target, axis)
    picked = np.squeeze(np.take_along_axis(shifted, idx, axis=axis) - np.log(z), axis)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        picked = np.where(mask, picked, 0.0)
    loss = -picked.sum() / LN2

    def backward(g: np.ndarray) -> None:
        grad = probs.copy()
        np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=axis) - 1.0, axis=axis)
        if mask is not None:
            grad *= np.expand_dims(mask, axis)
        grad *= float(g) / LN2
        logits.accumulate(grad)

    return make_node(np.asarray(loss), [logits], backward), probs


# ---------------------------------------------------------------------------
# reverse pass and optimizer
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from the scalar ``loss``.

    Interior nodes are released afterwards, so a graph can only be
    differentiated once.
    """
    if not loss.requires_grad or (loss._backward is None and not loss._parents):
        raise UsageError("backward called on a tensor that is not attached to a graph")
    if loss.data.size != 1:
        raise UsageError("backward needs a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node.grad = None


def adam_step(param: Parameter, grad: np.ndarray, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape:
        raise ConfigurationError(f"gradient shape {grad.shape} != parameter shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise TrainingError("non-finite gradient")
    param.step_count += 1
    t = param.step_count
    param.adam_m *= beta1
    param.adam_m += (1.0 - beta1) * grad
    param.adam_v *= beta2
    param.adam_v += (1.0 - beta2) * grad * grad
    m_hat = param.adam_m / (1.0 - beta1 ** t)
    v_hat = param.adam_v / (1.0 - beta2 ** t)
    param.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a fixed, ordered parameter list."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p, g, self.lr, self.beta1, self.beta2, self.eps)
