"""Quantisation of probability vectors to integer frequency tables."""

import numpy as np

FREQ_BITS = 16
FREQ_TOTAL = 1 << FREQ_BITS


def quantize_probs(probs) -> np.ndarray:
    """Map probabilities (last axis) to integer frequencies summing to 2**16.

    Each bin gets ``max(1, floor(p * 2**16))``. A shortfall is handed out one
    unit at a time to the bins with the largest fractional remainders (lowest
    index first on ties); an excess from the minimum-one bumps is taken from
    the largest bin. The result depends only on the input values.
    """
    p = np.asarray(probs, dtype=np.float64)
    squeeze = p.ndim == 1
    if squeeze:
        p = p[None]
    x = p * FREQ_TOTAL
    fl = np.floor(x)
    rem = x - fl
    f = np.maximum(fl, 1.0).astype(np.int64)
    deficit = FREQ_TOTAL - f.sum(axis=-1)

    pos = deficit > 0
    if pos.any():
        r = rem[pos]
        order = np.argsort(-r, axis=-1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.arange(r.shape[-1])[None].repeat(len(r), 0), axis=-1)
        f[pos] += ranks < deficit[pos][:, None]

    neg = deficit < 0
    if neg.any():
        rows = np.nonzero(neg)[0]
        top = np.argmax(f[rows], axis=-1)
        f[rows, top] += deficit[rows]

    return f[0] if squeeze else f


def attach_frequencies(dist):
    """Fill ``dist.freq`` (256 x H x W) with the tables the range coder uses."""
    nb = dist.probs.shape[0]
    rows = dist.probs.reshape(nb, -1).T
    dist.freq = quantize_probs(rows).T.reshape(dist.probs.shape)
    return dist
