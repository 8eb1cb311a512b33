"""Compiled row-wise dense kernels used by the autodiff ops.

Dropout draws from a counter-based generator: element ``i`` of a call with
key ``seed`` gets ``splitmix64(seed, i)``, so masks depend only on
``(seed, shape)`` and not on call order.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .instrumentation import kernel_scope

__all__ = [
    "relu",
    "relu_backward",
    "leaky_relu",
    "masked_scale",
    "bias_add",
    "column_sum",
    "dropout_mask",
    "log_softmax_nll",
    "log_softmax_nll_backward",
]

@njit(cache=True)
def _relu(x, out, mask):
    for i in range(x.size):
        v = x[i]
        if v > 0.0:
            out[i] = v
            mask[i] = True
        else:
            out[i] = 0.0
            mask[i] = False


@njit(cache=True)
def _leaky(x, out, mask, slope):
    for i in range(x.size):
        v = x[i]
        if v > 0.0:
            out[i] = v
            mask[i] = True
        else:
            out[i] = slope * v
            mask[i] = False


@njit(cache=True)
def _masked_scale(g, mask, neg, out):
    for i in range(g.size):
        out[i] = g[i] if mask[i] else neg * g[i]


@njit(cache=True)
def _row_broadcast_add(x, b, out):
    for r in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[r, c] = x[r, c] + b[c]


@njit(cache=True)
def _column_sum(x, out):
    for r in range(x.shape[0]):
        for c in range(x.shape[1]):
            out[c] += x[r, c]


@njit(cache=True)
def _splitmix_uniform(seed, out):
    golden = np.uint64(0x9E3779B97F4A7C15)
    for i in range(out.size):
        z = seed + golden * np.uint64(i + 1)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        out[i] = (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _lsm_nll(x, idx, labels, probs):
    total = 0.0
    nc = x.shape[1]
    for k in range(idx.shape[0]):
        r = idx[k]
        m = x[r, 0]
        for c in range(1, nc):
            if x[r, c] > m:
                m = x[r, c]
        s = 0.0
        for c in range(nc):
            s += np.exp(x[r, c] - m)
        lse = np.log(s)
        for c in range(nc):
            probs[k, c] = np.exp(x[r, c] - m - lse)
        total -= x[r, labels[r]] - m - lse
    return total / idx.shape[0]


@njit(cache=True)
def _lsm_nll_back(probs, idx, labels, scale, out):
    for k in range(idx.shape[0]):
        r = idx[k]
        for c in range(probs.shape[1]):
            out[r, c] = probs[k, c] * scale
        out[r, labels[r]] -= scale


def relu(x: np.ndarray):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    mask = np.empty(x.shape, dtype=np.bool_)
    with kernel_scope("relu"):
        _relu(x.reshape(-1), out.reshape(-1), mask.reshape(-1))
    return out, mask


def leaky_relu(x: np.ndarray, slope: float):
    x = np.ascontiguousarray(x)
    out = np.empty_like(x)
    mask = np.empty(x.shape, dtype=np.bool_)
    with kernel_scope("leaky_relu"):
        _leaky(x.reshape(-1), out.reshape(-1), mask.reshape(-1), float(slope))
    return out, mask


def masked_scale(g: np.ndarray, mask: np.ndarray, neg: float = 0.0) -> np.ndarray:
    """``g`` where ``mask`` holds, ``neg * g`` elsewhere."""
    g = np.ascontiguousarray(g)
    out = np.empty_like(g)
    mask = np.ascontiguousarray(mask)
    with kernel_scope("masked_scale"):
        _masked_scale(g.reshape(-1), mask.reshape(-1), float(neg), out.reshape(-1))
    return out


relu_backward = masked_scale


def bias_add(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    out = np.empty(x.shape, dtype=np.result_type(x, b))
    with kernel_scope("bias_add"):
        _row_broadcast_add(x.reshape(-1, x.shape[-1]), b, out.reshape(-1, x.shape[-1]))
    return out


def column_sum(x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x)
    x2 = x.reshape(-1, x.shape[-1])
    out = np.zeros(x2.shape[1], dtype=x.dtype)
    with kernel_scope("column_sum"):
        _column_sum(x2, out)
    return out


def dropout_mask(shape, p: float, seed: int) -> np.ndarray:
    """Inverted-dropout multiplier: ``1/(1-p)`` on kept entries, 0 on dropped."""
    u = np.empty(shape, dtype=np.float64)
    with kernel_scope("dropout_mask"):
        _splitmix_uniform(np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), u.reshape(-1))
        return (u >= p) * (1.0 / (1.0 - p))


def log_softmax_nll(x: np.ndarray, labels: np.ndarray, idx: np.ndarray):
    """Mean NLL of row-wise log-softmax over rows ``idx``; also returns their softmax."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    probs = np.empty((idx.shape[0], x.shape[1]))
    with kernel_scope("log_softmax_nll"):
        loss = _lsm_nll(x, idx, labels, probs)
    return loss, probs


def log_softmax_nll_backward(probs, idx, labels, n_rows, scale):
    out = np.zeros((n_rows, probs.shape[1]))
    with kernel_scope("log_softmax_nll_bwd"):
        _lsm_nll_back(probs, idx, labels, float(scale), out)
    return out
