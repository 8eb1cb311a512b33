"""Dense reference implementations and gradient-checking helpers.

Nothing here imports :mod:`sparsegnn.kernels`. The references materialize the
adjacency as a dense ``V x V`` matrix and use plain dense algebra, so
agreement with the sparse kernels is a meaningful check.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph_store import UnifiedGraph

__all__ = [
    "DENSIFY_CAP",
    "DensifyCapError",
    "densify",
    "dense_spmm",
    "dense_spmm_t",
    "dense_sddmm",
    "finite_diff",
    "rel_error",
    "CloseResult",
    "check_close",
    "DenseBackend",
]


def _cols(a: np.ndarray, n: int, lead: tuple = ()) -> np.ndarray:
    # reshape to (n, *lead, rest) without -1, which fails on empty arrays
    rest = int(np.prod(a.shape[1:], dtype=np.int64)) // max(int(np.prod(lead, dtype=np.int64)), 1)
    return a.reshape((n,) + tuple(lead) + (rest,))

DENSIFY_CAP = 1024


class DensifyCapError(ValueError):
    pass


def densify(g: UnifiedGraph, We=None, cap: int = DENSIFY_CAP) -> np.ndarray:
    """Dense adjacency ``M[r, c]``: the slot's weight, 1.0 unweighted, 0 elsewhere.

    A ``[E, H]`` weight tensor yields a stack of ``H`` matrices, ``[H, V, V]``.
    """
    if g.vcount > cap:
        raise DensifyCapError(f"refusing to densify {g.vcount} vertices (cap {cap})")
    n = g.vcount
    rows = np.repeat(np.arange(n), np.diff(g.offsets))
    cols = np.asarray(g.col_ids)
    if We is None:
        m = np.zeros((n, n))
        m[rows, cols] = 1.0
        return m
    w = np.asarray(We, dtype=np.float64)
    if w.shape[0] != len(cols):
        raise ValueError(f"We has {w.shape[0]} rows, graph has {len(cols)} edges")
    if w.ndim == 1:
        m = np.zeros((n, n))
        m[rows, cols] = w
        return m
    m = np.zeros((w.shape[1], n, n))
    for h in range(w.shape[1]):
        m[h, rows, cols] = w[:, h]
    return m


def dense_spmm(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != X.shape[0]:
        raise ValueError(f"cannot multiply {M.shape} by {X.shape}")
    return (M @ _cols(X, X.shape[0])).reshape((M.shape[0],) + X.shape[1:])


def dense_spmm_t(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    return dense_spmm(np.asarray(M).T, X)


def _slot_coords(g: UnifiedGraph):
    rows = np.repeat(np.arange(g.vcount), np.diff(g.offsets))
    return rows, np.asarray(g.col_ids)


def dense_sddmm(g: UnifiedGraph, Xr, Xc) -> np.ndarray:
    """Per-slot dot products, read off the full dense ``Xr @ Xc^T`` product."""
    xr = np.asarray(Xr, dtype=np.float64)
    xc = np.asarray(Xc, dtype=np.float64)
    if xr.shape != xc.shape or xr.shape[0] != g.vcount:
        raise ValueError(f"shape mismatch: {xr.shape} vs {xc.shape}")
    if xr.ndim <= 2:
        xr = _cols(xr, g.vcount, (1,))
        xc = _cols(xc, g.vcount, (1,))
    rows, cols = _slot_coords(g)
    out = np.empty((g.ecount, xr.shape[1]))
    for h in range(xr.shape[1]):
        full = xr[:, h, :] @ xc[:, h, :].T
        out[:, h] = full[rows, cols]
    return out


def finite_diff(f: Callable[[np.ndarray], float], x, eps: float | None = None) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    Step per element is ``1e-6 * max(1, |x_i|)`` unless ``eps`` is given.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = eps if eps is not None else 1e-6 * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a, b, floor: float = 0.0) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``; 0.0 when the denominator is zero.

    A small ``floor`` keeps rounding noise on an identically zero gradient
    from reading as 100% error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


@dataclass(frozen=True)
class CloseResult:
    ok: bool
    max_abs_err: float
    index: tuple | None
    message: str

    def __bool__(self):
        return self.ok


def check_close(a, b, rtol: float = 0.0, atol: float = 1e-10) -> CloseResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        return CloseResult(False, float("inf"), None, f"shape {a.shape} != {b.shape}")
    if a.size == 0:
        return CloseResult(True, 0.0, None, "empty")
    nan = np.isnan(a) | np.isnan(b)
    if nan.any():
        idx = tuple(int(i) for i in np.unravel_index(np.argmax(nan), a.shape))
        return CloseResult(False, float("nan"), idx, f"NaN at {idx}")
    err = np.abs(a - b)
    bad = err > atol + rtol * np.abs(b)
    worst = tuple(int(i) for i in np.unravel_index(np.argmax(err), a.shape))
    max_err = float(err[worst])
    if bad.any():
        idx = tuple(int(i) for i in np.unravel_index(np.argmax(bad), a.shape))
        return CloseResult(False, max_err, idx,
                           f"mismatch at {idx}: {a[idx]!r} vs {b[idx]!r} (max abs err {max_err:.3e})")
    return CloseResult(True, max_err, worst, f"max abs err {max_err:.3e}")


def _heads(w):
    w = np.asarray(w, dtype=np.float64)
    return _cols(w, w.shape[0])


def _vertex3(x, v, heads):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x.reshape(v, 1, 1)
    if x.ndim == 2:
        return _cols(x, v, (1,)) if heads == 1 else x.reshape(v, heads, 1)
    return x


class DenseBackend:
    """Dense twin of the sparse kernel surface.

    Each method has the signature of the same-named function in
    :mod:`sparsegnn.kernels`; swapping one for the other in a training
    session gives the oracle twin run.
    """

    def __init__(self, cap: int = DENSIFY_CAP):
        self.cap = cap
        self._cache: dict[int, tuple] = {}

    def _adj(self, g):
        key = id(g)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not g:
            a = densify(g, cap=self.cap)
            rows, cols = _slot_coords(g)
            hit = (g, a, np.maximum(a.sum(axis=1), 1.0), rows, cols)
            self._cache[key] = hit
        return hit[1:]

    def gspmm_v(self, g, X, reduce="sum", norm_by_degree=False):
        a, degc, _, _ = self._adj(g)
        x = np.asarray(X, dtype=np.float64)
        x2 = _cols(x, g.vcount)
        if reduce == "sum":
            out = a @ x2
            if norm_by_degree:
                out = out / degc[:, None]
        elif norm_by_degree:
            raise ValueError("norm_by_degree is only defined for reduce='sum'")
        else:
            fill = np.inf if reduce == "min" else -np.inf
            masked = np.where(a[:, :, None] > 0, x2[None, :, :], fill)
            out = masked.min(axis=1) if reduce == "min" else masked.max(axis=1)
            out[~np.isfinite(out)] = 0.0
        return out.reshape(x.shape)

    def norm_by_degree_inplace(self, g, X):
        _, degc, _, _ = self._adj(g)
        _cols(X, g.vcount)[...] /= degc[:, None]
        return X

    def _weighted(self, g, We, X, transpose):
        w = _heads(We)
        x_in = np.asarray(X)
        x = _vertex3(x_in, g.vcount, w.shape[1])
        ms = densify(g, w, cap=self.cap)
        out = np.empty(x.shape)
        for h in range(w.shape[1]):
            m = ms[h].T if transpose else ms[h]
            out[:, h, :] = m @ x[:, h, :]
        return out.reshape(x_in.shape)

    def gspmm_ve(self, g, We, X):
        return self._weighted(g, We, X, False)

    def gspmm_ve_t(self, g, We, X):
        return self._weighted(g, We, X, True)

    def gspmm_e(self, g, We, reduce="sum", transposed=False):
        a, _, _, _ = self._adj(g)
        w_in = np.asarray(We)
        w = _heads(w_in)
        ms = densify(g, w, cap=self.cap)
        out = np.empty((g.vcount, w.shape[1]))
        mask = (a.T if transposed else a) > 0
        for h in range(w.shape[1]):
            m = ms[h].T if transposed else ms[h]
            if reduce == "sum":
                out[:, h] = m.sum(axis=1)
            else:
                fill = np.inf if reduce == "min" else -np.inf
                vals = np.where(mask, m, fill)
                red = vals.min(axis=1) if reduce == "min" else vals.max(axis=1)
                red[~np.isfinite(red)] = 0.0
                out[:, h] = red
        return out.reshape(g.vcount) if w_in.ndim == 1 else out

    def gsddmm_vv(self, g, Xr, Xc, chunk_size=None):
        return dense_sddmm(g, Xr, Xc)

    def gsddmm_vv_elem(self, g, Xr, Xc, op="add"):
        _, _, rows, cols = self._adj(g)
        xr = _cols(np.asarray(Xr, dtype=np.float64), g.vcount)
        xc = _cols(np.asarray(Xc, dtype=np.float64), g.vcount)
        return _apply(op, xr[rows], xc[cols])

    def gsddmm_ve(self, g, Xv, We, op="mul", side="row"):
        _, _, rows, cols = self._adj(g)
        w_in = np.asarray(We, dtype=np.float64)
        w = _cols(w_in, g.ecount)
        xv = _cols(np.asarray(Xv, dtype=np.float64), g.vcount)
        ends = rows if side == "row" else cols
        return _apply(op, w, xv[ends]).reshape(w_in.shape)

    def e_shuffle(self, g, We, ledger=None):
        if g.csc_eid is None:
            raise ValueError("e_shuffle needs edge IDs")
        _, _, rows, cols = self._adj(g)
        w_in = np.asarray(We)
        w = _heads(w_in)
        ms = densify(g, w, cap=self.cap)
        if ledger is not None:
            ledger.record("shuffle_intermediate", w.size)
        out = np.stack([ms[h].T[rows, cols] for h in range(w.shape[1])], axis=1)
        return out.reshape(w_in.shape)

    def edge_softmax(self, g, logits):
        a, _, rows, cols = self._adj(g)
        w_in = np.asarray(logits, dtype=np.float64)
        w = _cols(w_in, g.ecount)
        out = np.empty_like(w)
        for h in range(w.shape[1]):
            full = np.full((g.vcount, g.vcount), -np.inf)
            full[rows, cols] = w[:, h]
            m = full.max(axis=1, keepdims=True)
            m[~np.isfinite(m)] = 0.0
            e = np.where(a > 0, np.exp(full - m), 0.0)
            s = e.sum(axis=1, keepdims=True)
            s[s == 0] = 1.0
            out[:, h] = (e / s)[rows, cols]
        return out.reshape(w_in.shape)


def _apply(op, a, b):
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    raise ValueError(f"unknown op {op!r}")
