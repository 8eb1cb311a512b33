"""Sparse GNN kernels over :class:`~sparsegnn.graph_store.UnifiedGraph`.

Every kernel walks the shared CSR topology row by row and accumulates each
output element sequentially in ascending slot order. That fixed order is what
makes the composition identities (``gspmm_ve_t == gspmm_ve . e_shuffle``,
unit-weight ``gspmm_ve == gspmm_v``, fused vs. in-place normalization) hold
bit for bit.

Tensor conventions: vertex tensors are ``[V, K]`` or ``[V, H, F]``; edge
tensors are ``[E, H]`` in CSR slot order (the slot index is the edge ID).
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .graph_store import UnifiedGraph
from .instrumentation import kernel_scope

__all__ = [
    "REDUCE_OPS",
    "SDDMM_OPS",
    "ShapeError",
    "MissingEdgeIdsError",
    "gspmm_v",
    "norm_by_degree_inplace",
    "gspmm_ve",
    "gspmm_ve_t",
    "gspmm_e",
    "gsddmm_vv",
    "gsddmm_vv_elem",
    "gsddmm_ve",
    "e_shuffle",
    "edge_softmax",
    "DEFAULT_CHUNK",
]


def _cols(a: np.ndarray, n: int, lead: tuple = ()) -> np.ndarray:
    # reshape to (n, *lead, rest) without -1, which fails on empty arrays
    rest = int(np.prod(a.shape[1:], dtype=np.int64)) // max(int(np.prod(lead, dtype=np.int64)), 1)
    return a.reshape((n,) + tuple(lead) + (rest,))

REDUCE_OPS = ("sum", "min", "max")
SDDMM_OPS = ("add", "sub", "mul", "div")
_REDUCE_CODE = {"sum": 0, "min": 1, "max": 2}
_OP_CODE = {"add": 0, "sub": 1, "mul": 2, "div": 3}
DEFAULT_CHUNK = 32


class ShapeError(ValueError):
    pass


class MissingEdgeIdsError(ValueError):
    pass


# --------------------------------------------------------------------------
# compiled bodies


@njit(cache=True)
def _spmm_v(offsets, cols, x, out, degc, reduce_code, norm):
    n = offsets.shape[0] - 1
    k = x.shape[1]
    for r in range(n):
        lo = offsets[r]
        hi = offsets[r + 1]
        if reduce_code == 0:
            for j in range(lo, hi):
                c = cols[j]
                for f in range(k):
                    out[r, f] += x[c, f]
            if norm:
                d = degc[r]
                for f in range(k):
                    out[r, f] = out[r, f] / d
        elif hi > lo:
            c = cols[lo]
            for f in range(k):
                out[r, f] = x[c, f]
            for j in range(lo + 1, hi):
                c = cols[j]
                for f in range(k):
                    v = x[c, f]
                    if reduce_code == 1:
                        if v < out[r, f]:
                            out[r, f] = v
                    elif v > out[r, f]:
                        out[r, f] = v


@njit(cache=True)
def _norm_inplace(x, degc):
    for r in range(x.shape[0]):
        d = degc[r]
        for f in range(x.shape[1]):
            x[r, f] = x[r, f] / d


@njit(cache=True)
def _spmm_ve(offsets, cols, w, x, out):
    n = offsets.shape[0] - 1
    nh = x.shape[1]
    nf = x.shape[2]
    for r in range(n):
        for j in range(offsets[r], offsets[r + 1]):
            c = cols[j]
            for h in range(nh):
                wv = w[j, h]
                for f in range(nf):
                    out[r, h, f] += wv * x[c, h, f]


@njit(cache=True)
def _spmm_ve_t(offsets, cols, eid, w, x, out):
    n = offsets.shape[0] - 1
    nh = x.shape[1]
    nf = x.shape[2]
    for r in range(n):
        for j in range(offsets[r], offsets[r + 1]):
            c = cols[j]
            e = eid[j]
            for h in range(nh):
                wv = w[e, h]
                for f in range(nf):
                    out[r, h, f] += wv * x[c, h, f]


@njit(cache=True)
def _spmm_e(offsets, eid, use_eid, w, out, reduce_code):
    n = offsets.shape[0] - 1
    nh = w.shape[1]
    for r in range(n):
        lo = offsets[r]
        hi = offsets[r + 1]
        for j in range(lo, hi):
            e = eid[j] if use_eid else j
            for h in range(nh):
                v = w[e, h]
                if reduce_code == 0:
                    out[r, h] += v
                elif j == lo:
                    out[r, h] = v
                elif reduce_code == 1:
                    if v < out[r, h]:
                        out[r, h] = v
                elif v > out[r, h]:
                    out[r, h] = v


@njit(cache=True)
def _sddmm_dot(rows, cols, xr, xc, out, chunk):
    ne = rows.shape[0]
    nh = xr.shape[1]
    nf = xr.shape[2]
    cached = np.empty((nh, nf), dtype=xr.dtype)
    for start in range(0, ne, chunk):
        stop = min(start + chunk, ne)
        cur = -1
        for j in range(start, stop):
            r = rows[j]
            if r != cur:
                # COO is CSR-ordered, so a chunk sees each row as one run
                for h in range(nh):
                    for f in range(nf):
                        cached[h, f] = xr[r, h, f]
                cur = r
            c = cols[j]
            for h in range(nh):
                acc = out[j, h]
                for f in range(nf):
                    acc += cached[h, f] * xc[c, h, f]
                out[j, h] = acc


@njit(cache=True)
def _sddmm_vv_elem(rows, cols, xr, xc, out, op):
    for j in range(rows.shape[0]):
        r = rows[j]
        c = cols[j]
        for h in range(out.shape[1]):
            a = xr[r, h]
            b = xc[c, h]
            if op == 0:
                out[j, h] = a + b
            elif op == 1:
                out[j, h] = a - b
            elif op == 2:
                out[j, h] = a * b
            else:
                out[j, h] = a / b


@njit(cache=True)
def _sddmm_ve(side_ids, xv, w, out, op):
    for j in range(side_ids.shape[0]):
        v = side_ids[j]
        for h in range(w.shape[1]):
            a = w[j, h]
            b = xv[v, h]
            if op == 0:
                out[j, h] = a + b
            elif op == 1:
                out[j, h] = a - b
            elif op == 2:
                out[j, h] = a * b
            else:
                out[j, h] = a / b


@njit(cache=True)
def _gather_rows(src, idx, out):
    for j in range(idx.shape[0]):
        e = idx[j]
        for h in range(src.shape[1]):
            out[j, h] = src[e, h]


# --------------------------------------------------------------------------
# shape plumbing


def _as_float(a) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return np.ascontiguousarray(a)


def _vertex_2d(g: UnifiedGraph, x, what="X") -> np.ndarray:
    x = _as_float(x)
    if x.ndim == 0 or x.shape[0] != g.vcount:
        raise ShapeError(f"{what} must have {g.vcount} rows, got shape {x.shape}")
    return x.reshape(g.vcount, int(np.prod(x.shape[1:], dtype=np.int64)))


def _edge_2d(g: UnifiedGraph, w, what="We") -> np.ndarray:
    w = _as_float(w)
    if w.ndim not in (1, 2) or w.shape[0] != g.ecount:
        raise ShapeError(f"{what} must be [E={g.ecount}] or [E, H], got shape {w.shape}")
    return w.reshape(g.ecount, 1) if w.ndim == 1 else w


def _vertex_3d(g: UnifiedGraph, x, heads: int, what="X") -> np.ndarray:
    """Interpret ``x`` as [V, H, F] given the head count of its partner."""
    x = _as_float(x)
    if x.ndim == 0 or x.shape[0] != g.vcount:
        raise ShapeError(f"{what} must have {g.vcount} rows, got shape {x.shape}")
    if x.ndim == 1:
        x = x.reshape(g.vcount, 1, 1)
    elif x.ndim == 2:
        if heads == 1:
            x = x.reshape(g.vcount, 1, x.shape[1])
        elif x.shape[1] == heads:
            x = x.reshape(g.vcount, heads, 1)
        else:
            raise ShapeError(f"{what} shape {x.shape} incompatible with {heads} heads")
    elif x.ndim != 3:
        raise ShapeError(f"{what} must be at most 3-D, got {x.ndim}-D")
    if x.shape[1] != heads:
        raise ShapeError(f"{what} has {x.shape[1]} heads, edge tensor has {heads}")
    return x


def _result_dtype(*arrays) -> np.dtype:
    return np.result_type(*[a.dtype for a in arrays])


def _require_eids(g: UnifiedGraph, what: str) -> np.ndarray:
    if g.csc_eid is None:
        raise MissingEdgeIdsError(f"{what} needs a graph built with edge IDs (csc_eid)")
    return g.csc_eid


def _check_reduce(reduce: str) -> int:
    try:
        return _REDUCE_CODE[reduce]
    except KeyError:
        raise ValueError(f"unknown reduce op {reduce!r}; expected one of {REDUCE_OPS}") from None


# --------------------------------------------------------------------------
# public kernels


def gspmm_v(g: UnifiedGraph, X, reduce: str = "sum", norm_by_degree: bool = False) -> np.ndarray:
    """Unweighted neighbor aggregation, ``out[r] = reduce_{c in N(r)} X[c]``.

    With ``norm_by_degree`` (sum only) each output row is divided by the
    clamped degree inside the same pass.
    """
    code = _check_reduce(reduce)
    if norm_by_degree and code != 0:
        raise ValueError("norm_by_degree is only defined for reduce='sum'")
    x = np.asarray(X)
    x2 = _vertex_2d(g, x)
    out = np.zeros_like(x2)
    with kernel_scope("gspmm_v"):
        _spmm_v(g.offsets, g.col_ids, x2, out, g.deg_clamped, code, norm_by_degree)
    return out.reshape(x.shape)


def norm_by_degree_inplace(g: UnifiedGraph, X: np.ndarray) -> np.ndarray:
    """Divide each row of ``X`` by its clamped degree, writing into ``X``."""
    if not isinstance(X, np.ndarray) or X.dtype not in (np.float32, np.float64):
        raise TypeError("in-place normalization needs a float32/float64 ndarray")
    if X.ndim == 0 or X.shape[0] != g.vcount:
        raise ShapeError(f"X must have {g.vcount} rows, got shape {X.shape}")
    if not X.flags.c_contiguous:
        raise ValueError("in-place normalization needs a C-contiguous array")
    with kernel_scope("norm_by_degree"):
        _norm_inplace(_cols(X, g.vcount), g.deg_clamped)
    return X


def _spmm_ve_common(g, We, X, transposed):
    w = _edge_2d(g, We)
    x_in = np.asarray(X)
    x = _vertex_3d(g, x_in, w.shape[1])
    dtype = _result_dtype(w, x)
    w = w.astype(dtype, copy=False)
    x = x.astype(dtype, copy=False)
    out = np.zeros(x.shape, dtype=dtype)
    if transposed:
        eid = _require_eids(g, "gspmm_ve_t")
        with kernel_scope("gspmm_ve_t"):
            _spmm_ve_t(g.offsets, g.col_ids, eid, w, x, out)
    else:
        with kernel_scope("gspmm_ve"):
            _spmm_ve(g.offsets, g.col_ids, w, x, out)
    return out.reshape(x_in.shape)


def gspmm_ve(g: UnifiedGraph, We, X) -> np.ndarray:
    """Edge-weighted aggregation ``out[r,h,:] = sum_j We[j,h] * X[col_j,h,:]``."""
    return _spmm_ve_common(g, We, X, False)


def gspmm_ve_t(g: UnifiedGraph, We, X) -> np.ndarray:
    """Aggregation with the transposed weighted matrix, in one pass.

    Walks the same shared topology as :func:`gspmm_ve` and fetches each edge
    value through ``csc_eid`` instead of materializing a shuffled copy.
    """
    return _spmm_ve_common(g, We, X, True)


def gspmm_e(g: UnifiedGraph, We, reduce: str = "sum", transposed: bool = False) -> np.ndarray:
    code = _check_reduce(reduce)
    w = _edge_2d(g, We)
    out = np.zeros((g.vcount, w.shape[1]), dtype=w.dtype)
    eid = _require_eids(g, "transposed gspmm_e") if transposed else g.col_ids
    with kernel_scope("gspmm_e"):
        _spmm_e(g.offsets, eid, transposed, w, out, code)
    if np.asarray(We).ndim == 1:
        return out.reshape(g.vcount)
    return out


def gsddmm_vv(g: UnifiedGraph, Xr, Xc, chunk_size: int = DEFAULT_CHUNK) -> np.ndarray:
    """Per-edge dot product of row-endpoint and column-endpoint features.

    ``Xr``/``Xc`` are ``[V, H, F]`` (or ``[V, F]`` for a single head). The COO
    array is cut into chunks of ``chunk_size`` slots; inside a chunk the row
    features are fetched once per run of equal row IDs.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    xr = _as_float(Xr)
    xc = _as_float(Xc)
    if xr.shape != xc.shape:
        raise ShapeError(f"Xr {xr.shape} and Xc {xc.shape} must match")
    if xr.ndim == 0 or xr.shape[0] != g.vcount:
        raise ShapeError(f"vertex tensors must have {g.vcount} rows, got {xr.shape}")
    if xr.ndim == 1:
        xr, xc = xr.reshape(-1, 1, 1), xc.reshape(-1, 1, 1)
    elif xr.ndim == 2:
        xr, xc = _cols(xr, g.vcount, (1,)), _cols(xc, g.vcount, (1,))
    elif xr.ndim != 3:
        raise ShapeError("vertex tensors must be at most 3-D")
    dtype = _result_dtype(xr, xc)
    out = np.zeros((g.ecount, xr.shape[1]), dtype=dtype)
    xr = xr.astype(dtype, copy=False)
    xc = xc.astype(dtype, copy=False)
    with kernel_scope("gsddmm_vv"):
        _sddmm_dot(g.coo_rows, g.col_ids, xr, xc, out, int(chunk_size))
    return out


def _op_code(op: str) -> int:
    try:
        return _OP_CODE[op]
    except KeyError:
        raise ValueError(f"unknown sddmm op {op!r}; expected one of {SDDMM_OPS}") from None


def _vertex_heads(g, xv, what):
    xv = _as_float(xv)
    if xv.ndim == 0 or xv.shape[0] != g.vcount or xv.ndim > 2:
        raise ShapeError(f"{what} must be [V={g.vcount}] or [V, H], got {xv.shape}")
    return _cols(xv, g.vcount)


def gsddmm_vv_elem(g: UnifiedGraph, Xr, Xc, op: str = "add") -> np.ndarray:
    """``out[j,h] = Xr[row_j,h] OP Xc[col_j,h]`` for ``[V, H]`` inputs."""
    code = _op_code(op)
    xr = _vertex_heads(g, Xr, "Xr")
    xc = _vertex_heads(g, Xc, "Xc")
    if xr.shape != xc.shape:
        raise ShapeError(f"Xr {xr.shape} and Xc {xc.shape} must match")
    dtype = _result_dtype(xr, xc)
    out = np.empty((g.ecount, xr.shape[1]), dtype=dtype)
    xr = xr.astype(dtype, copy=False)
    xc = xc.astype(dtype, copy=False)
    with kernel_scope("gsddmm_vv_elem"):
        _sddmm_vv_elem(g.coo_rows, g.col_ids, xr, xc, out, code)
    return out


def gsddmm_ve(g: UnifiedGraph, Xv, We, op: str = "mul", side: str = "row") -> np.ndarray:
    """``out[j,h] = We[j,h] OP Xv[v,h]`` with ``v`` the row or column endpoint.

    Division follows IEEE semantics; zero divisors are not checked.
    """
    code = _op_code(op)
    if side not in ("row", "col"):
        raise ValueError(f"side must be 'row' or 'col', got {side!r}")
    w_in = np.asarray(We)
    w = _edge_2d(g, w_in)
    xv = _vertex_heads(g, Xv, "Xv")
    if xv.shape[1] != w.shape[1]:
        raise ShapeError(f"Xv has {xv.shape[1]} heads, We has {w.shape[1]}")
    dtype = _result_dtype(xv, w)
    out = np.empty(w.shape, dtype=dtype)
    ids = g.coo_rows if side == "row" else g.col_ids
    xv = xv.astype(dtype, copy=False)
    w = w.astype(dtype, copy=False)
    with kernel_scope("gsddmm_ve"):
        _sddmm_ve(ids, xv, w, out, code)
    return out.reshape(w_in.shape)


def e_shuffle(g: UnifiedGraph, We, ledger=None) -> np.ndarray:
    """Materialize the edge tensor permuted into transposed order.

    This is the separate-kernel route to the transposed product; it allocates
    a fresh ``[E, H]`` tensor, which is charged to ``ledger`` when given.
    """
    eid = _require_eids(g, "e_shuffle")
    w_in = np.asarray(We)
    w = _edge_2d(g, w_in)
    out = np.empty_like(w)
    if ledger is not None:
        ledger.record("shuffle_intermediate", out.size)
    with kernel_scope("e_shuffle"):
        _gather_rows(w, eid, out)
    return out.reshape(w_in.shape)


def edge_softmax(g: UnifiedGraph, logits) -> np.ndarray:
    """Softmax of edge logits over each row's slots, max-stabilized per row."""
    w_in = np.asarray(logits)
    w = _edge_2d(g, w_in, "logits")
    row_max = gspmm_e(g, w, "max")
    shifted = gsddmm_ve(g, row_max, w, "sub", "row")
    with kernel_scope("exp"):
        np.exp(shifted, out=shifted)
    denom = gspmm_e(g, shifted, "sum")
    out = gsddmm_ve(g, denom, shifted, "div", "row")
    return out.reshape(w_in.shape)
