"""Tape-based reverse-mode differentiation over dense ops and sparse kernels.

A :class:`Tape` records one forward pass. Each op declares the state tensors
its backward rule reads and saves exactly those; backward replays the nodes in
reverse registration order. The kernel backend is pluggable (the sparse
kernels by default, or :class:`~sparsegnn.oracle.DenseBackend` for the dense
twin).

Known-wrong variants of three backward rules are reachable only through the
``pitfalls`` argument:

``sys-p1``  fusable ops (relu, dropout, edge softmax) skip saving state
``sys-p2``  weighted aggregation backward reuses the forward (untransposed) kernel
``sys-p3``  degree normalization applied after the backward aggregation
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import dense
from . import kernels as sparse_kernels
from .graph_store import UnifiedGraph
from .instrumentation import MemoryLedger, kernel_scope

__all__ = [
    "PITFALLS",
    "LAYOUTS",
    "AutodiffError",
    "StateTensorError",
    "MissingGradError",
    "Variable",
    "TapeNode",
    "Tape",
    "Optimizer",
    "parameter",
]

PITFALLS = frozenset({"sys-p1", "sys-p2", "sys-p3"})
LAYOUTS = ("graphpy", "dgl_emulation")
_FUSABLE = frozenset({"relu", "dropout", "edge_softmax"})


class AutodiffError(RuntimeError):
    pass


class StateTensorError(AutodiffError):
    """A backward rule asked for a state tensor the forward never saved."""


class MissingGradError(AutodiffError):
    pass


class Variable:
    __slots__ = ("value", "grad", "requires_grad", "node", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64) if not isinstance(value, np.ndarray) else value
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: TapeNode | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def node_id(self) -> int | None:
        return None if self.node is None else self.node.id

    def zero_grad(self):
        self.grad = None if self.grad is None else np.zeros_like(self.value)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"<Variable{tag} shape={self.shape} grad={'yes' if self.grad is not None else 'no'}>"


def parameter(value, name: str | None = None) -> Variable:
    return Variable(np.array(value, dtype=np.float64), requires_grad=True, name=name)


@dataclass(eq=False)
class TapeNode:
    id: int
    op: str
    inputs: tuple[Variable, ...]
    output: Variable
    declared: tuple[str, ...]
    backward: Callable[["TapeNode", np.ndarray], Sequence[np.ndarray | None]]
    saved: dict = field(default_factory=dict)

    def saved_tensor(self, name: str):
        if name not in self.declared:
            raise AutodiffError(f"{self.op} never declared state tensor {name!r}")
        try:
            return self.saved[name]
        except KeyError:
            raise StateTensorError(
                f"backward of {self.op} (node {self.id}) needs state tensor {name!r}, "
                f"which the forward pass did not materialize"
            ) from None


class Tape:
    def __init__(self, backend=None, ledger: MemoryLedger | None = None,
                 pitfalls: Iterable[str] = (), layout: str = "graphpy"):
        pitfalls = frozenset(pitfalls)
        unknown = pitfalls - PITFALLS
        if unknown:
            raise ValueError(f"unknown pitfall flags: {sorted(unknown)}")
        layout = layout.replace("-", "_")
        if layout not in LAYOUTS:
            raise ValueError(f"unknown layout {layout!r}")
        self.k = backend if backend is not None else sparse_kernels
        self.ledger = ledger
        self.pitfalls = pitfalls
        self.layout = layout
        self.nodes: list[TapeNode] = []
        self.replay_log: list[int] = []
        self._ids = itertools.count()
        self._backward_done = False
        self._held: dict[str, int] = {}

    # -- bookkeeping ------------------------------------------------------

    def _charge(self, category: str, n: int):
        if self.ledger is not None and n:
            self.ledger.record(category, n)
            self._held[category] = self._held.get(category, 0) + n

    def release(self):
        """Return every transient buffer charged by this tape to the ledger."""
        if self.ledger is not None:
            for cat, n in self._held.items():
                self.ledger.release(cat, n)
        self._held.clear()

    @staticmethod
    def _timed(name):
        # numpy expressions stand in for device kernels; compiled kernels time themselves
        return kernel_scope(name)

    def _record(self, op: str, inputs: Sequence[Variable], out_value: np.ndarray,
                backward, declared: Sequence[str] = (), **state) -> Variable:
        out = Variable(out_value)
        self._charge("activation", out_value.size)
        if not any(v.requires_grad for v in inputs):
            return out
        if self._backward_done:
            raise AutodiffError("tape already replayed; start a new tape")
        out.requires_grad = True
        node = TapeNode(next(self._ids), op, tuple(inputs), out, tuple(declared), backward)
        skip = "sys-p1" in self.pitfalls and op in _FUSABLE
        for name in declared:
            if skip:
                continue
            value = state[name]
            if isinstance(value, np.ndarray):
                value = value.view()
                value.flags.writeable = False
                self._charge("state_tensor", value.size)
            node.saved[name] = value
        out.node = node
        self.nodes.append(node)
        return out

    # -- reverse pass -----------------------------------------------------

    def backward(self, loss: Variable):
        if self._backward_done:
            raise AutodiffError("backward already ran on this tape; reset first")
        if loss.value.size != 1:
            raise AutodiffError(f"loss must be scalar, got shape {loss.shape}")
        if not loss.requires_grad:
            raise AutodiffError("loss does not depend on any parameter")
        self._backward_done = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for node in reversed(self.nodes):
            self.replay_log.append(node.id)
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            in_grads = node.backward(node, g_out)
            for var, g in zip(node.inputs, in_grads):
                if g is None or not var.requires_grad:
                    continue
                if var.node is None:
                    var.grad = g.copy() if var.grad is None else var.grad + g
                else:
                    prev = grads.get(id(var))
                    grads[id(var)] = g.copy() if prev is None else prev + g

    def reset(self):
        self.release()
        self.nodes.clear()
        self.replay_log.clear()
        self._backward_done = False

    # -- dense ops ----------------------------------------------------------

    def matmul(self, a: Variable, b: Variable) -> Variable:
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise sparse_kernels.ShapeError(f"matmul of {a.shape} and {b.shape}")
        with self._timed("matmul"):
            out = a.value @ b.value

        def back(node, g):
            x, w = node.saved_tensor("a"), node.saved_tensor("b")
            with self._timed("matmul_bwd"):
                return g @ w.T, x.T @ g

        return self._record("matmul", (a, b), out, back, ("a", "b"), a=a.value, b=b.value)

    def bias_add(self, x: Variable, b: Variable) -> Variable:
        if b.value.ndim != 1 or x.shape[-1] != b.shape[0]:
            raise sparse_kernels.ShapeError(f"bias {b.shape} does not fit {x.shape}")
        out = dense.bias_add(x.value, b.value)

        def back(node, g):
            return g, dense.column_sum(g)

        return self._record("bias_add", (x, b), out, back)

    def add(self, a: Variable, b: Variable) -> Variable:
        if a.shape != b.shape:
            raise sparse_kernels.ShapeError(f"add of {a.shape} and {b.shape}")
        with self._timed("add"):
            out = a.value + b.value
        return self._record("add", (a, b), out, lambda node, g: (g, g))

    def scale_1p(self, x: Variable, eps: Variable) -> Variable:
        """``(1 + eps) * x`` with a trainable scalar ``eps``."""
        if eps.value.size != 1:
            raise sparse_kernels.ShapeError("eps must be a scalar")
        with self._timed("scale"):
            out = (1.0 + eps.value.reshape(())) * x.value

        def back(node, g):
            xv, e = node.saved_tensor("x"), node.saved_tensor("eps")
            with self._timed("scale_bwd"):
                return (1.0 + e.reshape(())) * g, np.array(np.sum(g * xv)).reshape(e.shape)

        return self._record("scale_1p", (x, eps), out, back, ("x", "eps"),
                            x=x.value, eps=eps.value.copy())

    def reshape(self, x: Variable, shape) -> Variable:
        src = x.shape
        out = x.value.reshape(shape)
        return self._record("reshape", (x,), out, lambda node, g: (g.reshape(src),))

    def relu(self, x: Variable) -> Variable:
        out, mask = dense.relu(x.value)

        def back(node, g):
            return (dense.masked_scale(g, node.saved_tensor("mask")),)

        return self._record("relu", (x,), out, back, ("mask",), mask=mask)

    def leaky_relu(self, x: Variable, slope: float = 0.2) -> Variable:
        out, mask = dense.leaky_relu(x.value, slope)

        def back(node, g):
            return (dense.masked_scale(g, node.saved_tensor("mask"), slope),)

        return self._record("leaky_relu", (x,), out, back, ("mask",), mask=mask)

    def elu(self, x: Variable, alpha: float = 1.0) -> Variable:
        with self._timed("elu"):
            neg = alpha * np.expm1(np.minimum(x.value, 0.0))
            out = np.where(x.value > 0, x.value, neg)

        def back(node, g):
            y, xv = node.saved_tensor("out"), node.saved_tensor("x")
            with self._timed("elu_bwd"):
                return (np.where(xv > 0, g, g * (y + alpha)),)

        return self._record("elu", (x,), out, back, ("x", "out"), x=x.value, out=out)

    def dropout(self, x: Variable, p: float, seed: int, training: bool = True) -> Variable:
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        if not training or p == 0.0:
            return x
        mask = dense.dropout_mask(x.shape, p, seed)
        with self._timed("dropout"):
            out = x.value * mask

        def back(node, g):
            m = node.saved_tensor("mask")
            with self._timed("dropout_bwd"):
                return (g * m,)

        return self._record("dropout", (x,), out, back, ("mask",), mask=mask)

    def log_softmax_nll(self, x: Variable, labels, mask) -> Variable:
        """Mean negative log-likelihood over the masked rows of ``x``."""
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        mask = np.asarray(mask, dtype=bool)
        if x.value.ndim != 2 or labels.shape != (x.shape[0],) or mask.shape != (x.shape[0],):
            raise sparse_kernels.ShapeError("logits [n, C], labels [n] and mask [n] must align")
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ValueError("loss mask selects no rows")
        if labels[idx].min() < 0 or labels[idx].max() >= x.shape[1]:
            raise ValueError("labels out of range for the logits' class count")
        loss, probs = dense.log_softmax_nll(x.value, labels, idx)

        def back(node, g):
            pr = node.saved_tensor("probs")
            return (dense.log_softmax_nll_backward(pr, idx, labels, x.shape[0],
                                                   float(g) / idx.size),)

        return self._record("log_softmax_nll", (x,), np.array(loss), back, ("probs",), probs=probs)

    def weighted_sum(self, x: Variable, r) -> Variable:
        """Scalar ``sum(x * r)`` against a constant ``r``; a probe loss for gradient checks."""
        r = np.asarray(r, dtype=np.float64)
        if r.shape != x.shape:
            raise sparse_kernels.ShapeError(f"weights {r.shape} do not match {x.shape}")
        with self._timed("weighted_sum"):
            out = np.array(np.sum(x.value * r))
        return self._record("weighted_sum", (x,), out, lambda node, g: (float(g) * r,))

    def head_dot(self, z: Variable, a: Variable) -> Variable:
        """Per-head projection ``out[v, h] = sum_f z[v, h, f] * a[h, f]``."""
        if z.value.ndim != 3 or a.shape != z.shape[1:]:
            raise sparse_kernels.ShapeError(f"head_dot of {z.shape} with {a.shape}")
        with self._timed("head_dot"):
            out = np.einsum("vhf,hf->vh", z.value, a.value)

        def back(node, g):
            zv, av = node.saved_tensor("z"), node.saved_tensor("a")
            with self._timed("head_dot_bwd"):
                return g[:, :, None] * av[None], np.einsum("vh,vhf->hf", g, zv)

        return self._record("head_dot", (z, a), out, back, ("z", "a"), z=z.value, a=a.value)

    # -- sparse ops ---------------------------------------------------------

    def spmm_v(self, g: UnifiedGraph, x: Variable, norm: bool = True) -> Variable:
        """Neighbor sum, optionally degree-normalized, over a symmetric graph."""
        k = self.k
        if self.layout == "dgl_emulation":
            return self._spmm_v_dgl(g, x, norm)
        out = k.gspmm_v(g, x.value, "sum", norm)
        wrong_order = "sys-p3" in self.pitfalls

        def back(node, gy):
            if norm and wrong_order:
                return (k.gspmm_v(g, gy, "sum", True),)
            if norm:
                # gy is a private buffer from the tape, safe to overwrite
                k.norm_by_degree_inplace(g, gy)
            return (k.gspmm_v(g, gy, "sum", False),)

        return self._record("spmm_v", (x,), out, back)

    def _degree_divide(self, g, t):
        with self._timed("degree_clamp"):
            degc = np.maximum(np.diff(g.offsets).astype(np.float64), 1.0)
        self._charge("degree_aux", g.vcount)
        with self._timed("normalize"):
            out = t / degc.reshape((-1,) + (1,) * (t.ndim - 1))
        self._charge("activation", out.size)
        return out

    def _dummy_ones(self, e):
        with self._timed("fill_ones"):
            ones = np.ones((e, 1))
        self._charge("dummy_edge_tensor", e)
        return ones

    def _spmm_v_dgl(self, g, x, norm):
        # Emulates the edge-weighted route: a dummy all-ones edge tensor per
        # call, degree clamp every call, and out-of-place normalization.
        k = self.k
        e = g.ecount
        out = k.gspmm_ve(g, self._dummy_ones(e), x.value)
        if norm:
            out = self._degree_divide(g, out)

        def back(node, gy):
            if norm:
                gy = self._degree_divide(g, gy)
            return (k.gspmm_ve(g, self._dummy_ones(e), gy),)

        return self._record("spmm_v", (x,), out, back)

    def spmm_ve(self, g: UnifiedGraph, w: Variable, x: Variable) -> Variable:
        """Edge-weighted aggregation; saves the edge tensor and vertex features."""
        k = self.k
        if g.csc_eid is None:
            raise sparse_kernels.MissingEdgeIdsError("spmm_ve needs a graph with edge IDs")
        dgl = self.layout == "dgl_emulation"
        wv = w.value
        if dgl:
            # forward eShuffle through the COO-ordered edge IDs (identity here)
            with self._timed("e_shuffle_fwd"):
                wv = wv.copy()
            self._charge("shuffle_intermediate", wv.size)
        out = k.gspmm_ve(g, wv, x.value)
        missing_transpose = "sys-p2" in self.pitfalls

        def back(node, gy):
            wt, xt = node.saved_tensor("w"), node.saved_tensor("x")
            if missing_transpose:
                dx = k.gspmm_ve(g, wt, gy)
            elif dgl:
                shuffled = k.e_shuffle(g, wt)
                self._charge("shuffle_intermediate", shuffled.size)
                dx = k.gspmm_ve(g, shuffled, gy)
            else:
                dx = k.gspmm_ve_t(g, wt, gy)
            dw = k.gsddmm_vv(g, gy, xt).reshape(wt.shape)
            return dw, dx

        return self._record("spmm_ve", (w, x), out, back, ("w", "x"), w=w.value, x=x.value)

    def edge_softmax(self, g: UnifiedGraph, logits: Variable) -> Variable:
        k = self.k
        s = k.edge_softmax(g, logits.value)

        def back(node, gs):
            sv = node.saved_tensor("s")
            with self._timed("edge_softmax_bwd"):
                sg = sv * gs
            row_sum = k.gspmm_e(g, sg, "sum")
            weighted = k.gsddmm_ve(g, row_sum, sv, "mul", "row")
            with self._timed("edge_softmax_bwd"):
                return (sg - weighted,)

        return self._record("edge_softmax", (logits,), s, back, ("s",), s=s)

    def _scatter(self, g, ge, side):
        # adjoint of gathering a vertex tensor at the row/col endpoint
        transposed = side == "col"
        return self.k.gspmm_e(g, ge, "sum", transposed)

    def sddmm_vv_add(self, g: UnifiedGraph, xr: Variable, xc: Variable) -> Variable:
        """Edge tensor ``xr[row_j] + xc[col_j]`` from two ``[V, H]`` tensors."""
        k = self.k
        if g.csc_eid is None:
            raise sparse_kernels.MissingEdgeIdsError("column scatter needs edge IDs")
        out = k.gsddmm_vv_elem(g, xr.value, xc.value, "add")

        def back(node, ge):
            return (self._scatter(g, ge, "row").reshape(xr.shape),
                    self._scatter(g, ge, "col").reshape(xc.shape))

        return self._record("sddmm_vv_add", (xr, xc), out, back)

    def sddmm_ve(self, g: UnifiedGraph, xv: Variable, w: Variable,
                 op: str = "mul", side: str = "row") -> Variable:
        k = self.k
        if side == "col" and g.csc_eid is None:
            raise sparse_kernels.MissingEdgeIdsError("column scatter needs edge IDs")
        out = k.gsddmm_ve(g, xv.value, w.value, op, side)
        saves = {"add": (), "sub": (), "mul": ("xv", "w"), "div": ("xv", "w")}[op]

        def back(node, ge):
            if op == "add":
                return self._scatter(g, ge, side).reshape(xv.shape), ge
            if op == "sub":
                return -self._scatter(g, ge, side).reshape(xv.shape), ge
            x_s, w_s = node.saved_tensor("xv"), node.saved_tensor("w")
            with self._timed("gsddmm_ve_bwd"):
                gw = ge * w_s
            if op == "mul":
                dw = k.gsddmm_ve(g, x_s, ge, "mul", side)
                dx = self._scatter(g, gw, side)
            else:
                dw = k.gsddmm_ve(g, x_s, ge, "div", side)
                with self._timed("gsddmm_ve_bwd"):
                    sq = x_s * x_s
                dx = -self._scatter(g, k.gsddmm_ve(g, sq, gw, "div", side), side)
            return dx.reshape(xv.shape), dw

        return self._record(f"sddmm_ve_{op}", (xv, w), out, back, saves, xv=xv.value, w=w.value)


class Optimizer:
    """SGD or Adam over a list of parameters (state keyed by identity)."""

    def __init__(self, kind: str = "adam", lr: float = 0.01,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.kind = kind
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self._m: dict[int, np.ndarray] = {}
        self._v: dict[int, np.ndarray] = {}

    def step(self, params: Iterable[Variable]):
        params = list(params)
        for p in params:
            if p.grad is None:
                raise MissingGradError(f"parameter {p.name or id(p)} has no gradient")
        self.t += 1
        b1, b2 = self.betas
        for p in params:
            g = p.grad
            # rebind rather than update in place: the tape may still hold the old value
            if self.kind == "sgd":
                p.value = p.value - self.lr * g
                continue
            m = self._m.setdefault(id(p), np.zeros_like(p.value))
            v = self._v.setdefault(id(p), np.zeros_like(p.value))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    @staticmethod
    def zero_grad(params: Iterable[Variable]):
        for p in params:
            p.grad = np.zeros_like(p.value)
