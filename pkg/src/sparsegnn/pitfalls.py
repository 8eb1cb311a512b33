"""Executable demonstrations of known-wrong system designs.

Each demo runs the wrong variant next to the correct one and reports what an
oracle sees: a gradient relative error from central finite differences, an
aborted backward pass, or a measured slowdown.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import kernels
from .autodiff import Tape, Variable, StateTensorError
from .datasets import erdos_renyi_graph
from .graph_store import UnifiedGraph, from_edges
from .oracle import finite_diff, rel_error

__all__ = [
    "DEMOS",
    "DemoResult",
    "t4_graph",
    "ring_graph",
    "gradient_check",
    "demo_sys_p1",
    "demo_sys_p2",
    "demo_sys_p3",
    "demo_eval_p3",
    "run_demo",
]

DEMOS = ("sys-p1", "sys-p2", "sys-p3", "eval-p3")
GRAD_TOL = 1e-5
GRAD_FLOOR = 1e-8  # norm below which a gradient counts as zero
VISIBLE_ERR = 1e-2


def t4_graph() -> UnifiedGraph:
    return from_edges([(0, 1), (0, 2), (1, 2), (2, 3)], vcount=4)


def ring_graph(n: int = 8) -> UnifiedGraph:
    return from_edges([(i, (i + 1) % n) for i in range(n)], vcount=n)


def gradient_check(fn: Callable[..., Variable], inputs: Mapping[str, np.ndarray], *,
                   pitfalls=(), layout: str = "graphpy", backend=None,
                   seed: int = 0) -> dict[str, float]:
    """Relative error between tape gradients and finite differences, per input.

    ``fn(tape, **variables)`` builds any tensor; it is reduced to a scalar by
    a fixed random projection so every output element matters.
    """
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    probe = None

    def run(values, pf):
        nonlocal probe
        tape = Tape(backend, pitfalls=pf, layout=layout)
        vs = {k: Variable(v.copy(), requires_grad=True, name=k) for k, v in values.items()}
        out = fn(tape, **vs)
        if probe is None:
            probe = np.random.default_rng(seed).standard_normal(out.shape)
        return tape, vs, tape.weighted_sum(out, probe)

    tape, vs, loss = run(inputs, pitfalls)
    tape.backward(loss)
    errs = {}
    for name in inputs:
        def f(x, name=name):
            vals = dict(inputs)
            vals[name] = x
            return float(run(vals, ())[2].value)

        fd = finite_diff(f, inputs[name])
        got = vs[name].grad if vs[name].grad is not None else np.zeros_like(fd)
        errs[name] = rel_error(got, fd, GRAD_FLOOR)
    return errs


@dataclass
class DemoResult:
    which: str
    ok: bool
    summary: str
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def demo_sys_p1(seed: int = 0) -> DemoResult:
    """A fused forward skips the relu mask; backward must refuse to guess it."""
    g = t4_graph()
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((g.vcount, 3))
    w = rng.standard_normal((3, 2))

    def attempt(pitfalls):
        tape = Tape(pitfalls=pitfalls)
        xv, wv = Variable(x), Variable(w, requires_grad=True)
        h = tape.relu(tape.spmm_v(g, tape.matmul(xv, wv), norm=True))
        tape.backward(tape.weighted_sum(h, np.ones(h.shape)))
        return wv.grad

    attempt(())
    try:
        attempt({"sys-p1"})
    except StateTensorError as exc:
        return DemoResult("sys-p1", True, "backward aborted on a skipped state tensor",
                          {"error": str(exc)})
    return DemoResult("sys-p1", False, "backward completed without its state tensor")


def demo_sys_p2(g: UnifiedGraph | None = None, seed: int = 0) -> DemoResult:
    """Weighted aggregation whose backward forgets to transpose."""
    g = g if g is not None else t4_graph()
    rng = np.random.default_rng(seed)
    inputs = {"w": rng.uniform(0.5, 2.0, (g.ecount, 1)), "x": rng.standard_normal((g.vcount, 3))}

    def fn(tape, w, x):
        return tape.spmm_ve(g, w, x)

    wrong = gradient_check(fn, inputs, pitfalls={"sys-p2"}, seed=seed)["x"]
    right = gradient_check(fn, inputs, seed=seed)["x"]
    ok = wrong > VISIBLE_ERR and right < GRAD_TOL
    return DemoResult("sys-p2", ok,
                      f"untransposed backward rel err {wrong:.3g}, transposed {right:.3g}",
                      {"pitfall_rel_err": wrong, "correct_rel_err": right})


def demo_sys_p3(g: UnifiedGraph | None = None, seed: int = 0) -> DemoResult:
    """Degree normalization applied after the backward aggregation instead of before.

    On a graph where every vertex has the same degree the two orders agree,
    which is why the bug survives tests on regular graphs.
    """
    g = g if g is not None else t4_graph()
    rng = np.random.default_rng(seed)
    inputs = {"x": rng.standard_normal((g.vcount, 3))}

    def fn(tape, x):
        return tape.spmm_v(g, x, norm=True)

    wrong = gradient_check(fn, inputs, pitfalls={"sys-p3"}, seed=seed)["x"]
    right = gradient_check(fn, inputs, seed=seed)["x"]
    deg = np.diff(g.offsets)
    uniform = bool(deg.size == 0 or np.all(deg == deg[0]))
    ok = right < GRAD_TOL and (wrong < GRAD_TOL if uniform else wrong > VISIBLE_ERR)
    return DemoResult("sys-p3", ok,
                      f"wrong-order backward rel err {wrong:.3g}, correct {right:.3g}"
                      f" ({'uniform' if uniform else 'non-uniform'} degrees)",
                      {"pitfall_rel_err": wrong, "correct_rel_err": right,
                       "uniform_degree": uniform})


def _paired_timing(a, b, iters: int) -> tuple[int, int, float]:
    """Time ``a`` and ``b`` alternately; return both medians and the median of
    per-pair ``b/a`` ratios.

    Interleaving (and flipping which goes first) spreads machine drift over
    both sides, and the paired ratio cancels what drift remains.
    """
    ta, tb = [], []
    for i in range(iters):
        order = ((a, ta), (b, tb)) if i % 2 == 0 else ((b, tb), (a, ta))
        for fn, sink in order:
            t0 = time.perf_counter_ns()
            fn()
            sink.append(max(time.perf_counter_ns() - t0, 1))
    ratio = float(np.median(np.divide(tb, ta)))
    return int(np.median(ta)), int(np.median(tb)), ratio


def demo_eval_p3(vcount: int = 32768, ecount: int = 1_000_000, feat: int = 16,
                 iters: int = 20, seed: int = 0) -> DemoResult:
    """Backward aggregation through e_shuffle + gspmm_ve versus the native transpose."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    g = erdos_renyi_graph(vcount, ecount, seed=seed)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((g.ecount, 1))
    x = rng.standard_normal((g.vcount, feat))

    def native():
        return kernels.gspmm_ve_t(g, w, x)

    def shuffled():
        return kernels.gspmm_ve(g, kernels.e_shuffle(g, w), x)

    same = np.array_equal(native(), shuffled())
    t_native, t_shuffle, slowdown = _paired_timing(native, shuffled, iters)
    return DemoResult("eval-p3", bool(same and slowdown > 1.0),
                      f"shuffle path {slowdown:.3f}x the native transpose",
                      {"vcount": g.vcount, "ecount": g.ecount, "feat": feat, "iters": iters,
                       "native_median_ns": t_native, "shuffle_median_ns": t_shuffle,
                       "slowdown": slowdown, "outputs_identical": bool(same)})


def run_demo(which: str, **kwargs) -> DemoResult:
    demos = {"sys-p1": demo_sys_p1, "sys-p2": demo_sys_p2,
             "sys-p3": demo_sys_p3, "eval-p3": demo_eval_p3}
    try:
        demo = demos[which]
    except KeyError:
        raise ValueError(f"unknown demo {which!r}; expected one of {DEMOS}") from None
    return demo(**kwargs)
