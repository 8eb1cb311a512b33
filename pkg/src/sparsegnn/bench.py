"""Kernel microbenchmarks and the framework-overhead sweep."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .datasets import NodeDataset, erdos_renyi_graph, random_split
from .graph_store import UnifiedGraph
from .instrumentation import OverheadReport, Profiler, overhead_report
from .models import TrainConfig, train

__all__ = [
    "BENCH_KERNELS",
    "BENCH_COLUMNS",
    "bench_kernel",
    "kernel_inputs",
    "SweepPoint",
    "overhead_sweep",
    "strictly_decreasing",
]

BENCH_KERNELS = ("gspmm_v", "gspmm_ve", "gspmm_ve_t", "gsddmm_vv", "gsddmm_ve",
                 "e_shuffle", "edge_softmax", "e_shuffle+gspmm_ve")
BENCH_COLUMNS = ("kernel", "vcount", "ecount", "feat", "heads", "median_ns", "checksum")


def kernel_inputs(g: UnifiedGraph, feat: int, heads: int, seed: int = 0,
                  unit_weights: bool = False) -> dict:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((g.vcount, heads, feat))
    w = np.ones((g.ecount, heads)) if unit_weights else rng.uniform(0.5, 1.5, (g.ecount, heads))
    return {
        "x": x if heads > 1 else x.reshape(g.vcount, feat),
        "x2": rng.standard_normal(x.shape).reshape(x.shape if heads > 1 else (g.vcount, feat)),
        "xv": rng.uniform(0.5, 1.5, (g.vcount, heads)),
        "w": w,
    }


def _call(name: str, g: UnifiedGraph, inp: dict):
    x, w = inp["x"], inp["w"]
    if name == "gspmm_v":
        return lambda: kernels.gspmm_v(g, x)
    if name == "gspmm_ve":
        return lambda: kernels.gspmm_ve(g, w, x)
    if name == "gspmm_ve_t":
        return lambda: kernels.gspmm_ve_t(g, w, x)
    if name == "e_shuffle+gspmm_ve":
        return lambda: kernels.gspmm_ve(g, kernels.e_shuffle(g, w), x)
    if name == "gsddmm_vv":
        return lambda: kernels.gsddmm_vv(g, x, inp["x2"])
    if name == "gsddmm_ve":
        return lambda: kernels.gsddmm_ve(g, inp["xv"], w, "mul", "row")
    if name == "e_shuffle":
        return lambda: kernels.e_shuffle(g, w)
    if name == "edge_softmax":
        return lambda: kernels.edge_softmax(g, w)
    raise ValueError(f"unknown kernel {name!r}; expected one of {BENCH_KERNELS}")


def bench_kernel(g: UnifiedGraph, name: str, feat: int = 16, heads: int = 1,
                 iters: int = 20, warmup: int = 2, seed: int = 0,
                 unit_weights: bool = False) -> dict:
    """Median wall time of ``iters`` calls after ``warmup``, plus an output checksum.

    ``gspmm_v`` ignores ``heads``; its input is ``[V, feat]``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if feat < 1 or heads < 1:
        raise ValueError("feat and heads must be >= 1")
    h = 1 if name == "gspmm_v" else heads
    fn = _call(name, g, kernel_inputs(g, feat, h, seed, unit_weights))
    out = None
    for _ in range(warmup):
        out = fn()
    samples = []
    for _ in range(iters):
        t0 = time.perf_counter_ns()
        out = fn()
        samples.append(time.perf_counter_ns() - t0)
    return {
        "kernel": name,
        "vcount": g.vcount,
        "ecount": g.ecount,
        "feat": feat,
        "heads": h,
        "median_ns": int(np.median(samples)),
        "checksum": float(np.sum(out)),
    }


@dataclass(frozen=True)
class SweepPoint:
    vcount: int
    ecount: int
    report: OverheadReport

    @property
    def overhead_ratio(self) -> float:
        return self.report.overhead_ratio

    def to_dict(self) -> dict:
        d = {"vcount": self.vcount, "ecount": self.ecount}
        d.update(self.report.to_dict())
        d.pop("per_epoch_ratio")
        return d


def _synthetic_dataset(vcount, ecount, feat, classes, seed):
    g = erdos_renyi_graph(vcount, ecount, seed=seed, need_edge_ids=True)
    rng = np.random.default_rng(seed + 1)
    x = rng.standard_normal((vcount, feat))
    y = rng.integers(0, classes, vcount)
    return NodeDataset(g, x, y, *random_split(vcount, seed + 2), classes)


def overhead_sweep(vcount: int = 32768, edges=(1_000, 10_000, 100_000, 1_000_000),
                   model: str = "gcn", epochs: int = 200, feat: int = 2,
                   hidden: int = 2, classes: int = 2, seed: int = 0,
                   layout: str = "graphpy", warmup: bool = True) -> list[SweepPoint]:
    """Train on Erdős–Rényi graphs of fixed ``vcount`` and report overhead per size.

    Every size runs the same op sequence, so only kernel work grows with the
    edge count. ``warmup`` trains one throwaway epoch first so that loading
    compiled kernels is not billed to the first graph.
    """
    cfg = TrainConfig(model=model, epochs=epochs, hidden=hidden, dropout=0.0,
                      seed=seed, layout=layout, eval_every=0)
    if warmup:
        ds = _synthetic_dataset(64, 256, feat, classes, seed)
        train(ds, TrainConfig(model=model, epochs=2, hidden=hidden, seed=seed,
                              layout=layout, eval_every=0))
    points = []
    for e in edges:
        ds = _synthetic_dataset(vcount, int(e), feat, classes, seed)
        rep = train(ds, cfg, profiler=Profiler())
        points.append(SweepPoint(vcount, ds.graph.ecount, overhead_report(rep.timings)))
    return points


def strictly_decreasing(values) -> bool:
    values = list(values)
    return all(b < a for a, b in zip(values, values[1:]))
