"""Memory accounting and framework-overhead timing.

Memory is counted in elements, not bytes. Overhead follows a CPU-side
analogue of asynchronous kernel dispatch: every kernel body runs inside a
scoped timer, and whatever wall time an epoch spends outside those timers is
orchestration (the framework's share).
"""
from __future__ import annotations

import time
from contextlib import contextmanager, nullcontext
from contextvars import ContextVar
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping

__all__ = [
    "CATEGORIES",
    "STATIC_CATEGORIES",
    "LedgerError",
    "LedgerOutOfMemory",
    "ClockError",
    "MemoryLedger",
    "LedgerSnapshot",
    "LayoutCost",
    "layout_cost",
    "EpochTiming",
    "OverheadReport",
    "Profiler",
    "overhead_report",
    "kernel_scope",
]

CATEGORIES = (
    "topology",
    "edge_id",
    "coo_row",
    "dummy_edge_tensor",
    "shuffle_intermediate",
    "state_tensor",
    "activation",
    "degree_aux",
)
STATIC_CATEGORIES = ("topology", "edge_id", "coo_row")
LAYOUT_MODES = ("graphpy", "dgl_emulation")


class LedgerError(ValueError):
    pass


class LedgerOutOfMemory(MemoryError):
    """An allocation would exceed the ledger budget (or the host ran out)."""

    def __init__(self, category: str, requested: int, in_use: int, budget: int | None):
        self.category = category
        self.requested = requested
        self.in_use = in_use
        self.budget = budget
        limit = "host memory" if budget is None else f"budget of {budget}"
        super().__init__(f"[ledger:{category}] allocating {requested} elements with "
                         f"{in_use} in use exceeds {limit}")


class ClockError(RuntimeError):
    pass


@dataclass(frozen=True)
class LedgerSnapshot:
    current: Mapping[str, int]
    peak: Mapping[str, int]
    allocated: Mapping[str, int]

    @property
    def total(self) -> int:
        return sum(self.current.values())

    @property
    def static_total(self) -> int:
        return sum(self.current[c] for c in STATIC_CATEGORIES)

    def to_dict(self) -> dict:
        return {
            "current": dict(self.current),
            "peak": dict(self.peak),
            "allocated": dict(self.allocated),
            "total": self.total,
        }


class MemoryLedger:
    """Per-session element counts by category.

    ``record`` applies a signed delta. Besides the live count, the ledger
    keeps the per-category peak and the cumulative amount ever allocated, so
    transient buffers that were released still show up in reports.

    An optional ``budget`` caps the live total; crossing it raises
    :class:`LedgerOutOfMemory` before the count changes.
    """

    def __init__(self, budget: int | None = None):
        if budget is not None and budget < 0:
            raise LedgerError("budget must be non-negative")
        self.budget = budget
        self._current = dict.fromkeys(CATEGORIES, 0)
        self._peak = dict.fromkeys(CATEGORIES, 0)
        self._allocated = dict.fromkeys(CATEGORIES, 0)

    def record(self, category: str, delta: int) -> None:
        if category not in self._current:
            raise LedgerError(f"unknown ledger category {category!r}")
        delta = int(delta)
        new = self._current[category] + delta
        if new < 0:
            raise LedgerError(f"{category} would drop to {new} elements")
        if delta > 0 and self.budget is not None:
            in_use = sum(self._current.values())
            if in_use + delta > self.budget:
                raise LedgerOutOfMemory(category, delta, in_use, self.budget)
        self._current[category] = new
        if delta > 0:
            self._allocated[category] += delta
        self._peak[category] = max(self._peak[category], new)

    def release(self, category: str, count: int) -> None:
        self.record(category, -int(count))

    def release_all(self, category: str) -> None:
        self.record(category, -self._current[category])

    def __getitem__(self, category: str) -> int:
        return self._current[category]

    @property
    def total(self) -> int:
        return sum(self._current.values())

    def snapshot(self) -> LedgerSnapshot:
        return LedgerSnapshot(
            MappingProxyType(dict(self._current)),
            MappingProxyType(dict(self._peak)),
            MappingProxyType(dict(self._allocated)),
        )


@dataclass(frozen=True)
class LayoutCost:
    mode: str
    gnn_class: str
    vcount: int
    ecount: int
    static: Mapping[str, int]
    per_iteration: Mapping[str, int]

    @property
    def total(self) -> int:
        return sum(self.static.values())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "class": self.gnn_class,
            "vcount": self.vcount,
            "ecount": self.ecount,
            "static": dict(self.static),
            "per_iteration": dict(self.per_iteration),
            "total": self.total,
        }


def layout_cost(mode: str, vcount: int, ecount: int, gnn_class: str = "A") -> LayoutCost:
    """Closed-form storage cost of a graph layout, in elements.

    Row pointers are ``V + 1`` long, so the shared-topology layout costs
    ``(V+1) + 3E`` for edge-tensor models (class A) and ``(V+1) + E`` for
    vertex-only models (class B). The emulated separate-CSR/CSC/COO layout
    costs ``2(V+1) + 6E`` in both classes, plus the per-iteration transient
    buffers it needs.
    """
    mode = mode.replace("-", "_")
    if mode not in LAYOUT_MODES:
        raise ValueError(f"unknown layout mode {mode!r}")
    gnn_class = gnn_class.upper()
    if gnn_class not in ("A", "B"):
        raise ValueError(f"unknown GNN class {gnn_class!r}")
    if vcount < 0 or ecount < 0:
        raise ValueError("counts must be non-negative")
    v1 = vcount + 1
    static = dict.fromkeys(STATIC_CATEGORIES, 0)
    per_iter: dict[str, int] = {}
    if mode == "graphpy":
        static["topology"] = v1 + ecount
        if gnn_class == "A":
            static["coo_row"] = ecount
            static["edge_id"] = ecount
    else:
        # CSR (ptr, col, eid) + CSC (ptr, row, eid) + COO (row, col)
        static["topology"] = 2 * v1 + 2 * ecount
        static["edge_id"] = 2 * ecount
        static["coo_row"] = 2 * ecount
        if gnn_class == "A":
            per_iter["shuffle_intermediate"] = ecount
        else:
            per_iter["dummy_edge_tensor"] = ecount
            per_iter["degree_aux"] = vcount
    return LayoutCost(mode, gnn_class, vcount, ecount,
                      MappingProxyType(static), MappingProxyType(per_iter))


@dataclass(frozen=True)
class EpochTiming:
    epoch: int
    orchestration_ns: int
    kernel_ns: int

    def __post_init__(self):
        if self.orchestration_ns < 0 or self.kernel_ns < 0:
            raise ClockError(f"negative timing in epoch {self.epoch}")

    @property
    def wall_ns(self) -> int:
        return self.orchestration_ns + self.kernel_ns

    @property
    def overhead_ratio(self) -> float:
        wall = self.wall_ns
        return self.orchestration_ns / wall if wall else 1.0

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "orchestration_ns": self.orchestration_ns,
            "kernel_ns": self.kernel_ns,
            "overhead_ratio": self.overhead_ratio,
        }


_ACTIVE: ContextVar["Profiler | None"] = ContextVar("sparsegnn_profiler", default=None)


def kernel_scope(name: str):
    """Time a kernel body against the profiler active in this context, if any."""
    prof = _ACTIVE.get()
    return nullcontext() if prof is None else prof.kernel(name)


class Profiler:
    """Scoped timers separating kernel self-time from the rest of an epoch.

    Kernel scopes do not nest; an inner scope inside an outer one is folded
    into the outer one. While an epoch is open the profiler is the active one
    for its context, so compiled kernel bodies report to it via
    :func:`kernel_scope`.
    """

    def __init__(self, clock=time.perf_counter_ns):
        self._clock = clock
        self._depth = 0
        self._kernel_ns = 0
        self._epoch_start: int | None = None
        self._epoch_index = 0
        self.timings: list[EpochTiming] = []
        self.by_kernel: dict[str, int] = {}

    def _now(self, since: int) -> int:
        now = self._clock()
        if now < since:
            raise ClockError(f"clock went backwards ({now} < {since})")
        return now

    @contextmanager
    def kernel(self, name: str):
        if self._depth:
            yield
            return
        self._depth += 1
        t0 = self._clock()
        try:
            yield
        finally:
            dt = self._now(t0) - t0
            self._depth -= 1
            self._kernel_ns += dt
            self.by_kernel[name] = self.by_kernel.get(name, 0) + dt

    @contextmanager
    def epoch(self, index: int | None = None):
        if self._epoch_start is not None:
            raise RuntimeError("epochs do not nest")
        k = self._epoch_index if index is None else index
        self._kernel_ns = 0
        token = _ACTIVE.set(self)
        self._epoch_start = self._clock()
        try:
            yield
        finally:
            _ACTIVE.reset(token)
            start = self._epoch_start
            self._epoch_start = None
            wall = self._now(start) - start
            kern = min(self._kernel_ns, wall)
            self.timings.append(EpochTiming(k, wall - kern, kern))
            self._epoch_index = k + 1

    @contextmanager
    def activate(self):
        token = _ACTIVE.set(self)
        try:
            yield self
        finally:
            _ACTIVE.reset(token)

    def profile_epoch(self, step, index: int | None = None) -> EpochTiming:
        """Run ``step()`` as one epoch and return its timing."""
        with self.epoch(index):
            step()
        return self.timings[-1]


@dataclass(frozen=True)
class OverheadReport:
    framework_overhead_ns: int
    kernel_ns: int
    ratios: tuple[float, ...]

    @property
    def wall_ns(self) -> int:
        return self.framework_overhead_ns + self.kernel_ns

    @property
    def overhead_ratio(self) -> float:
        return self.framework_overhead_ns / self.wall_ns if self.wall_ns else 1.0

    def to_dict(self) -> dict:
        return {
            "framework_overhead_ns": self.framework_overhead_ns,
            "kernel_ns": self.kernel_ns,
            "overhead_ratio": self.overhead_ratio,
            "per_epoch_ratio": list(self.ratios),
        }


def overhead_report(timings: Iterable[EpochTiming]) -> OverheadReport:
    """Framework overhead summed over epochs, plus per-epoch ratios."""
    timings = list(timings)
    return OverheadReport(
        sum(t.orchestration_ns for t in timings),
        sum(t.kernel_ns for t in timings),
        tuple(t.overhead_ratio for t in timings),
    )
