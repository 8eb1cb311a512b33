import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsegnn import kernels as K
from sparsegnn.datasets import NodeDataset
from sparsegnn.graph_store import from_edges
from sparsegnn.instrumentation import (CATEGORIES, ClockError, EpochTiming, LedgerError,
                                       LedgerOutOfMemory, MemoryLedger, Profiler, kernel_scope,
                                       layout_cost, overhead_report)
from sparsegnn.models import TrainConfig, train

from conftest import T4_EDGES


class FakeClock:
    def __init__(self, ticks):
        self.ticks = list(ticks)

    def __call__(self):
        return self.ticks.pop(0)


def test_layout_cost_t4_values():
    assert layout_cost("graphpy", 4, 8, "A").total == 29
    assert layout_cost("graphpy", 4, 8, "B").total == 13
    assert layout_cost("dgl_emulation", 4, 8, "A").total == 58
    assert layout_cost("dgl-emulation", 4, 8, "B").total == 58


def test_layout_cost_per_iteration_lines():
    a = layout_cost("dgl_emulation", 4, 8, "A").per_iteration
    b = layout_cost("dgl_emulation", 4, 8, "B").per_iteration
    assert dict(a) == {"shuffle_intermediate": 8}
    assert dict(b) == {"dummy_edge_tensor": 8, "degree_aux": 4}
    assert not layout_cost("graphpy", 4, 8, "B").per_iteration


def test_storage_ratio_at_100_vertices():
    dgl = layout_cost("dgl_emulation", 100, 10_000).total
    gp = layout_cost("graphpy", 100, 10_000).total
    assert (dgl, gp) == (60_202, 30_101)
    assert dgl / gp == 2.0


@given(st.integers(0, 10**9), st.integers(0, 10**10), st.sampled_from("AB"))
def test_layout_formulas(v, e, cls):
    gp = layout_cost("graphpy", v, e, cls).total
    dgl = layout_cost("dgl_emulation", v, e, cls).total
    assert gp == (v + 1) + (3 * e if cls == "A" else e)
    assert dgl == 2 * (v + 1) + 6 * e
    assert gp < dgl


def test_layout_cost_errors():
    with pytest.raises(ValueError):
        layout_cost("csr", 1, 1)
    with pytest.raises(ValueError):
        layout_cost("graphpy", 1, 1, "C")
    with pytest.raises(ValueError):
        layout_cost("graphpy", -1, 1)


def test_ledger_record_and_snapshot():
    led = MemoryLedger()
    led.record("activation", 10)
    snap = led.snapshot()
    led.record("activation", 5)
    assert snap.current["activation"] == 10  # snapshot is a frozen copy
    led.release("activation", 12)
    s2 = led.snapshot()
    assert s2.current["activation"] == 3 and s2.peak["activation"] == 15
    assert s2.allocated["activation"] == 15
    assert s2.total == sum(s2.current.values())
    with pytest.raises(TypeError):
        s2.current["activation"] = 0
    assert set(s2.to_dict()["current"]) == set(CATEGORIES)


def test_ledger_errors():
    led = MemoryLedger()
    with pytest.raises(LedgerError):
        led.record("activation", -1)
    with pytest.raises(LedgerError):
        led.record("heap", 1)


def test_ledger_budget():
    led = MemoryLedger(budget=10)
    led.record("topology", 8)
    with pytest.raises(LedgerOutOfMemory) as info:
        led.record("activation", 3)
    assert info.value.category == "activation" and "[ledger:activation]" in str(info.value)
    assert led.total == 8
    assert isinstance(info.value, MemoryError)


def _t4_dataset():
    g = from_edges(T4_EDGES, vcount=4)
    x = np.eye(4)
    y = np.array([0, 0, 1, 1])
    train_m = np.ones(4, bool)
    none = np.zeros(4, bool)
    return NodeDataset(g, x, y, train_m, none, none.copy(), 2)


def test_training_ledger_conservation():
    ds = _t4_dataset()
    for model, cls in (("gcn", "B"), ("gat", "A")):
        for layout in ("graphpy", "dgl_emulation"):
            led = MemoryLedger()
            train(ds, TrainConfig(model=model, epochs=3, layout=layout), ledger=led)
            snap = led.snapshot()
            cost = layout_cost(layout, 4, 8, cls)
            assert {c: snap.current[c] for c in cost.static} == dict(cost.static)
            assert snap.total == cost.total
            if layout == "graphpy":
                assert snap.allocated["dummy_edge_tensor"] == 0
                assert snap.allocated["shuffle_intermediate"] == 0


def test_training_oom_is_ledger_tagged():
    ds = _t4_dataset()
    with pytest.raises(LedgerOutOfMemory, match="ledger:"):
        train(ds, TrainConfig(model="gcn", epochs=1), ledger=MemoryLedger(budget=40))


def test_epoch_timing_fields():
    t = EpochTiming(0, 30, 70)
    assert t.wall_ns == 100 and t.overhead_ratio == 0.3
    assert EpochTiming(1, 0, 0).overhead_ratio == 1.0
    with pytest.raises(ClockError):
        EpochTiming(0, -1, 5)


def test_profiler_with_fake_clock():
    # epoch start 0, kernel 10..40, nested kernel folded, epoch end 100
    prof = Profiler(clock=FakeClock([0, 10, 40, 100]))
    with prof.epoch():
        with prof.kernel("a"):
            with prof.kernel("inner"):
                pass
    t = prof.timings[0]
    assert (t.kernel_ns, t.orchestration_ns) == (30, 70)
    assert prof.by_kernel == {"a": 30}


def test_clock_going_backwards():
    prof = Profiler(clock=FakeClock([50, 10]))
    with pytest.raises(ClockError):
        with prof.epoch():
            pass


def test_epochs_do_not_nest():
    prof = Profiler()
    with pytest.raises(RuntimeError):
        with prof.epoch():
            with prof.epoch():
                pass


def test_kernel_scope_reports_to_active_profiler(t4):
    prof = Profiler()
    K.gspmm_v(t4, np.ones(4))  # no profiler active: untimed
    with prof.epoch():
        K.gspmm_v(t4, np.ones(4))
        K.e_shuffle(t4, np.ones(8))
    assert set(prof.by_kernel) == {"gspmm_v", "e_shuffle"}
    with kernel_scope("noop"):
        pass
    assert "noop" not in prof.by_kernel


def test_zero_kernel_epoch_is_all_overhead():
    prof = Profiler()
    t = prof.profile_epoch(lambda: sum(range(1000)))
    assert t.kernel_ns == 0 and t.overhead_ratio == 1.0


def test_overhead_report_additivity():
    ts = [EpochTiming(i, 10 * i + 5, 100) for i in range(5)]
    rep = overhead_report(ts)
    assert rep.framework_overhead_ns == sum(t.orchestration_ns for t in ts)
    assert rep.kernel_ns == 500
    assert rep.ratios == tuple(t.overhead_ratio for t in ts)
    assert overhead_report([]).overhead_ratio == 1.0


def test_training_records_one_timing_per_epoch():
    prof = Profiler()
    rep = train(_t4_dataset(), TrainConfig(epochs=4), profiler=prof)
    assert [t.epoch for t in rep.timings] == [0, 1, 2, 3]
    assert all(0.0 <= t.overhead_ratio <= 1.0 for t in rep.timings)
    assert "gspmm_v" in prof.by_kernel
