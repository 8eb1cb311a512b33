import pytest

from sparsegnn.pitfalls import (GRAD_TOL, demo_eval_p3, demo_sys_p1, demo_sys_p2, demo_sys_p3,
                                ring_graph, run_demo, t4_graph)


def test_skipped_state_is_caught():
    res = demo_sys_p1()
    assert res.ok and "mask" in res.metrics["error"]


def test_untransposed_backward_is_visible():
    res = demo_sys_p2()
    assert res.ok
    assert res.metrics["pitfall_rel_err"] > 0.1
    assert res.metrics["correct_rel_err"] < GRAD_TOL


def test_normalization_order_on_t4():
    res = demo_sys_p3(t4_graph())
    assert res.ok and not res.metrics["uniform_degree"]
    assert res.metrics["pitfall_rel_err"] > 0.1


def test_normalization_order_hidden_on_regular_graph():
    res = demo_sys_p3(ring_graph(8))
    assert res.ok and res.metrics["uniform_degree"]
    assert res.metrics["pitfall_rel_err"] < GRAD_TOL


def test_eval_demo_structure():
    res = demo_eval_p3(vcount=200, ecount=2000, feat=4, iters=3)
    m = res.metrics
    assert m["outputs_identical"] and m["ecount"] == 2000
    assert 0 < m["slowdown"] < float("inf") and m["native_median_ns"] > 0
    assert res.ok == (m["slowdown"] > 1.0)
    with pytest.raises(ValueError):
        demo_eval_p3(vcount=10, ecount=20, iters=0)


def test_run_demo_dispatch():
    assert run_demo("sys-p1").which == "sys-p1"
    assert run_demo("sys-p3", g=ring_graph(6)).ok
    with pytest.raises(ValueError, match="unknown demo"):
        run_demo("sys-p7")
    assert set(run_demo("sys-p2").to_dict()) == {"which", "ok", "summary", "metrics"}
