import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparsegnn import kernels as K
from sparsegnn.graph_store import from_edges
from sparsegnn.instrumentation import MemoryLedger
from sparsegnn.oracle import DenseBackend, check_close, dense_sddmm, dense_spmm, densify

from conftest import T4_EDGES, random_graph, symmetric_graphs

DB = DenseBackend()


def test_t4_gspmm_v(t4):
    x = np.arange(4.0)
    assert K.gspmm_v(t4, x).tolist() == [3.0, 2.0, 4.0, 2.0]
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert K.gspmm_v(t4, x).tolist() == [5.0, 4.0, 7.0, 3.0]
    np.testing.assert_allclose(K.gspmm_v(t4, x, norm_by_degree=True), [2.5, 2.0, 7 / 3, 3.0])


def test_t4_reductions(t4):
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert K.gspmm_v(t4, x, "max").tolist() == [3.0, 3.0, 4.0, 3.0]
    assert K.gspmm_v(t4, x, "min").tolist() == [2.0, 1.0, 1.0, 3.0]
    w = np.arange(8.0)
    assert K.gspmm_e(t4, w, "max").tolist() == [1.0, 3.0, 6.0, 7.0]
    assert K.gspmm_e(t4, w, "sum").tolist() == [1.0, 5.0, 15.0, 7.0]


def test_t4_eshuffle_and_sddmm(t4):
    assert K.e_shuffle(t4, np.arange(8.0)).tolist() == [2, 4, 0, 5, 1, 3, 7, 6]
    x = np.array([[1.0], [1.0], [2.0], [2.0]])
    # rows (0,0,1,1,2,2,2,3) x cols (1,2,0,2,0,1,3,2)
    assert K.gsddmm_vv(t4, np.ones((4, 1)), x).ravel().tolist() == [1, 2, 1, 2, 1, 1, 2, 2]


def test_empty_rows_reduce_to_zero():
    g = from_edges(T4_EDGES, vcount=6)
    out = K.gspmm_v(g, np.arange(6.0), "max")
    assert out[4] == 0 and out[5] == 0
    assert K.gspmm_e(g, np.ones(g.ecount), "min")[5] == 0


def test_single_self_loop_softmax_is_one():
    g = from_edges([(0, 0)], vcount=1)
    assert K.edge_softmax(g, np.array([3.7])).tolist() == [1.0]


def test_edge_softmax_rows_sum_to_one(t4):
    s = K.edge_softmax(t4, np.random.default_rng(0).standard_normal((8, 3)) * 50)
    np.testing.assert_allclose(K.gspmm_e(t4, s, "sum"), 1.0, atol=1e-14)


def _instance(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng)
    k = int(rng.choice([1, 4, 16]))
    h = int(rng.choice([1, 3]))
    return rng, g, k, h


@given(st.integers(0, 2**31))
def test_vertex_kernels_match_dense(seed):
    rng, g, k, _ = _instance(seed)
    x = rng.standard_normal((g.vcount, k))
    m = densify(g)
    assert check_close(K.gspmm_v(g, x), dense_spmm(m, x))
    deg = np.maximum(m.sum(axis=1), 1.0)[:, None]
    assert check_close(K.gspmm_v(g, x, norm_by_degree=True), dense_spmm(m, x) / deg)
    for red in ("max", "min"):
        assert check_close(K.gspmm_v(g, x, red), DB.gspmm_v(g, x, red))


@given(st.integers(0, 2**31))
def test_edge_kernels_match_dense(seed):
    rng, g, k, h = _instance(seed)
    w = rng.standard_normal((g.ecount, h))
    x = rng.standard_normal((g.vcount, h, k))
    xv = rng.uniform(0.5, 2, (g.vcount, h))
    assert check_close(K.gspmm_ve(g, w, x), DB.gspmm_ve(g, w, x))
    assert check_close(K.gspmm_ve_t(g, w, x), DB.gspmm_ve_t(g, w, x))
    for red in ("sum", "max", "min"):
        for tr in (False, True):
            assert check_close(K.gspmm_e(g, w, red, tr), DB.gspmm_e(g, w, red, tr))
    assert check_close(K.gsddmm_vv(g, x, x[::-1].copy()), dense_sddmm(g, x, x[::-1]))
    for op in ("add", "sub", "mul", "div"):
        for side in ("row", "col"):
            assert check_close(K.gsddmm_ve(g, xv, w, op, side), DB.gsddmm_ve(g, xv, w, op, side))
    assert check_close(K.gsddmm_vv_elem(g, xv, xv * 2, "add"),
                       DB.gsddmm_vv_elem(g, xv, xv * 2, "add"))
    assert check_close(K.e_shuffle(g, w), DB.e_shuffle(g, w))
    assert check_close(K.edge_softmax(g, w), DB.edge_softmax(g, w))


@given(symmetric_graphs(), st.integers(0, 2**31))
def test_transpose_equals_shuffle_composition_bitwise(g, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((g.ecount, 2))
    x = rng.standard_normal((g.vcount, 2, 5))
    assert np.array_equal(K.gspmm_ve_t(g, w, x), K.gspmm_ve(g, K.e_shuffle(g, w), x))


@given(symmetric_graphs(), st.integers(0, 2**31))
def test_unit_weights_equal_unweighted_bitwise(g, seed):
    x = np.random.default_rng(seed).standard_normal((g.vcount, 7))
    assert np.array_equal(K.gspmm_ve(g, np.ones(g.ecount), x), K.gspmm_v(g, x))


@given(symmetric_graphs(), st.integers(0, 2**31))
def test_fused_norm_equals_inplace_norm_bitwise(g, seed):
    x = np.random.default_rng(seed).standard_normal((g.vcount, 3))
    unfused = K.gspmm_v(g, x)
    K.norm_by_degree_inplace(g, unfused)
    assert np.array_equal(K.gspmm_v(g, x, norm_by_degree=True), unfused)


@given(symmetric_graphs(), st.integers(0, 2**31))
def test_sddmm_chunking_invariant(g, seed):
    rng = np.random.default_rng(seed)
    xr, xc = rng.standard_normal((2, g.vcount, 3, 4))
    ref = K.gsddmm_vv(g, xr, xc, chunk_size=1)
    for chunk in (8, 32, 257):
        assert np.array_equal(K.gsddmm_vv(g, xr, xc, chunk_size=chunk), ref)


def test_float32_preserved(t4):
    x = np.ones((4, 2), dtype=np.float32)
    assert K.gspmm_v(t4, x).dtype == np.float32
    assert K.gspmm_ve(t4, np.ones(8, dtype=np.float32), x).dtype == np.float32


def test_shape_errors(t4):
    with pytest.raises(K.ShapeError):
        K.gspmm_v(t4, np.ones(3))
    with pytest.raises(K.ShapeError):
        K.gspmm_ve(t4, np.ones(7), np.ones(4))
    with pytest.raises(K.ShapeError):
        K.gspmm_ve(t4, np.ones((8, 3)), np.ones((4, 2)))
    with pytest.raises(K.ShapeError):
        K.gsddmm_vv(t4, np.ones((4, 2)), np.ones((4, 3)))
    with pytest.raises(ValueError):
        K.gspmm_v(t4, np.ones(4), "mean")
    with pytest.raises(ValueError):
        K.gspmm_v(t4, np.ones(4), "max", norm_by_degree=True)
    with pytest.raises(ValueError):
        K.gsddmm_vv(t4, np.ones(4), np.ones(4), chunk_size=0)
    with pytest.raises(ValueError):
        K.gsddmm_ve(t4, np.ones(4), np.ones(8), "pow")


def test_missing_edge_ids():
    g = from_edges(T4_EDGES, need_edge_ids=False)
    for call in (lambda: K.gspmm_ve_t(g, np.ones(8), np.ones(4)),
                 lambda: K.e_shuffle(g, np.ones(8)),
                 lambda: K.gspmm_e(g, np.ones(8), transposed=True)):
        with pytest.raises(K.MissingEdgeIdsError):
            call()
    # forward kernels never touch the edge IDs
    assert K.gspmm_ve(g, np.ones(8), np.ones(4)).tolist() == [2, 2, 3, 1]


def test_norm_inplace_rejects_views(t4):
    with pytest.raises(ValueError):
        K.norm_by_degree_inplace(t4, np.ones((2, 4)).T)


def test_e_shuffle_charges_ledger(t4):
    led = MemoryLedger()
    K.e_shuffle(t4, np.ones(8), ledger=led)
    assert led["shuffle_intermediate"] == 8
    K.e_shuffle(t4, np.ones((8, 3)), ledger=led)
    assert led["shuffle_intermediate"] == 8 + 24


def test_inputs_not_mutated(t4):
    x = np.random.default_rng(1).standard_normal((4, 2))
    w = np.random.default_rng(2).standard_normal(8)
    xc, wc = x.copy(), w.copy()
    K.gspmm_v(t4, x, norm_by_degree=True)
    K.gspmm_ve_t(t4, w, x)
    K.edge_softmax(t4, w)
    assert np.array_equal(x, xc) and np.array_equal(w, wc)
