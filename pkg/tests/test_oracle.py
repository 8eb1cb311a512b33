import ast
import inspect

import numpy as np
import pytest

from sparsegnn import oracle
from sparsegnn.graph_store import from_edges
from sparsegnn.oracle import (DensifyCapError, check_close, dense_sddmm, dense_spmm,
                              dense_spmm_t, densify, finite_diff, rel_error)


def test_densify_t4(t4):
    m = densify(t4)
    assert m.sum() == 8 and np.array_equal(m, m.T)
    assert m[2].tolist() == [1, 1, 0, 1]


def test_densify_weighted_uses_csr_slots(t4):
    m = densify(t4, np.arange(8.0))
    assert m[0, 1] == 0 and m[0, 2] == 1 and m[3, 2] == 7
    stack = densify(t4, np.ones((8, 3)))
    assert stack.shape == (3, 4, 4)


def test_densify_edge_cases():
    assert densify(from_edges(np.zeros((0, 2), dtype=int), vcount=3)).sum() == 0
    loops = from_edges([(i, i) for i in range(4)], vcount=4)
    assert np.array_equal(densify(loops), np.eye(4))
    with pytest.raises(DensifyCapError):
        densify(from_edges([(0, 1)], vcount=2000))


def test_dense_products(t4):
    m = densify(t4)
    x = np.array([1.0, 2.0, 3.0, 4.0])
    assert dense_spmm(m, x).tolist() == [5, 4, 7, 3]
    assert np.array_equal(dense_spmm_t(m, x), dense_spmm(m, x))
    assert not dense_spmm(m, np.zeros((4, 2))).any()
    with pytest.raises(ValueError):
        dense_spmm(m, np.ones(3))
    xr = np.ones((4, 1))
    assert dense_sddmm(t4, xr, np.array([[1.0], [1], [2], [2]])).ravel().tolist() == \
        [1, 2, 1, 2, 1, 1, 2, 2]


def test_finite_diff_basics():
    x = np.random.default_rng(0).standard_normal(6)
    assert np.allclose(finite_diff(np.sum, x), 1.0)
    assert np.allclose(finite_diff(lambda v: 0.5 * np.sum(v**2), x), x, atol=1e-8)
    a = np.arange(6.0)
    # central differences are exact on quadratics up to rounding
    g = finite_diff(lambda v: float(v @ v + a @ v), x)
    assert np.allclose(g, 2 * x + a, atol=1e-7)


def test_finite_diff_leaves_input_alone():
    x = np.array([1.0, -2.0])
    finite_diff(np.sum, x)
    assert x.tolist() == [1.0, -2.0]


def test_rel_error():
    assert rel_error([0, 0], [0, 0]) == 0.0
    assert rel_error([1, 0], [1, 0]) == 0.0
    assert rel_error([2, 0], [1, 0]) == pytest.approx(0.5)


def test_check_close_reports():
    a = np.zeros((2, 3))
    assert check_close(a, a.copy())
    b = a.copy()
    b[1, 2] = 2e-10
    res = check_close(a, b, atol=1e-10)
    assert not res and res.index == (1, 2) and res.max_abs_err == pytest.approx(2e-10)
    b[0, 0] = np.nan
    assert not check_close(b, b)
    assert not check_close(a, np.zeros(6))


def test_oracle_shares_no_code_with_kernels():
    tree = ast.parse(inspect.getsource(oracle))
    names = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            names.add(node.module or "")
            names.update(a.name for a in node.names)
        elif isinstance(node, ast.Import):
            names.update(a.name for a in node.names)
    assert not any("kernels" in n or n == "dense" for n in names)


def test_rel_error_floor():
    assert rel_error([2e-16], [0.0]) == 1.0
    assert rel_error([2e-16], [0.0], floor=1e-8) < 1e-7
    assert rel_error([2.0], [1.0], floor=1e-8) == pytest.approx(0.5)
