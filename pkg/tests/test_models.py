import numpy as np
import pytest

from sparsegnn.autodiff import Tape, Variable
from sparsegnn.datasets import (NodeDataset, erdos_renyi_graph, random_split, read_features,
                                read_int_lines, sbm_dataset, write_features, write_int_lines)
from sparsegnn.graph_store import from_edges
from sparsegnn.kernels import MissingEdgeIdsError
from sparsegnn.models import Model, TrainConfig, accuracy, gat_layer, gcn_layer, train
from sparsegnn.oracle import DenseBackend, densify

from conftest import T4_EDGES


@pytest.fixture(scope="module")
def sbm():
    return sbm_dataset()


def test_accuracy_rules():
    labels = np.array([0, 1, 2, 1])
    mask = np.ones(4, bool)
    assert accuracy(np.eye(3)[labels], labels, mask) == 1.0
    # ties go to the lowest class index
    assert accuracy(np.zeros((4, 3)), labels, mask) == 0.25
    logits = np.array([[0.1, 0.9], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
    assert accuracy(logits, np.array([1, 1, 1, 0]), np.array([1, 1, 0, 1], bool)) == 2 / 3
    with pytest.raises(ValueError):
        accuracy(logits, np.array([1, 1, 1, 0]), np.zeros(4, bool))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(model="sage")
    with pytest.raises(ValueError):
        TrainConfig(dropout=1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)
    assert TrainConfig(model="gin").hidden_size == 64
    assert TrainConfig(model="gat").dropout > 0


def test_every_layer_has_a_bias(sbm):
    for name in ("gcn", "gin", "gat"):
        model = Model(TrainConfig(model=name, heads=2), 16, 2)
        for layer in model.layers:
            assert any(k.startswith("b") for k in layer)


def test_gcn_layer_matches_dense(t4):
    rng = np.random.default_rng(0)
    h, w, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 2)), rng.standard_normal(2)
    out = gcn_layer(Tape(), t4, Variable(h), Variable(w), Variable(b)).value
    a = densify(t4)
    ref = (a @ (h @ w)) / np.maximum(a.sum(1), 1)[:, None] + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


def _dense_gat(a, h, w, a_src, a_dst, b, slope=0.2):
    heads, feat = a_src.shape
    z = (h @ w).reshape(len(h), heads, feat)
    outs = []
    for k in range(heads):
        el = z[:, k] @ a_src[k]
        er = z[:, k] @ a_dst[k]
        e = el[:, None] + er[None, :]
        e = np.where(e > 0, e, slope * e)
        e = np.where(a > 0, e, -np.inf)
        att = np.exp(e - e.max(1, keepdims=True))
        att = att / att.sum(1, keepdims=True)
        outs.append(att @ z[:, k])
    return np.concatenate(outs, axis=1) + b


@pytest.mark.parametrize("heads", [1, 3])
def test_gat_layer_matches_dense_attention(t4, heads):
    rng = np.random.default_rng(heads)
    h = rng.standard_normal((4, 3))
    w = rng.standard_normal((3, heads * 2))
    a_src, a_dst = rng.standard_normal((2, heads, 2))
    b = rng.standard_normal(heads * 2)
    out = gat_layer(Tape(), t4, *(Variable(v) for v in (h, w, a_src, a_dst, b))).value
    np.testing.assert_allclose(out, _dense_gat(densify(t4), h, w, a_src, a_dst, b), atol=1e-10)


def test_gat_single_self_loop_passes_features_through():
    g = from_edges([(0, 0)], vcount=1)
    rng = np.random.default_rng(0)
    h, w = rng.standard_normal((1, 3)), rng.standard_normal((3, 4))
    a = rng.standard_normal((2, 2))
    out = gat_layer(Tape(), g, Variable(h), Variable(w), Variable(a), Variable(a),
                    Variable(np.zeros(4))).value
    np.testing.assert_allclose(out, h @ w, atol=1e-14)


def test_training_is_deterministic(sbm):
    cfg = TrainConfig(model="gcn", epochs=15)
    a, b = train(sbm, cfg), train(sbm, cfg)
    assert a.losses == b.losses and a.train_acc == b.train_acc


@pytest.mark.parametrize("model,heads", [("gcn", 1), ("gin", 1), ("gat", 2)])
def test_dense_twin_matches(model, heads):
    ds = sbm_dataset(n=96, seed=3)
    cfg = TrainConfig(model=model, heads=heads, epochs=12)
    sparse = train(ds, cfg).losses
    dense = train(ds, cfg, backend=DenseBackend()).losses
    assert max(abs(x - y) for x, y in zip(sparse, dense)) < 1e-6


def test_gcn_learns_sbm(sbm):
    rep = train(sbm, TrainConfig(model="gcn", epochs=200))
    assert rep.final_train_acc >= 0.95
    assert rep.losses[-1] < rep.losses[0]
    assert len(rep.series()) == 200 and rep.to_dict()["ledger"]["total"] > 0


def test_zero_epochs_reports_initial_accuracy(sbm):
    rep = train(sbm, TrainConfig(epochs=0))
    assert rep.losses == [] and len(rep.train_acc) == 1 and rep.timings == []


def test_gat_needs_edge_ids():
    ds = sbm_dataset(n=40, need_edge_ids=False)
    with pytest.raises(MissingEdgeIdsError):
        train(ds, TrainConfig(model="gat", epochs=1))
    train(ds, TrainConfig(model="gcn", epochs=1))


def test_weight_decay_adds_penalty(sbm):
    plain = train(sbm, TrainConfig(epochs=1)).losses[0]
    decayed = train(sbm, TrainConfig(epochs=1, weight_decay=0.1)).losses[0]
    assert decayed > plain


def test_erdos_renyi_slot_count():
    g = erdos_renyi_graph(100, 1000, seed=1)
    assert g.ecount == 1000 and g.has_edge_ids
    assert np.all(g.coo_rows != g.col_ids)
    assert erdos_renyi_graph(100, 1000, seed=1) == g
    with pytest.raises(ValueError):
        erdos_renyi_graph(3, 100)


def test_sbm_structure(sbm):
    assert sbm.graph.vcount == 200 and sbm.num_classes == 2
    lab = sbm.labels
    same = lab[sbm.graph.coo_rows] == lab[sbm.graph.col_ids]
    assert same.mean() > 0.8


def test_random_split_partitions():
    masks = random_split(50, 0)
    total = sum(m.astype(int) for m in masks)
    assert np.all(total == 1) and masks[0].sum() == 30


def test_dataset_validation():
    g = from_edges(T4_EDGES)
    m = np.ones(4, bool)
    with pytest.raises(ValueError):
        NodeDataset(g, np.ones((3, 2)), np.zeros(4), m, m, m, 2)
    with pytest.raises(ValueError):
        NodeDataset(g, np.ones((4, 2)), np.full(4, 2), m, m, m, 2)
    with pytest.warns(UserWarning, match="overlap"):
        NodeDataset(g, np.ones((4, 2)), np.zeros(4), m, m, m, 2)


def test_sidecar_round_trip(tmp_path):
    x = np.random.default_rng(0).standard_normal((5, 3)).astype(np.float32)
    write_features(tmp_path / "f.bin", x)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:8] == (5).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.array_equal(read_features(tmp_path / "f.bin"), x)
    write_int_lines(tmp_path / "l.txt", [2, 0, 1])
    assert (tmp_path / "l.txt").read_text() == "2\n0\n1\n"
    assert read_int_lines(tmp_path / "l.txt").tolist() == [2, 0, 1]
