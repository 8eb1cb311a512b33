"""GCN, GIN and GAT layers and a full-batch node-classification trainer."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .autodiff import Optimizer, Tape, Variable, parameter
from .datasets import NodeDataset
from .graph_store import UnifiedGraph
from .instrumentation import (EpochTiming, LedgerOutOfMemory, LedgerSnapshot, MemoryLedger,
                              Profiler, layout_cost, overhead_report)

__all__ = [
    "MODELS",
    "TrainConfig",
    "TrainReport",
    "gcn_layer",
    "gin_layer",
    "gat_layer",
    "Model",
    "build_model",
    "accuracy",
    "train",
]

log = logging.getLogger(__name__)

MODELS = ("gcn", "gin", "gat")
_DEFAULT_HIDDEN = {"gcn": 16, "gat": 16, "gin": 64}


@dataclass(frozen=True)
class TrainConfig:
    model: str = "gcn"
    heads: int = 1
    hidden: int | None = None
    layers: int = 2
    epochs: int = 200
    lr: float = 0.01
    dropout: float = 0.5
    seed: int = 0
    layout: str = "graphpy"
    pitfalls: frozenset = frozenset()
    slope: float = 0.2
    weight_decay: float = 0.0
    eval_every: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.heads < 1 or self.layers < 1 or self.epochs < 0:
            raise ValueError("heads and layers must be >= 1, epochs >= 0")
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        object.__setattr__(self, "pitfalls", frozenset(self.pitfalls))

    @property
    def hidden_size(self) -> int:
        return self.hidden if self.hidden is not None else _DEFAULT_HIDDEN[self.model]

    @property
    def gnn_class(self) -> str:
        return "A" if self.model == "gat" else "B"


def gcn_layer(tape: Tape, g: UnifiedGraph, h: Variable, w: Variable, b: Variable) -> Variable:
    """``D^-1 A (h W) + b`` with clamped degrees, normalization fused into the aggregation."""
    return tape.bias_add(tape.spmm_v(g, tape.matmul(h, w), norm=True), b)


def gin_layer(tape: Tape, g: UnifiedGraph, h: Variable, eps: Variable, mlp) -> Variable:
    """``MLP((1 + eps) h + sum_{neighbors} h)``; ``mlp`` is ``(W1, b1, W2, b2)``."""
    w1, b1, w2, b2 = mlp
    agg = tape.add(tape.scale_1p(h, eps), tape.spmm_v(g, h, norm=False))
    hidden = tape.relu(tape.bias_add(tape.matmul(agg, w1), b1))
    return tape.bias_add(tape.matmul(hidden, w2), b2)


def gat_layer(tape: Tape, g: UnifiedGraph, h: Variable, w: Variable, a_src: Variable,
              a_dst: Variable, b: Variable, slope: float = 0.2, p: float = 0.0,
              seed: int = 0, training: bool = False) -> Variable:
    """Additive multi-head attention layer; heads are concatenated.

    ``w`` is ``[K, H*F]``, ``a_src``/``a_dst`` are ``[H, F]``. The logit of
    slot ``j`` is ``leaky_relu(<a_src, z[row_j]> + <a_dst, z[col_j]>)``,
    normalized over each row by edge softmax.
    """
    heads, feat = a_src.shape
    z = tape.reshape(tape.matmul(h, w), (g.vcount, heads, feat))
    el = tape.head_dot(z, a_src)
    er = tape.head_dot(z, a_dst)
    logits = tape.leaky_relu(tape.sddmm_vv_add(g, el, er), slope)
    alpha = tape.edge_softmax(g, logits)
    alpha = tape.dropout(alpha, p, seed, training)
    out = tape.spmm_ve(g, alpha, z)
    return tape.bias_add(tape.reshape(out, (g.vcount, heads * feat)), b)


def _glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Model:
    """Parameters plus a forward function for one of the three architectures."""

    def __init__(self, config: TrainConfig, in_dim: int, num_classes: int):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.params: list[Variable] = []
        self.layers: list[dict] = []
        hid = config.hidden_size
        dims = [in_dim] + [hid] * (config.layers - 1)
        for i in range(config.layers):
            last = i == config.layers - 1
            d_in = dims[i]
            if config.model == "gcn":
                d_out = num_classes if last else hid
                layer = {"w": parameter(_glorot(rng, d_in, d_out), f"gcn{i}.w"),
                         "b": parameter(np.zeros(d_out), f"gcn{i}.b")}
            elif config.model == "gin":
                d_out = num_classes if last else hid
                layer = {"eps": parameter(np.zeros(1), f"gin{i}.eps"),
                         "w1": parameter(_glorot(rng, d_in, hid), f"gin{i}.w1"),
                         "b1": parameter(np.zeros(hid), f"gin{i}.b1"),
                         "w2": parameter(_glorot(rng, hid, d_out), f"gin{i}.w2"),
                         "b2": parameter(np.zeros(d_out), f"gin{i}.b2")}
            else:
                heads = 1 if last else config.heads
                feat = num_classes if last else hid
                if i > 0:
                    d_in = hid * config.heads
                layer = {"w": parameter(_glorot(rng, d_in, heads * feat), f"gat{i}.w"),
                         "a_src": parameter(_glorot(rng, feat, 1, (heads, feat)), f"gat{i}.a_src"),
                         "a_dst": parameter(_glorot(rng, feat, 1, (heads, feat)), f"gat{i}.a_dst"),
                         "b": parameter(np.zeros(heads * feat), f"gat{i}.b")}
            self.layers.append(layer)
            self.params.extend(layer.values())

    def forward(self, tape: Tape, g: UnifiedGraph, x: np.ndarray, training: bool,
                epoch: int = 0) -> Variable:
        cfg = self.config
        p = cfg.dropout if training else 0.0
        h = Variable(x)
        for i, layer in enumerate(self.layers):
            seed = _dropout_seed(cfg.seed, epoch, i)
            last = i == len(self.layers) - 1
            if cfg.model == "gcn":
                h = tape.dropout(h, p, seed, training)
                h = gcn_layer(tape, g, h, layer["w"], layer["b"])
                if not last:
                    h = tape.relu(h)
            elif cfg.model == "gin":
                h = tape.dropout(h, p, seed, training)
                h = gin_layer(tape, g, h, layer["eps"],
                              (layer["w1"], layer["b1"], layer["w2"], layer["b2"]))
                if not last:
                    h = tape.relu(h)
            else:
                h = tape.dropout(h, p, seed, training)
                h = gat_layer(tape, g, h, layer["w"], layer["a_src"], layer["a_dst"],
                              layer["b"], cfg.slope, p, seed + 1, training)
                if not last:
                    h = tape.elu(h)
        return h


def _dropout_seed(seed: int, epoch: int, layer: int) -> int:
    return (seed * 1_000_003 + epoch * 1009 + layer * 2) & 0xFFFFFFFFFFFF


def build_model(config: TrainConfig, dataset: NodeDataset) -> Model:
    return Model(config, dataset.features.shape[1], dataset.num_classes)


def accuracy(logits, labels, mask) -> float:
    """Fraction of masked rows whose argmax (lowest index on ties) hits the label."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],) or mask.shape != labels.shape:
        raise ValueError("logits [n, C], labels [n], mask [n] must align")
    if not mask.any():
        raise ValueError("accuracy mask selects no rows")
    pred = np.argmax(logits[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


@dataclass
class TrainReport:
    config: TrainConfig
    losses: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    timings: list[EpochTiming] = field(default_factory=list)
    ledger: LedgerSnapshot | None = None

    @property
    def final_train_acc(self) -> float:
        return self.train_acc[-1]

    def series(self) -> list[dict]:
        rows = []
        for i, t in enumerate(self.timings):
            row = {"epoch": t.epoch, "loss": self.losses[i]}
            row.update(t.to_dict())
            rows.append(row)
        return rows

    def to_dict(self) -> dict:
        return {
            "losses": list(self.losses),
            "train_acc": list(self.train_acc),
            "val_acc": list(self.val_acc),
            "test_acc": list(self.test_acc),
            "timings": [t.to_dict() for t in self.timings],
            "overhead": overhead_report(self.timings).to_dict(),
            "ledger": self.ledger.to_dict() if self.ledger else None,
        }


def _evaluate(model, dataset, backend, report):
    tape = Tape(backend)
    logits = model.forward(tape, dataset.graph, dataset.features, training=False).value
    report.train_acc.append(accuracy(logits, dataset.labels, dataset.train_mask))
    if dataset.val_mask.any():
        report.val_acc.append(accuracy(logits, dataset.labels, dataset.val_mask))
    if dataset.test_mask.any():
        report.test_acc.append(accuracy(logits, dataset.labels, dataset.test_mask))


def train(dataset: NodeDataset, config: TrainConfig, backend=None,
          ledger: MemoryLedger | None = None, profiler: Profiler | None = None) -> TrainReport:
    """Full-batch training for ``config.epochs`` epochs.

    With ``epochs == 0`` the report holds only the accuracy of the initial
    parameters. Pass :class:`~sparsegnn.oracle.DenseBackend` as ``backend``
    for the dense twin run.
    """
    g = dataset.graph
    if config.model == "gat" and not g.has_edge_ids:
        from .kernels import MissingEdgeIdsError
        raise MissingEdgeIdsError("GAT training needs a graph built with edge IDs")
    ledger = ledger if ledger is not None else MemoryLedger()
    profiler = profiler or Profiler()
    cost = layout_cost(config.layout, g.vcount, g.ecount, config.gnn_class)
    for cat, n in cost.static.items():
        ledger.record(cat, n)

    model = build_model(config, dataset)
    opt = Optimizer("adam", config.lr)
    report = TrainReport(config)
    for epoch in range(config.epochs):
        tape = Tape(backend, ledger, config.pitfalls, config.layout)
        try:
            _step(model, tape, g, dataset, config, opt, profiler, epoch, report)
        except MemoryError as exc:
            if isinstance(exc, LedgerOutOfMemory):
                raise
            raise LedgerOutOfMemory("activation", 0, ledger.total, ledger.budget) from exc
        if config.eval_every and ((epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1):
            _evaluate(model, dataset, backend, report)
        log.debug("epoch %d loss %.6f", epoch, report.losses[-1])
    if config.epochs == 0 or not report.train_acc:
        _evaluate(model, dataset, backend, report)
    report.ledger = ledger.snapshot()
    return report


def _step(model, tape, g, dataset, config, opt, profiler, epoch, report):
    params = model.params
    try:
        with profiler.epoch(epoch):
            Optimizer.zero_grad(params)
            logits = model.forward(tape, g, dataset.features, training=True, epoch=epoch)
            loss = tape.log_softmax_nll(logits, dataset.labels, dataset.train_mask)
            if config.weight_decay:
                l2 = 0.5 * config.weight_decay * sum(float(np.sum(p.value**2)) for p in params)
            else:
                l2 = 0.0
            tape.backward(loss)
            if config.weight_decay:
                for p in params:
                    p.grad += config.weight_decay * p.value
            opt.step(params)
    finally:
        tape.release()
    report.losses.append(float(loss.value) + l2)
    report.timings.append(profiler.timings[-1])
