"""Synthetic graphs and node-classification datasets, plus sidecar file IO.

Sidecar formats: features are little-endian float32 behind an 8-byte
``(rows u32, cols u32)`` header; labels and masks are one integer per line.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph_store import BuildOptions, EdgeList, UnifiedGraph, build_graph

__all__ = [
    "NodeDataset",
    "erdos_renyi_graph",
    "sbm_edges",
    "sbm_dataset",
    "random_split",
    "write_features",
    "read_features",
    "write_int_lines",
    "read_int_lines",
]

_FEAT_HEADER = struct.Struct("<II")


@dataclass
class NodeDataset:
    graph: UnifiedGraph
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    def __post_init__(self):
        v = self.graph.vcount
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != v:
            raise ValueError(f"features must be [{v}, K], got {self.features.shape}")
        if self.labels.shape != (v,):
            raise ValueError(f"labels must have {v} entries, got {self.labels.shape}")
        if v and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        for name in ("train_mask", "val_mask", "test_mask"):
            m = np.asarray(getattr(self, name), dtype=bool)
            if m.shape != (v,):
                raise ValueError(f"{name} must have {v} entries")
            setattr(self, name, m)
        if (self.train_mask & (self.val_mask | self.test_mask)).any() or \
                (self.val_mask & self.test_mask).any():
            warnings.warn("train/val/test masks overlap", stacklevel=2)


def erdos_renyi_graph(vcount: int, ecount: int, seed: int = 0,
                      need_edge_ids: bool = True) -> UnifiedGraph:
    """Uniform random simple graph with ``ecount`` directed slots (``ecount // 2`` undirected edges)."""
    m = ecount // 2
    max_pairs = vcount * (vcount - 1) // 2
    if m > max_pairs:
        raise ValueError(f"{vcount} vertices cannot hold {m} undirected edges")
    rng = np.random.default_rng(seed)
    keys = np.empty(0, dtype=np.int64)
    while keys.size < m:
        need = m - keys.size
        batch = int(need * 1.1) + 16
        a = rng.integers(0, vcount, batch)
        b = rng.integers(0, vcount, batch)
        ok = a != b
        lo = np.minimum(a, b)[ok]
        hi = np.maximum(a, b)[ok]
        new = lo * vcount + hi
        # keep first occurrence, in draw order
        merged = np.concatenate([keys, new])
        _, first = np.unique(merged, return_index=True)
        keys = merged[np.sort(first)]
    keys = keys[:m]
    src, dst = keys // vcount, keys % vcount
    el = EdgeList.from_arrays(src, dst)
    return build_graph(el, vcount, BuildOptions(symmetrize=True, need_edge_ids=need_edge_ids))


def sbm_edges(sizes, p_in: float, p_out: float, seed: int = 0):
    """Undirected stochastic-block-model edges as ``(src, dst, block_of_vertex)``."""
    sizes = list(sizes)
    n = sum(sizes)
    block = np.repeat(np.arange(len(sizes)), sizes)
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    return iu[keep], ju[keep], block


def random_split(n: int, seed: int = 0, fractions=(0.6, 0.2, 0.2)):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    masks[0][perm[:n_train]] = True
    masks[1][perm[n_train:n_train + n_val]] = True
    masks[2][perm[n_train + n_val:]] = True
    return tuple(masks)


def sbm_dataset(n: int = 200, blocks: int = 2, p_in: float = 0.1, p_out: float = 0.01,
                feat_dim: int = 16, signal: float = 1.0, noise: float = 1.0,
                seed: int = 0, need_edge_ids: bool = True) -> NodeDataset:
    """Community graph whose labels are the blocks.

    Features are a noisy one-hot of the block: ``signal`` on the block's
    coordinate plus Gaussian noise of scale ``noise`` everywhere.
    """
    sizes = [n // blocks + (1 if i < n % blocks else 0) for i in range(blocks)]
    src, dst, block = sbm_edges(sizes, p_in, p_out, seed)
    g = build_graph(EdgeList.from_arrays(src, dst), n,
                    BuildOptions(symmetrize=True, need_edge_ids=need_edge_ids))
    rng = np.random.default_rng(seed + 1)
    feats = noise * rng.standard_normal((n, feat_dim))
    feats[np.arange(n), block % feat_dim] += signal
    train, val, test = random_split(n, seed + 2)
    return NodeDataset(g, feats, block, train, val, test, blocks)


def write_features(path, features: np.ndarray) -> None:
    f = np.ascontiguousarray(features, dtype="<f4")
    if f.ndim != 2:
        raise ValueError("features must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_FEAT_HEADER.pack(*f.shape))
        fh.write(f.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _FEAT_HEADER.size:
        raise ValueError(f"{path}: truncated feature header")
    rows, cols = _FEAT_HEADER.unpack_from(raw)
    body = raw[_FEAT_HEADER.size:]
    if len(body) != rows * cols * 4:
        raise ValueError(f"{path}: expected {rows}x{cols} float32 values, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_int_lines(path, values) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in values))


def read_int_lines(path) -> np.ndarray:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            out.append(int(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not an integer: {line!r}") from None
    return np.asarray(out, dtype=np.int64)
