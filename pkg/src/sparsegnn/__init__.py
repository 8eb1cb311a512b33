"""Sparse GNN training engine on a shared symmetric CSR/COO topology."""
__version__ = "0.1.0"

from .graph_store import UnifiedGraph, build_graph, from_edges, load_graph, save_graph
from .instrumentation import MemoryLedger, Profiler, layout_cost
from .models import TrainConfig, train

__all__ = [
    "__version__",
    "UnifiedGraph",
    "build_graph",
    "from_edges",
    "load_graph",
    "save_graph",
    "MemoryLedger",
    "Profiler",
    "layout_cost",
    "TrainConfig",
    "train",
]
