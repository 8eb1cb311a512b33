import numpy as np
import pytest
from hypothesis import settings, strategies as st

from sparsegnn.graph_store import from_edges

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

T4_EDGES = [(0, 1), (0, 2), (1, 2), (2, 3)]


@pytest.fixture
def t4():
    return from_edges(T4_EDGES, vcount=4)


def random_graph(rng, vmax=32, density=None, loops=True, need_edge_ids=True):
    """Random symmetric graph; may contain isolated vertices and self-loops."""
    n = int(rng.integers(1, vmax + 1))
    p = density if density is not None else rng.uniform(0.05, 0.6)
    iu, ju = np.triu_indices(n, k=0 if loops else 1)
    keep = rng.random(iu.size) < p
    pairs = np.stack([iu[keep], ju[keep]], axis=1)
    return from_edges(pairs, vcount=n, need_edge_ids=need_edge_ids)


@st.composite
def symmetric_graphs(draw, vmax=32):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_graph(np.random.default_rng(seed), vmax)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for line in lines:
            terminalreporter.write_line(line)
