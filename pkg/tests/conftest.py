import numpy as np
import pytest

from hinormer.graph import FeatureTable, HeteroGraph, _type_index

ACCEPTANCE_LINES = []


def make_graph(n, edges, node_type=None, num_node_types=None, feature_dims=None, seed=0):
    """Graph from an undirected edge list; optional dense per-type features
    (``feature_dims[t] = None`` keeps type ``t`` one-hot)."""
    node_type = np.zeros(n, dtype=np.int64) if node_type is None else np.asarray(node_type)
    T = num_node_types or int(node_type.max()) + 1
    edges = list(edges)
    src = np.array([a for a, _ in edges], dtype=np.int64)
    dst = np.array([b for _, b in edges], dtype=np.int64)
    etype = np.zeros(len(edges), dtype=np.int64)
    features = None
    if feature_dims is not None:
        rng = np.random.default_rng(seed)
        blocks = tuple(
            None if dim is None else rng.standard_normal((int((node_type == t).sum()), dim))
            for t, dim in enumerate(feature_dims)
        )
        features = FeatureTable(blocks, _type_index(node_type, T), node_type)
    return HeteroGraph.from_edges(node_type, src, dst, etype, T, 1, features)


def random_graph(n, p, num_types=1, seed=0, feature_dims=None):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    node_type = rng.integers(0, num_types, size=n)
    node_type[:num_types] = np.arange(num_types)  # every type present
    return make_graph(n, edges, node_type, num_types, feature_dims, seed)


@pytest.fixture
def path3():
    return make_graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def acceptance_report():
    def record(criterion, passed, detail="", status=None):
        status = status or ("PASS" if passed else "FAIL")
        line = f"[{status}] {criterion}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
