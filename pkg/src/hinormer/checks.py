"""Small fixtures shared by the gradient check command and the test suite."""
from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .graph import Dataset, DatasetInfo, FeatureTable, HeteroGraph, LabelSet, Split, _type_index
from .model import HINormer
from .numeric import grad_check, GradCheckReport
from .trainer import ContextStore, _loss

GRADCHECK_CONFIG = TrainConfig(
    d=8, n_h=2, L=2, S=6, D=2, K_s=2, K_h=2, beta=0.7, dropout=0.0, epochs=1, patience=1, seed=3
)


def tiny_dataset(seed: int = 0) -> Dataset:
    """10 nodes of 3 types: types 0 and 1 carry dense features of different
    widths, type 2 is featureless. All type-0 nodes are labeled."""
    rng = np.random.default_rng(seed)
    node_type = np.array([0, 0, 0, 0, 1, 1, 1, 2, 2, 2])
    pairs = [(0, 4), (0, 5), (1, 4), (1, 7), (2, 5), (2, 6), (2, 8), (3, 6), (3, 9), (4, 7), (5, 8), (6, 9), (0, 1), (7, 8)]
    src = np.array([a for a, _ in pairs])
    dst = np.array([b for _, b in pairs])
    t = node_type
    etype = np.array([min(t[a], t[b]) * 3 + max(t[a], t[b]) for a, b in pairs])
    blocks = (rng.standard_normal((4, 5)), rng.standard_normal((3, 3)), None)
    features = FeatureTable(blocks, _type_index(node_type, 3), node_type)
    g = HeteroGraph.from_edges(node_type, src, dst, etype, 3, 9, features)
    labels = LabelSet(np.arange(4), np.array([0, 1, 1, 0]), 2, False)
    split = Split(np.arange(4), np.array([], dtype=np.int64), np.array([], dtype=np.int64))
    return Dataset(g, labels, split, DatasetInfo(3, 9, 0, 2, False, "tiny"))


def gradcheck_model(cfg: TrainConfig = GRADCHECK_CONFIG, ds: Dataset | None = None):
    """``(model, closure, params)`` for a full summed-loss forward pass."""
    ds = ds or tiny_dataset()
    model = HINormer(ds.graph, ds.labels.num_classes, cfg)
    model.eval()
    contexts = ContextStore(ds, cfg)
    ids = ds.labels.nodes
    nodes, mask = contexts.get(ids)

    def closure():
        return _loss(model, model(nodes, mask), ids, ds, "sum")

    return model, closure, dict(model.named_parameters())


def run_gradcheck(cfg: TrainConfig = GRADCHECK_CONFIG, tolerance: float = 1e-4) -> GradCheckReport:
    _, closure, params = gradcheck_model(cfg)
    return grad_check(closure, params, tolerance=tolerance, abs_tolerance=1e-7, step=1e-5)
