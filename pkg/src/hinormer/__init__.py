"""Graph Transformer node classification on heterogeneous information networks."""

__version__ = "0.1.0"

from .config import TrainConfig
from .graph import Dataset, HeteroGraph, load_dataset, load_graph, load_hgb, write_dataset
from .model import HINormer
from .sampler import ContextSequence, SamplerConfig, sample_all, sample_context
from .trainer import evaluate, train

__all__ = [
    "ContextSequence",
    "Dataset",
    "HINormer",
    "HeteroGraph",
    "SamplerConfig",
    "TrainConfig",
    "evaluate",
    "load_dataset",
    "load_graph",
    "load_hgb",
    "sample_all",
    "sample_context",
    "train",
    "write_dataset",
]
