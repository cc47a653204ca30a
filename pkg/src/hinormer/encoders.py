"""Type-specific feature projection, local structure encoders and the
heterogeneous relation encoder."""
from __future__ import annotations

import weakref

import numpy as np
import scipy.sparse as sp
import torch
from torch import nn

from .graph import HeteroGraph, adjacency_matrix, build_normalized_adjacency, mean_adjacency
from .numeric import DTYPE, initialize, leaky_relu, make_param

STRUCTURE_KINDS = ("adj-power", "gcn", "sample-aggregate", "sum-mlp")
RELATION_NORMS = ("sym", "mean", "raw")


def to_torch_sparse(m: sp.spmatrix) -> torch.Tensor:
    coo = m.tocoo()
    idx = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    vals = torch.from_numpy(coo.data.astype(np.float64))
    return torch.sparse_coo_tensor(idx, vals, coo.shape, check_invariants=False).coalesce()


class GraphTensors:
    """Torch views of a graph, built lazily and cached per graph object."""

    def __init__(self, g: HeteroGraph):
        self.graph = g
        self.num_nodes = g.num_nodes
        self.node_type = torch.from_numpy(g.node_type.copy())
        self.members = [torch.from_numpy(np.flatnonzero(g.node_type == t)) for t in range(g.num_node_types)]
        self.blocks = [
            None if b is None else torch.from_numpy(np.ascontiguousarray(b, dtype=np.float64))
            for b in g.features.blocks
        ]
        self._adj: dict[tuple[str, bool], torch.Tensor] = {}

    def adjacency(self, norm: str, self_loops: bool) -> torch.Tensor:
        key = (norm, self_loops)
        if key not in self._adj:
            if norm == "sym":
                m = build_normalized_adjacency(self.graph, self_loops).matrix
            elif norm == "mean":
                m = mean_adjacency(self.graph, self_loops)
            elif norm == "raw":
                m = adjacency_matrix(self.graph, self_loops)
            else:
                raise ValueError(f"unknown normalization {norm!r}")
            self._adj[key] = to_torch_sparse(m)
        return self._adj[key]


_CACHE: "weakref.WeakKeyDictionary[HeteroGraph, GraphTensors]" = weakref.WeakKeyDictionary()


def graph_tensors(g) -> GraphTensors:
    if isinstance(g, GraphTensors):
        return g
    if g not in _CACHE:
        _CACHE[g] = GraphTensors(g)
    return _CACHE[g]


def spmm(a: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    return torch.sparse.mm(a, x)


# ----------------------------------------------------------------------------
# heterogeneous feature projection


class HeteroProjection(nn.Module):
    """``h_v = W_t x_v + b_t`` with one ``(W_t, b_t)`` per node type.

    Featureless (one-hot identity) types store ``W_t`` column-wise as an
    ``(n_t, d)`` table: ``W_t e_v`` is just the row of node ``v``.
    """

    def __init__(self, per_type_dim, onehot, type_sizes, d: int, seed: int = 0):
        super().__init__()
        self.d = d
        self.onehot = tuple(bool(o) for o in onehot)
        self.in_dims = tuple(int(x) for x in per_type_dim)
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for t, (din, oh, n_t) in enumerate(zip(self.in_dims, self.onehot, type_sizes)):
            if oh:
                self.weights.append(make_param(n_t, d, fan_in=1))
            else:
                self.weights.append(make_param(d, din, fan_in=din))
            self.biases.append(make_param(d, fan_in=max(din, 1) if not oh else 1))
        initialize(self, seed)

    @classmethod
    def for_graph(cls, g: HeteroGraph, d: int, seed: int = 0) -> "HeteroProjection":
        ft = g.features
        sizes = [int((g.node_type == t).sum()) for t in range(g.num_node_types)]
        return cls(ft.per_type_dim, [ft.is_onehot(t) for t in range(g.num_node_types)], sizes, d, seed)

    def forward(self, g) -> torch.Tensor:
        return project_features(g, self)


def project_features(g, p: HeteroProjection) -> torch.Tensor:
    gt = graph_tensors(g)
    if len(gt.members) != len(p.weights):
        raise ValueError(f"graph has {len(gt.members)} node types, projection has {len(p.weights)}")
    h = torch.zeros(gt.num_nodes, p.d, dtype=DTYPE)
    for t, (idx, block) in enumerate(zip(gt.members, gt.blocks)):
        w, b = p.weights[t], p.biases[t]
        if block is None:
            if not p.onehot[t] or w.shape[0] != len(idx):
                raise ValueError(f"node type {t}: one-hot features need a ({len(idx)}, {p.d}) table, got {tuple(w.shape)}")
            rows = w + b
        else:
            if p.onehot[t] or w.shape[1] != block.shape[1]:
                raise ValueError(f"node type {t}: features have width {block.shape[1]}, projection expects {tuple(w.shape)}")
            rows = block @ w.T + b
        h = h.index_copy(0, idx, rows)
    return h


# ----------------------------------------------------------------------------
# local structure encoder


class StructureEncoder(nn.Module):
    """``K_s`` rounds of neighborhood aggregation over projected features.

    kinds:
      adj-power         A_hat^K H, no learnables (self loops off by default)
      gcn               A_hat (H W) + b per layer, self loops on by default
      sample-aggregate  H W_self + mean_N(H) W_nbr + b
      sum-mlp           MLP(H + sum_N(H)), a two-layer MLP per round
    LeakyReLU(0.2) separates layers; the last layer is linear.
    """

    def __init__(self, kind: str, K_s: int, d: int, self_loops: bool | None = None, slope: float = 0.2, seed: int = 0):
        super().__init__()
        if kind not in STRUCTURE_KINDS:
            raise ValueError(f"unknown structure encoder {kind!r}")
        if K_s < 0:
            raise ValueError(f"K_s must be >= 0, got {K_s}")
        self.kind, self.K_s, self.d, self.slope = kind, K_s, d, slope
        self.self_loops = (kind == "gcn") if self_loops is None else self_loops
        self.layers = nn.ModuleList()
        if kind != "adj-power":
            for _ in range(K_s):
                layer = nn.Module()
                if kind == "gcn":
                    layer.weight = make_param(d, d, fan_in=d)
                elif kind == "sample-aggregate":
                    layer.w_self = make_param(d, d, fan_in=d)
                    layer.w_nbr = make_param(d, d, fan_in=d)
                else:
                    layer.weight = make_param(d, d, fan_in=d)
                    layer.weight2 = make_param(d, d, fan_in=d)
                    layer.bias2 = make_param(d, fan_in=d)
                layer.bias = make_param(d, fan_in=d)
                self.layers.append(layer)
        initialize(self, seed)

    def forward(self, h: torch.Tensor, g) -> torch.Tensor:
        return encode_structure(h, g, self)


def encode_structure(h: torch.Tensor, g, p: StructureEncoder) -> torch.Tensor:
    gt = graph_tensors(g)
    if p.K_s < 0:
        raise ValueError(f"K_s must be >= 0, got {p.K_s}")
    if p.kind == "adj-power":
        a = gt.adjacency("sym", p.self_loops)
        for _ in range(p.K_s):
            h = spmm(a, h)
        return h
    if p.kind == "gcn":
        a = gt.adjacency("sym", p.self_loops)
    elif p.kind == "sample-aggregate":
        a = gt.adjacency("mean", p.self_loops)
    else:
        a = gt.adjacency("raw", p.self_loops)
    for i, layer in enumerate(p.layers):
        if i > 0:
            h = leaky_relu(h, p.slope)
        if p.kind == "gcn":
            h = spmm(a, h @ layer.weight.T) + layer.bias
        elif p.kind == "sample-aggregate":
            h = h @ layer.w_self.T + spmm(a, h) @ layer.w_nbr.T + layer.bias
        else:
            z = h + spmm(a, h)
            h = leaky_relu(z @ layer.weight.T + layer.bias, p.slope) @ layer.weight2.T + layer.bias2
    return h


# ----------------------------------------------------------------------------
# heterogeneous relation encoder


class RelationEncoder(nn.Module):
    """Propagates one-hot type vectors with per-type weights.

    Step ``t`` computes ``r_v <- sum_u P[v,u] * w_t[type(u)] * Theta_t r_u``
    where ``P`` is the self-looped symmetric adjacency (``norm="sym"``), the
    self-looped neighbor mean (``"mean"``) or the raw neighbor sum without
    self term (``"raw"``).
    """

    def __init__(self, num_types: int, K_h: int, norm: str = "sym", noise: float = 0.01, seed: int = 0):
        super().__init__()
        if K_h < 0:
            raise ValueError(f"K_h must be >= 0, got {K_h}")
        if norm not in RELATION_NORMS:
            raise ValueError(f"unknown relation normalization {norm!r}")
        self.num_types, self.K_h, self.norm = num_types, K_h, norm
        self.type_weight = make_param(K_h, num_types, init="ones")
        self.transform = make_param(K_h, num_types, num_types, init="identity", noise=noise)
        initialize(self, seed)

    def forward(self, g) -> torch.Tensor:
        return encode_relations(g, self)


def encode_relations(g, p: RelationEncoder) -> torch.Tensor:
    gt = graph_tensors(g)
    if p.num_types != len(gt.members):
        raise ValueError(f"graph has {len(gt.members)} node types, encoder expects {p.num_types}")
    r = torch.nn.functional.one_hot(gt.node_type, p.num_types).to(DTYPE)
    if p.K_h == 0:
        return r
    a = gt.adjacency(p.norm, p.norm != "raw")
    for t in range(p.K_h):
        msg = (r @ p.transform[t].T) * p.type_weight[t][gt.node_type].unsqueeze(-1)
        r = spmm(a, msg)
    return r
