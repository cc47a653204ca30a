"""End-to-end model: projection -> structure encoder -> context attention ->
target readout -> normalized linear head."""
from __future__ import annotations

import logging

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import TrainConfig
from .encoders import HeteroProjection, RelationEncoder, StructureEncoder, graph_tensors
from .graph import HeteroGraph
from .layers import AttentionConfig, HeteroAttentionLayer, readout, stack_forward
from .numeric import initialize, l2_normalize, make_param

logger = logging.getLogger(__name__)


class PredictionHead(nn.Module):
    def __init__(self, d: int, num_classes: int):
        super().__init__()
        self.weight = make_param(num_classes, d, fan_in=d)
        self.bias = make_param(num_classes, fan_in=d)

    def forward(self, h):
        return predict(h, self)


def predict(h: torch.Tensor, head) -> torch.Tensor:
    """Linear class scores scaled to unit L2 norm (zero stays zero)."""
    y = h @ head.weight.T + head.bias
    if not torch.linalg.vector_norm(y.detach(), dim=-1).all():
        logger.warning("prediction head produced a zero score vector; left unnormalized")
    return l2_normalize(y)


class HINormer(nn.Module):
    def __init__(self, g: HeteroGraph, num_classes: int, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        self.num_classes = num_classes
        self.graph = g
        self.projection = HeteroProjection.for_graph(g, cfg.d)
        self.lse = None if cfg.no_lse else StructureEncoder(cfg.lse_kind, cfg.K_s, cfg.d)
        self.relation = None if cfg.no_hre else RelationEncoder(g.num_node_types, cfg.K_h, cfg.relation_norm)
        self.attn_cfg = AttentionConfig(
            d=cfg.d,
            n_h=cfg.n_h,
            mechanism=cfg.mechanism,
            beta=cfg.beta,
            use_relational_bias=not cfg.no_hre,
            num_types=g.num_node_types,
            use_ffn=cfg.use_ffn,
            dropout=cfg.attn_dropout,
        )
        self.layers = nn.ModuleList(HeteroAttentionLayer(self.attn_cfg) for _ in range(cfg.L))
        self.head = PredictionHead(cfg.d, num_classes)
        initialize(self, cfg.seed)

    def node_inputs(self):
        """Per-node inputs of the attention stack: structure-encoded features
        and relational encodings (``None`` when the relation encoder is off)."""
        gt = graph_tensors(self.graph)
        h = self.projection(gt)
        if self.training and self.cfg.dropout > 0:
            h = F.dropout(h, self.cfg.dropout, training=True)
        hs = h if self.lse is None else self.lse(h, gt)
        r = None if self.relation is None else self.relation(gt)
        return hs, r

    def forward(self, nodes, mask, return_attention: bool = False, node_inputs=None):
        """``nodes``/``mask`` are ``(B, S)`` context arrays (pad = -1).

        Returns L2-normalized class scores ``(B, C)``.
        """
        nodes = torch.as_tensor(np.asarray(nodes), dtype=torch.long)
        mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool)
        hs, r = node_inputs if node_inputs is not None else self.node_inputs()
        idx = torch.where(mask, nodes, nodes[:, :1])
        hseq = hs[idx]
        rseq = None if r is None else r[idx]
        res = stack_forward(hseq, rseq, mask, list(self.layers), training=self.training, return_attention=return_attention)
        out, maps = res if return_attention else (res, None)
        y = self.head(readout(out))
        return (y, maps) if return_attention else y
