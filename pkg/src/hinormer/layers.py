"""Global attention over context sequences with relational bias.

Shapes: ``hseq`` is ``(B, S, d)``, ``rseq`` is ``(B, S, T)``, ``mask`` is a
``(B, S)`` bool tensor. Logits are ``(B, n_h, S, S)`` with query rows and key
columns; masked keys carry ``-inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .numeric import initialize, layer_norm, leaky_relu, make_param, masked_softmax

MECHANISMS = ("gatv2", "gat", "dot")


@dataclass(frozen=True)
class AttentionConfig:
    d: int = 256
    n_h: int = 2
    mechanism: str = "gatv2"
    beta: float = 1.0
    use_relational_bias: bool = True
    num_types: int = 1
    use_ffn: bool = False
    dropout: float = 0.0
    slope: float = 0.2
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown attention mechanism {self.mechanism!r}")
        if self.d % self.n_h:
            raise ValueError(f"d={self.d} is not divisible by n_h={self.n_h}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.use_ffn and self.mechanism != "dot":
            raise ValueError("the FFN block is only available with dot-product attention")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_h


@dataclass
class AttentionMap:
    logits: torch.Tensor
    mask: torch.Tensor

    @property
    def weights(self) -> torch.Tensor:
        return masked_softmax(self.logits, self.mask[:, None, None, :])


class HeteroAttentionLayer(nn.Module):
    """Parameters of one attention layer (see module docstring for shapes)."""

    def __init__(self, cfg: AttentionConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        d, h, k, T = cfg.d, cfg.n_h, cfg.head_dim, cfg.num_types
        if cfg.mechanism == "gatv2":
            # W acts on [h_i || h_j]: first d columns see the query, the rest the key
            self.W = make_param(h, k, 2 * d, fan_in=2 * d)
            self.a = make_param(h, k, fan_in=k)
        elif cfg.mechanism == "gat":
            self.W = make_param(h, k, d, fan_in=d)
            self.a = make_param(h, 2 * k, fan_in=2 * k)
        else:
            self.W_Q = make_param(h, d, k, fan_in=d)
            self.W_K = make_param(h, d, k, fan_in=d)
        self.W_V = make_param(h, d, k, fan_in=d)
        self.merge = make_param(d, d, fan_in=d)
        self.ln_scale = make_param(d, init="ones")
        self.ln_shift = make_param(d, init="zeros")
        if cfg.use_relational_bias:
            self.W_QR = make_param(h, T, T, fan_in=T)
            self.W_KR = make_param(h, T, T, fan_in=T)
        if cfg.use_ffn:
            self.ffn_w1 = make_param(2 * d, d, fan_in=d)
            self.ffn_b1 = make_param(2 * d, fan_in=d)
            self.ffn_w2 = make_param(d, 2 * d, fan_in=2 * d)
            self.ffn_b2 = make_param(d, fan_in=2 * d)
            self.ln2_scale = make_param(d, init="ones")
            self.ln2_shift = make_param(d, init="zeros")
        initialize(self, seed)

    def forward(self, hseq, rseq, mask, return_attention: bool = False):
        return layer_forward(hseq, rseq, mask, self.cfg, self, return_attention=return_attention)


def attention_logits(hseq: torch.Tensor, mask: torch.Tensor, cfg: AttentionConfig, params) -> AttentionMap:
    """Feature-based pairwise scores for every head.

    gatv2: a . LeakyReLU(W [h_i || h_j])
    gat:   LeakyReLU(a . [W h_i || W h_j])
    dot:   (W_Q h_i) . (W_K h_j) / sqrt(d_K)
    """
    if hseq.shape[-1] != cfg.d:
        raise ValueError(f"sequence width {hseq.shape[-1]} != d={cfg.d}")
    if mask.shape != hseq.shape[:-1]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match sequence {tuple(hseq.shape[:-1])}")
    mech = cfg.mechanism
    if mech == "gatv2":
        if not hasattr(params, "W") or params.W.shape[-1] != 2 * cfg.d:
            raise ValueError("gatv2 attention needs W of shape (n_h, d_k, 2d) and a")
        zi = torch.einsum("bsd,hkd->bhsk", hseq, params.W[..., : cfg.d])
        zj = torch.einsum("bsd,hkd->bhsk", hseq, params.W[..., cfg.d :])
        pair = leaky_relu(zi.unsqueeze(3) + zj.unsqueeze(2), cfg.slope)
        logits = (pair * params.a[None, :, None, None, :]).sum(-1)
    elif mech == "gat":
        if not hasattr(params, "W") or params.W.shape[-1] != cfg.d:
            raise ValueError("gat attention needs W of shape (n_h, d_k, d) and a")
        k = cfg.head_dim
        wh = torch.einsum("bsd,hkd->bhsk", hseq, params.W)
        si = torch.einsum("bhsk,hk->bhs", wh, params.a[:, :k])
        sj = torch.einsum("bhsk,hk->bhs", wh, params.a[:, k:])
        logits = leaky_relu(si.unsqueeze(-1) + sj.unsqueeze(-2), cfg.slope)
    else:
        if not hasattr(params, "W_Q"):
            raise ValueError("dot-product attention needs W_Q and W_K")
        q = torch.einsum("bsd,hdk->bhsk", hseq, params.W_Q)
        k = torch.einsum("bsd,hdk->bhsk", hseq, params.W_K)
        logits = q @ k.transpose(-1, -2) / math.sqrt(cfg.head_dim)
    logits = logits.masked_fill(~mask[:, None, None, :], -math.inf)
    return AttentionMap(logits, mask)


def add_relational_bias(amap: AttentionMap, rseq: torch.Tensor, params, beta: float) -> AttentionMap:
    """``logits[i, j] += beta * (W_QR r_i) . (W_KR r_j)`` before the softmax."""
    if rseq.shape[-1] != params.W_QR.shape[-1]:
        raise ValueError(f"relational width {rseq.shape[-1]} != {params.W_QR.shape[-1]}")
    q = torch.einsum("bst,hut->bhsu", rseq, params.W_QR)
    k = torch.einsum("bst,hut->bhsu", rseq, params.W_KR)
    return AttentionMap(amap.logits + beta * (q @ k.transpose(-1, -2)), amap.mask)


def layer_forward(hseq, rseq, mask, cfg: AttentionConfig, params, training: bool | None = None, return_attention=False):
    """``LN(H + merge(concat_h softmax(logits_h) H W_V,h))``, optionally
    followed by the FFN block of the dot-product baseline."""
    if training is None:
        training = params.training
    amap = attention_logits(hseq, mask, cfg, params)
    if cfg.use_relational_bias:
        amap = add_relational_bias(amap, rseq, params, cfg.beta)
    attn = amap.weights
    if training and cfg.dropout > 0:
        attn = F.dropout(attn, cfg.dropout, training=True)
    v = torch.einsum("bsd,hdk->bhsk", hseq, params.W_V)
    heads = attn @ v
    b, h, s, k = heads.shape
    merged = heads.permute(0, 2, 1, 3).reshape(b, s, h * k) @ params.merge.T
    out = layer_norm(hseq + merged, params.ln_scale, params.ln_shift, cfg.ln_eps)
    if cfg.use_ffn:
        ff = leaky_relu(out @ params.ffn_w1.T + params.ffn_b1, cfg.slope) @ params.ffn_w2.T + params.ffn_b2
        out = layer_norm(ff + out, params.ln2_scale, params.ln2_shift, cfg.ln_eps)
    if return_attention:
        return out, amap
    return out


def stack_forward(hseq, rseq, mask, layers, training: bool | None = None, return_attention=False):
    """Apply ``layers`` in order; the same ``rseq`` feeds every layer."""
    if len(layers) < 1:
        raise ValueError("need at least one layer")
    maps = []
    for layer in layers:
        res = layer_forward(hseq, rseq, mask, layer.cfg, layer, training=training, return_attention=return_attention)
        if return_attention:
            hseq, amap = res
            maps.append(amap)
        else:
            hseq = res
    return (hseq, maps) if return_attention else hseq


def readout(hout: torch.Tensor, seq=None) -> torch.Tensor:
    """Representation of the target node: sequence position 0."""
    return hout[..., 0, :]
