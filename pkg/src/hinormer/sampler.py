"""D-hop context sampling: fixed-length node sequences around each target."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import HeteroGraph

PAD = -1
POLICIES = ("deterministic", "seeded-random")


@dataclass(frozen=True)
class SamplerConfig:
    D: int = 2
    S: int = 20
    policy: str = "deterministic"
    seed: int = 0

    def __post_init__(self):
        if self.D < 0:
            raise ValueError(f"D must be >= 0, got {self.D}")
        if self.S < 1:
            raise ValueError(f"S must be >= 1, got {self.S}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown sampling policy {self.policy!r}")


@dataclass(frozen=True, eq=False)
class ContextSequence:
    target: int
    nodes: np.ndarray
    hop: np.ndarray
    mask: np.ndarray

    @property
    def valid(self) -> np.ndarray:
        return self.nodes[self.mask]

    def __eq__(self, other):
        if not isinstance(other, ContextSequence):
            return NotImplemented
        return (
            self.target == other.target
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.hop, other.hop)
            and np.array_equal(self.mask, other.mask)
        )


def sample_context(g: HeteroGraph, v: int, cfg: SamplerConfig, epoch: int = 0) -> ContextSequence:
    """Breadth-first context of ``v``, hop-major, cut at ``cfg.S`` positions.

    Within a hop, nodes are ordered by id (deterministic policy) or shuffled
    with a generator seeded from ``(seed, epoch, v, hop)``. Hop layers are
    computed from the full BFS frontier, so hop tags are exact distances even
    when a layer is cut.
    """
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range [0, {g.num_nodes})")
    S = cfg.S
    nodes = np.full(S, PAD, dtype=np.int64)
    hop = np.zeros(S, dtype=np.int64)
    mask = np.zeros(S, dtype=bool)
    nodes[0], mask[0] = v, True
    filled = 1
    seen = {v}
    frontier = np.array([v], dtype=np.int64)
    for h in range(1, cfg.D + 1):
        if filled >= S or len(frontier) == 0:
            break
        cand = np.unique(np.concatenate([g.neighbor_ids(u) for u in frontier]))
        layer = np.array([u for u in cand if u not in seen], dtype=np.int64)
        if len(layer) == 0:
            break
        seen.update(layer.tolist())
        frontier = layer
        if cfg.policy == "seeded-random":
            layer = np.random.default_rng([cfg.seed, epoch, v, h]).permutation(layer)
        take = layer[: S - filled]
        nodes[filled : filled + len(take)] = take
        hop[filled : filled + len(take)] = h
        mask[filled : filled + len(take)] = True
        filled += len(take)
    return ContextSequence(int(v), nodes, hop, mask)


def sample_all(g: HeteroGraph, ids: Sequence[int], cfg: SamplerConfig, epoch: int = 0) -> list[ContextSequence]:
    out = []
    for v in ids:
        try:
            out.append(sample_context(g, int(v), cfg, epoch))
        except IndexError as exc:
            raise IndexError(f"sampling failed for node {v}: {exc}") from exc
    return out


def stack_contexts(seqs: Sequence[ContextSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(nodes, hop, mask)`` arrays of shape ``(B, S)``."""
    if not seqs:
        raise ValueError("no sequences to stack")
    return (
        np.stack([s.nodes for s in seqs]),
        np.stack([s.hop for s in seqs]),
        np.stack([s.mask for s in seqs]),
    )


# ----------------------------------------------------------------------------
# binary cache

_MAGIC = b"HINCTX01"
_HEADER = struct.Struct("<8sIIIq64sQ")


class CacheMismatch(RuntimeError):
    pass


def _record_dtype(S: int) -> np.dtype:
    return np.dtype([("target", "<i8"), ("nodes", "<i8", (S,)), ("hop", "<i2", (S,)), ("mask", "u1", (S,))])


def save_cache(path: str | Path, seqs: Sequence[ContextSequence], cfg: SamplerConfig, g: HeteroGraph) -> None:
    rec = np.zeros(len(seqs), dtype=_record_dtype(cfg.S))
    for i, s in enumerate(seqs):
        rec[i] = (s.target, s.nodes, s.hop, s.mask.astype(np.uint8))
    header = _HEADER.pack(
        _MAGIC, cfg.S, cfg.D, POLICIES.index(cfg.policy), cfg.seed, g.checksum().encode("ascii"), len(seqs)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def load_cache(path: str | Path, cfg: SamplerConfig, g: HeteroGraph) -> list[ContextSequence]:
    """Read a cache written by :func:`save_cache`.

    Raises :class:`CacheMismatch` when the header disagrees with ``cfg`` or the
    graph checksum, so callers can resample.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CacheMismatch("truncated cache header")
    magic, S, D, policy, seed, checksum, count = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise CacheMismatch("not a context cache")
    if checksum.decode("ascii") != g.checksum():
        raise CacheMismatch("graph checksum mismatch")
    if (S, D, POLICIES[policy], seed) != (cfg.S, cfg.D, cfg.policy, cfg.seed):
        raise CacheMismatch("sampler configuration mismatch")
    rec = np.frombuffer(data, dtype=_record_dtype(S), count=count, offset=_HEADER.size)
    return [
        ContextSequence(int(r["target"]), r["nodes"].astype(np.int64), r["hop"].astype(np.int64), r["mask"].astype(bool))
        for r in rec
    ]
