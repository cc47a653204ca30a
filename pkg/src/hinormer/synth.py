"""Synthetic heterogeneous graphs whose target labels follow a known rule:
the most frequent node type among a target's direct neighbors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Dataset, DatasetInfo, FeatureTable, HeteroGraph, LabelSet, Split, _type_index


@dataclass(frozen=True)
class SynthSpec:
    num_nodes: int = 300
    num_types: int = 3
    target_fraction: float = 0.5
    min_degree: int = 3
    max_degree: int = 8
    dominance: float = 0.6
    feature_dim: int = 8
    feature_noise: float = 0.1
    train_fraction: float = 0.5
    val_fraction: float = 0.2
    seed: int = 7

    def __post_init__(self):
        if self.num_types < 2:
            raise ValueError("need at least two node types")
        if self.min_degree < 1 or self.max_degree < self.min_degree:
            raise ValueError("bad degree range")


def neighbor_type_histogram(g: HeteroGraph, v: int) -> np.ndarray:
    return np.bincount(g.node_type[g.neighbor_ids(v)], minlength=g.num_node_types)


def dominant_neighbor_type(g: HeteroGraph, v: int) -> int:
    return int(np.argmax(neighbor_type_histogram(g, v)))


def generate(spec: SynthSpec = SynthSpec()) -> Dataset:
    """Build a labeled HIN deterministically from ``spec``.

    Type 0 is the target type. Each target draws a planned class and wires
    most of its edges to nodes of that type; a few edges among non-target
    nodes add 2-hop structure. Ties in a target's neighbor-type histogram are
    broken by adding edges until every target has a unique dominant type, and
    the label is read off the final graph.
    """
    rng = np.random.default_rng(spec.seed)
    T, N = spec.num_types, spec.num_nodes
    n_target = int(round(spec.target_fraction * N))
    rest = N - n_target
    counts = [n_target] + [rest // (T - 1) + (1 if i < rest % (T - 1) else 0) for i in range(T - 1)]
    node_type = np.repeat(np.arange(T), counts)
    members = [np.flatnonzero(node_type == t) for t in range(T)]
    targets = members[0]

    adj: list[set[int]] = [set() for _ in range(N)]
    edges: list[tuple[int, int, int]] = []

    def connect(a: int, b: int) -> bool:
        if a == b or b in adj[a]:
            return False
        adj[a].add(b)
        adj[b].add(a)
        ta, tb = sorted((int(node_type[a]), int(node_type[b])))
        edges.append((a, b, ta * T + tb))
        return True

    planned = rng.permutation(np.arange(n_target) % T)
    # target-target edges only join class-0 targets, so other targets never
    # pick up type-0 neighbors they did not ask for
    pool = [targets[planned == 0]] + members[1:]
    for v, c in zip(targets, planned):
        k = int(rng.integers(spec.min_degree, spec.max_degree + 1))
        tries = 0
        while len(adj[v]) < k and tries < 50 * k:
            tries += 1
            if rng.random() < spec.dominance:
                t = int(c)
            else:
                t = int(rng.choice([x for x in range(T) if x != c]))
            if t == 0 and c != 0:
                continue
            connect(int(v), int(rng.choice(pool[t])))
    others = np.flatnonzero(node_type != 0)
    for u in others:
        connect(int(u), int(rng.choice(others)))

    while True:
        tied = []
        for v in targets:
            hist = np.bincount(node_type[list(adj[v])], minlength=T)
            top = np.flatnonzero(hist == hist.max())
            if len(top) > 1:
                tied.append((int(v), top))
        if not tied:
            break
        for v, top in tied:
            t = int(rng.choice(top))
            while not connect(v, int(rng.choice(pool[t]))):
                pass

    src = np.array([e[0] for e in edges], dtype=np.int64)
    dst = np.array([e[1] for e in edges], dtype=np.int64)
    et = np.array([e[2] for e in edges], dtype=np.int64)
    num_edge_types = T * T
    blocks = tuple(
        rng.standard_normal(spec.feature_dim + t) + spec.feature_noise * rng.standard_normal((counts[t], spec.feature_dim + t))
        for t in range(T)
    )
    features = FeatureTable(blocks, _type_index(node_type, T), node_type)
    g = HeteroGraph.from_edges(node_type, src, dst, et, T, num_edge_types, features)

    y = np.array([dominant_neighbor_type(g, int(v)) for v in targets], dtype=np.int64)
    labels = LabelSet(targets.astype(np.int64), y, T, False)
    perm = rng.permutation(targets)
    n_tr = int(round(spec.train_fraction * n_target))
    n_va = int(round(spec.val_fraction * n_target))
    split = Split(np.sort(perm[:n_tr]), np.sort(perm[n_tr : n_tr + n_va]), np.sort(perm[n_tr + n_va :]))
    info = DatasetInfo(T, num_edge_types, 0, T, False, f"synth-{spec.seed}")
    return Dataset(g, labels, split, info)
