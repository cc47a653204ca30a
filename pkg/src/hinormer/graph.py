"""Heterogeneous graph storage, TSV loaders/writers and adjacency normalization.

A graph holds typed nodes and typed edges. Edges are kept as the records read
from disk (``num_edges`` counts records) while the CSR structure stores the
symmetrized, de-duplicated arc set used by every aggregation routine.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")
MANIFEST_NAME = "dataset.cfg"
FILE_NAMES = {"nodes": "nodes.tsv", "edges": "edges.tsv", "labels": "labels.tsv", "split": "split.tsv"}


class DataError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Per-type node features.

    ``blocks[t]`` is a dense ``(n_t, d_t)`` array, or ``None`` when type ``t`` is
    featureless and uses one-hot identity features of width ``num_nodes``.
    Row ``type_index[v]`` of ``blocks[node_type[v]]`` is node ``v``'s feature.
    """

    blocks: tuple
    type_index: np.ndarray
    node_type: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.node_type)

    @property
    def per_type_dim(self) -> tuple[int, ...]:
        return tuple(self.num_nodes if b is None else b.shape[1] for b in self.blocks)

    @property
    def is_onehot_identity(self) -> bool:
        return any(b is None for b in self.blocks)

    def is_onehot(self, t: int) -> bool:
        return self.blocks[t] is None

    def row(self, v: int) -> np.ndarray:
        t = int(self.node_type[v])
        block = self.blocks[t]
        if block is None:
            out = np.zeros(self.num_nodes)
            out[v] = 1.0
            return out
        return block[self.type_index[v]]


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    node_type: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_type: np.ndarray
    csr_offsets: np.ndarray
    csr_targets: np.ndarray
    csr_edge_ids: np.ndarray
    features: FeatureTable
    num_node_types: int
    num_edge_types: int
    node_ids: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(
        cls,
        node_type,
        edge_src,
        edge_dst,
        edge_type,
        num_node_types: int | None = None,
        num_edge_types: int | None = None,
        features: FeatureTable | None = None,
        node_ids=None,
    ) -> "HeteroGraph":
        node_type = np.asarray(node_type, dtype=np.int64)
        src = np.asarray(edge_src, dtype=np.int64)
        dst = np.asarray(edge_dst, dtype=np.int64)
        etype = np.asarray(edge_type, dtype=np.int64)
        n = len(node_type)
        if num_node_types is None:
            num_node_types = int(node_type.max()) + 1 if n else 0
        if num_edge_types is None:
            num_edge_types = int(etype.max()) + 1 if len(etype) else 0
        if not (len(src) == len(dst) == len(etype)):
            raise DataError("edge arrays differ in length")
        if n and (node_type.min() < 0 or node_type.max() >= num_node_types):
            bad = int(np.flatnonzero((node_type < 0) | (node_type >= num_node_types))[0])
            raise DataError(f"node {bad} has type {node_type[bad]} outside [0, {num_node_types})")
        for arr in (src, dst):
            out = (arr < 0) | (arr >= n)
            if out.any():
                raise DataError(f"dangling edge endpoint {int(arr[np.flatnonzero(out)[0]])}")
        if len(etype) and (etype.min() < 0 or etype.max() >= num_edge_types):
            raise DataError(f"edge type outside [0, {num_edge_types})")

        if features is None:
            features = onehot_features(node_type, num_node_types)
        if node_ids is None:
            node_ids = np.arange(n, dtype=np.int64)
        offsets, targets, eids = _build_csr(n, src, dst)
        return cls(
            node_type=node_type,
            edge_src=src,
            edge_dst=dst,
            edge_type=etype,
            csr_offsets=offsets,
            csr_targets=targets,
            csr_edge_ids=eids,
            features=features,
            num_node_types=int(num_node_types),
            num_edge_types=int(num_edge_types),
            node_ids=np.asarray(node_ids, dtype=np.int64),
        )

    @property
    def num_nodes(self) -> int:
        return len(self.node_type)

    @property
    def num_edges(self) -> int:
        return len(self.edge_src)

    @property
    def num_arcs(self) -> int:
        return int(self.csr_offsets[-1])

    def degree(self) -> np.ndarray:
        return np.diff(self.csr_offsets)

    def neighbor_ids(self, v: int) -> np.ndarray:
        return self.csr_targets[self.csr_offsets[v] : self.csr_offsets[v + 1]]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.node_type, self.csr_offsets, self.csr_targets, self.csr_edge_ids, self.edge_type):
            h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
        return h.hexdigest()


def _build_csr(n: int, src: np.ndarray, dst: np.ndarray):
    eid = np.arange(len(src), dtype=np.int64)
    loop = src == dst
    u = np.concatenate([src, dst[~loop]])
    v = np.concatenate([dst, src[~loop]])
    ids = np.concatenate([eid, eid[~loop]])
    order = np.lexsort((ids, v, u))
    u, v, ids = u[order], v[order], ids[order]
    if len(u):
        keep = np.ones(len(u), dtype=bool)
        keep[1:] = (u[1:] != u[:-1]) | (v[1:] != v[:-1])
        u, v, ids = u[keep], v[keep], ids[keep]
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(offsets, u + 1, 1)
    return np.cumsum(offsets), v, ids


def onehot_features(node_type: np.ndarray, num_node_types: int) -> FeatureTable:
    """Feature table where every type is featureless (lazy identity rows)."""
    return FeatureTable(
        blocks=tuple(None for _ in range(num_node_types)),
        type_index=_type_index(node_type, num_node_types),
        node_type=np.asarray(node_type, dtype=np.int64),
    )


def _type_index(node_type: np.ndarray, num_node_types: int) -> np.ndarray:
    idx = np.zeros(len(node_type), dtype=np.int64)
    for t in range(num_node_types):
        members = np.flatnonzero(node_type == t)
        idx[members] = np.arange(len(members))
    return idx


def neighbors(g: HeteroGraph, v: int) -> list[tuple[int, int]]:
    """``(neighbor, edge_type)`` pairs of ``v`` sorted by neighbor id."""
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range [0, {g.num_nodes})")
    lo, hi = g.csr_offsets[v], g.csr_offsets[v + 1]
    types = g.edge_type[g.csr_edge_ids[lo:hi]]
    return [(int(u), int(t)) for u, t in zip(g.csr_targets[lo:hi], types)]


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    matrix: sp.csr_matrix
    self_loops_added: bool


def adjacency_matrix(g: HeteroGraph, self_loops: bool = False) -> sp.csr_matrix:
    n = g.num_nodes
    data = np.ones(g.num_arcs)
    rows = np.repeat(np.arange(n), g.degree())
    a = sp.csr_matrix((data, (rows, g.csr_targets)), shape=(n, n))
    if self_loops:
        # a self-loop already present in the file stays at weight 1
        a = a.maximum(sp.identity(n, format="csr"))
    a.sort_indices()
    return a


def build_normalized_adjacency(g: HeteroGraph, self_loops: bool = False) -> NormalizedAdjacency:
    """Symmetric normalization ``D^-1/2 A D^-1/2``; isolated rows stay zero."""
    a = adjacency_matrix(g, self_loops)
    deg = np.asarray(a.sum(axis=1)).ravel()
    dinv = np.zeros_like(deg)
    nz = deg > 0
    dinv[nz] = deg[nz] ** -0.5
    d = sp.diags(dinv)
    mat = (d @ a @ d).tocsr()
    mat.sort_indices()
    return NormalizedAdjacency(matrix=mat, self_loops_added=self_loops)


def mean_adjacency(g: HeteroGraph, self_loops: bool = False) -> sp.csr_matrix:
    """Row-normalized adjacency ``D^-1 A`` (neighbor mean)."""
    a = adjacency_matrix(g, self_loops)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    mat = (sp.diags(inv) @ a).tocsr()
    mat.sort_indices()
    return mat


# ----------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class DatasetInfo:
    num_node_types: int
    num_edge_types: int
    target_type: int
    num_classes: int
    multilabel: bool = False
    name: str = ""

    @classmethod
    def read(cls, path: str | Path) -> "DatasetInfo":
        path = Path(path)
        if not path.exists():
            raise DataError(f"missing dataset manifest: {path}")
        values = {}
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
        try:
            return cls(
                num_node_types=int(values.pop("num_node_types")),
                num_edge_types=int(values.pop("num_edge_types")),
                target_type=int(values.pop("target_type")),
                num_classes=int(values.pop("num_classes")),
                multilabel=_parse_bool(values.pop("multilabel", "false")),
                name=values.pop("name", ""),
            )
        except KeyError as exc:
            raise DataError(f"{path}: missing key {exc.args[0]}") from None
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        finally:
            if values:
                logger.warning("ignoring unknown manifest keys: %s", sorted(values))

    def write(self, path: str | Path) -> None:
        lines = [
            f"name={self.name}",
            f"num_node_types={self.num_node_types}",
            f"num_edge_types={self.num_edge_types}",
            f"target_type={self.target_type}",
            f"num_classes={self.num_classes}",
            f"multilabel={'true' if self.multilabel else 'false'}",
        ]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True, eq=False)
class LabelSet:
    """Labels of target-type nodes.

    ``y`` holds class ids for multi-class data and a ``(n, C)`` 0/1 matrix for
    multi-label data; row ``i`` belongs to internal node ``nodes[i]``.
    """

    nodes: np.ndarray
    y: np.ndarray
    num_classes: int
    multilabel: bool = False

    def lookup(self, ids) -> np.ndarray:
        pos = {int(v): i for i, v in enumerate(self.nodes)}
        return self.y[[pos[int(v)] for v in ids]]


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class Dataset:
    graph: HeteroGraph
    labels: LabelSet
    split: Split
    info: DatasetInfo


def _lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if line.strip():
                yield lineno, line.split("\t")


def _int(tok: str, path: Path, lineno: int) -> int:
    try:
        return int(tok)
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed integer {tok!r}") from None


def load_graph(
    node_file,
    edge_file,
    label_file,
    split_file,
    feature_files: Mapping[int, str | Path] | None = None,
    info: DatasetInfo | None = None,
) -> tuple[HeteroGraph, LabelSet, Split]:
    """Read the four-file TSV format.

    Node ids may be arbitrary integers; they are remapped to ``0..n-1`` in the
    order they appear in the node file and the originals are kept on
    ``graph.node_ids``. ``feature_files`` optionally maps a node type to a
    ``.npy`` block whose rows follow that type's node order.
    """
    node_file, edge_file = Path(node_file), Path(edge_file)
    label_file, split_file = Path(label_file), Path(split_file)
    for p in (node_file, edge_file, label_file, split_file):
        if not p.exists():
            raise DataError(f"missing file: {p}")

    remap: dict[int, int] = {}
    raw_ids, types, feats = [], [], []
    for lineno, cols in _lines(node_file):
        if len(cols) not in (2, 3):
            raise DataError(f"{node_file}:{lineno}: expected 2 or 3 columns, got {len(cols)}")
        nid = _int(cols[0], node_file, lineno)
        if nid in remap:
            raise DataError(f"{node_file}:{lineno}: duplicate node id {nid}")
        remap[nid] = len(raw_ids)
        raw_ids.append(nid)
        types.append(_int(cols[1], node_file, lineno))
        tok = cols[2].strip() if len(cols) == 3 else "-"
        if tok == "-" or tok == "":
            feats.append(None)
        else:
            try:
                feats.append(np.array([float(x) for x in tok.split(",")]))
            except ValueError:
                raise DataError(f"{node_file}:{lineno}: malformed feature vector") from None

    node_type = np.array(types, dtype=np.int64)
    num_node_types = info.num_node_types if info else (int(node_type.max()) + 1 if len(types) else 0)
    if len(types) and (node_type.min() < 0 or node_type.max() >= num_node_types):
        bad = int(np.flatnonzero((node_type < 0) | (node_type >= num_node_types))[0])
        raise DataError(
            f"{node_file}: node {raw_ids[bad]} has type {types[bad]} outside [0, {num_node_types})"
        )
    features = _assemble_features(node_type, num_node_types, feats, raw_ids, feature_files)

    src, dst, et = [], [], []
    for lineno, cols in _lines(edge_file):
        if len(cols) != 3:
            raise DataError(f"{edge_file}:{lineno}: expected 3 columns, got {len(cols)}")
        a, b = _int(cols[0], edge_file, lineno), _int(cols[1], edge_file, lineno)
        for endpoint in (a, b):
            if endpoint not in remap:
                raise DataError(f"{edge_file}:{lineno}: dangling edge endpoint {endpoint}")
        src.append(remap[a])
        dst.append(remap[b])
        et.append(_int(cols[2], edge_file, lineno))
    num_edge_types = info.num_edge_types if info else (max(et) + 1 if et else 0)
    for lineno_idx, t in enumerate(et):
        if not 0 <= t < num_edge_types:
            raise DataError(f"{edge_file}: edge record {lineno_idx + 1} has type {t} outside [0, {num_edge_types})")

    graph = HeteroGraph.from_edges(
        node_type, src, dst, et, num_node_types, num_edge_types, features, node_ids=raw_ids
    )
    labels = _read_labels(label_file, remap, raw_ids, node_type, info)
    split = _read_split(split_file, remap, labels)
    return graph, labels, split


def _assemble_features(node_type, num_node_types, feats, raw_ids, feature_files):
    feature_files = dict(feature_files or {})
    type_index = _type_index(node_type, num_node_types)
    blocks = []
    for t in range(num_node_types):
        members = np.flatnonzero(node_type == t)
        inline = [feats[v] for v in members]
        have = [f is not None for f in inline]
        if t in feature_files:
            if any(have):
                raise DataError(f"node type {t} has both inline features and a feature file")
            block = np.load(feature_files[t]).astype(np.float64)
            if block.ndim != 2 or block.shape[0] != len(members):
                raise DataError(
                    f"feature file for type {t} has shape {block.shape}, expected ({len(members)}, d)"
                )
            blocks.append(block)
            continue
        if not any(have):
            blocks.append(None)
            continue
        width = len(next(f for f in inline if f is not None))
        for v, f in zip(members, inline):
            if f is None or len(f) != width:
                got = "none" if f is None else len(f)
                raise DataError(
                    f"node {raw_ids[v]}: feature width {got}, expected {width} for type {t}"
                )
        blocks.append(np.stack(inline) if inline else np.zeros((0, width)))
    return FeatureTable(blocks=tuple(blocks), type_index=type_index, node_type=node_type)


def _read_labels(path, remap, raw_ids, node_type, info):
    nodes, raw = [], []
    multilabel = info.multilabel if info else False
    for lineno, cols in _lines(path):
        if len(cols) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(cols)}")
        nid = _int(cols[0], path, lineno)
        if nid not in remap:
            raise DataError(f"{path}:{lineno}: unknown node id {nid}")
        v = remap[nid]
        if info is not None and node_type[v] != info.target_type:
            raise DataError(f"{path}:{lineno}: node {nid} is not of target type {info.target_type}")
        toks = [t for t in cols[1].split(",") if t.strip()]
        if "," in cols[1]:
            multilabel = True
        nodes.append(v)
        raw.append([_int(t, path, lineno) for t in toks])
    if not multilabel and any(len(r) != 1 for r in raw):
        raise DataError(f"{path}: multi-class labels need exactly one class per node")
    flat = [c for r in raw for c in r]
    num_classes = info.num_classes if info else (max(flat) + 1 if flat else 0)
    for r, v in zip(raw, nodes):
        for c in r:
            if not 0 <= c < num_classes:
                raise DataError(f"{path}: node {raw_ids[v]} label {c} outside [0, {num_classes})")
    if len(set(nodes)) != len(nodes):
        raise DataError(f"{path}: duplicate labeled node")
    if multilabel:
        y = np.zeros((len(nodes), num_classes), dtype=np.int64)
        for i, r in enumerate(raw):
            y[i, r] = 1
    else:
        y = np.array([r[0] for r in raw], dtype=np.int64)
    return LabelSet(np.array(nodes, dtype=np.int64), y, num_classes, multilabel)


def _read_split(path, remap, labels: LabelSet) -> Split:
    parts: dict[str, list[int]] = {k: [] for k in SPLIT_NAMES}
    seen = set()
    labeled = set(int(v) for v in labels.nodes)
    for lineno, cols in _lines(path):
        if len(cols) != 2 or cols[1].strip() not in parts:
            raise DataError(f"{path}:{lineno}: expected 'node_id<TAB>train|val|test'")
        nid = _int(cols[0], path, lineno)
        if nid not in remap:
            raise DataError(f"{path}:{lineno}: unknown node id {nid}")
        v = remap[nid]
        if v not in labeled:
            raise DataError(f"{path}:{lineno}: node {nid} has no label")
        if v in seen:
            raise DataError(f"{path}:{lineno}: node {nid} appears in more than one split entry")
        seen.add(v)
        parts[cols[1].strip()].append(v)
    if seen != labeled:
        raise DataError(f"{path}: {len(labeled - seen)} labeled nodes missing from the split")
    return Split(*(np.array(parts[k], dtype=np.int64) for k in SPLIT_NAMES))


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    info = DatasetInfo.read(directory / MANIFEST_NAME)
    feature_files = {
        int(p.stem.split("_", 1)[1]): p for p in sorted(directory.glob("features_*.npy"))
    }
    graph, labels, split = load_graph(
        directory / FILE_NAMES["nodes"],
        directory / FILE_NAMES["edges"],
        directory / FILE_NAMES["labels"],
        directory / FILE_NAMES["split"],
        feature_files=feature_files,
        info=info,
    )
    return Dataset(graph, labels, split, info)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(ds: Dataset, directory: str | Path) -> None:
    """Write ``ds`` in the TSV format; exact inverse of :func:`load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    g, ids = ds.graph, ds.graph.node_ids
    ft = g.features
    with open(directory / FILE_NAMES["nodes"], "w", encoding="utf-8") as fh:
        for v in range(g.num_nodes):
            t = int(g.node_type[v])
            block = ft.blocks[t]
            feat = "-" if block is None else ",".join(_fmt(x) for x in block[ft.type_index[v]])
            fh.write(f"{ids[v]}\t{t}\t{feat}\n")
    with open(directory / FILE_NAMES["edges"], "w", encoding="utf-8") as fh:
        for a, b, t in zip(g.edge_src, g.edge_dst, g.edge_type):
            fh.write(f"{ids[a]}\t{ids[b]}\t{t}\n")
    lab = ds.labels
    with open(directory / FILE_NAMES["labels"], "w", encoding="utf-8") as fh:
        for i, v in enumerate(lab.nodes):
            if lab.multilabel:
                val = ",".join(str(c) for c in np.flatnonzero(lab.y[i]))
                if "," not in val:
                    val += ","  # keeps single-label rows readable as multi-label
            else:
                val = str(int(lab.y[i]))
            fh.write(f"{ids[v]}\t{val}\n")
    with open(directory / FILE_NAMES["split"], "w", encoding="utf-8") as fh:
        for name in SPLIT_NAMES:
            for v in ds.split[name]:
                fh.write(f"{ids[v]}\t{name}\n")
    ds.info.write(directory / MANIFEST_NAME)


def dataset_checksum(directory: str | Path) -> str:
    """sha256 over the dataset files, in a fixed order."""
    directory = Path(directory)
    h = hashlib.sha256()
    names = [MANIFEST_NAME, *FILE_NAMES.values()]
    names += sorted(p.name for p in directory.glob("features_*.npy"))
    for name in names:
        p = directory / name
        if p.exists():
            h.update(name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# ----------------------------------------------------------------------------
# HGB benchmark layout (node.dat / link.dat / label.dat / label.dat.test)


def load_hgb(directory: str | Path, target_type: int = 0, val_ratio: float = 0.2, seed: int = 0) -> Dataset:
    """Load a dataset in the Heterogeneous Graph Benchmark layout.

    Types without attribute columns get one-hot identity features. A
    ``val_ratio`` share of ``label.dat`` nodes is moved to validation with a
    seeded permutation; ``label.dat.test`` nodes form the test split.
    """
    directory = Path(directory)
    node_path, link_path = directory / "node.dat", directory / "link.dat"
    for p in (node_path, link_path, directory / "label.dat"):
        if not p.exists():
            raise DataError(f"missing file: {p}")
    remap, raw_ids, types, feats = {}, [], [], []
    for lineno, cols in _lines(node_path):
        if len(cols) < 3:
            raise DataError(f"{node_path}:{lineno}: expected at least 3 columns")
        nid = _int(cols[0], node_path, lineno)
        remap[nid] = len(raw_ids)
        raw_ids.append(nid)
        types.append(_int(cols[2], node_path, lineno))
        if len(cols) > 3 and cols[3].strip():
            feats.append(np.array([float(x) for x in cols[3].split(",")]))
        else:
            feats.append(None)
    node_type = np.array(types, dtype=np.int64)
    num_node_types = int(node_type.max()) + 1
    features = _assemble_features(node_type, num_node_types, feats, raw_ids, None)

    src, dst, et = [], [], []
    for lineno, cols in _lines(link_path):
        if len(cols) < 3:
            raise DataError(f"{link_path}:{lineno}: expected at least 3 columns")
        a, b = _int(cols[0], link_path, lineno), _int(cols[1], link_path, lineno)
        for endpoint in (a, b):
            if endpoint not in remap:
                raise DataError(f"{link_path}:{lineno}: dangling edge endpoint {endpoint}")
        src.append(remap[a])
        dst.append(remap[b])
        et.append(_int(cols[2], link_path, lineno))
    num_edge_types = len(set(et))
    if sorted(set(et)) != list(range(num_edge_types)):
        raise DataError(f"{link_path}: edge type ids are not dense")
    graph = HeteroGraph.from_edges(
        node_type, src, dst, et, num_node_types, num_edge_types, features, node_ids=raw_ids
    )

    def read(path):
        out = []
        if not path.exists():
            return out
        for lineno, cols in _lines(path):
            if len(cols) < 4:
                raise DataError(f"{path}:{lineno}: expected 4 columns")
            out.append((remap[_int(cols[0], path, lineno)], [int(c) for c in cols[3].split(",") if c.strip()]))
        return out

    train_rows = read(directory / "label.dat")
    test_rows = read(directory / "label.dat.test")
    rows = train_rows + test_rows
    multilabel = any(len(r) != 1 for _, r in rows)
    num_classes = max(c for _, r in rows for c in r) + 1
    nodes = np.array([v for v, _ in rows], dtype=np.int64)
    if multilabel:
        y = np.zeros((len(rows), num_classes), dtype=np.int64)
        for i, (_, r) in enumerate(rows):
            y[i, r] = 1
    else:
        y = np.array([r[0] for _, r in rows], dtype=np.int64)
    labels = LabelSet(nodes, y, num_classes, multilabel)
    tr = nodes[: len(train_rows)]
    perm = np.random.default_rng(seed).permutation(len(tr))
    n_val = int(round(val_ratio * len(tr)))
    split = Split(np.sort(tr[perm[n_val:]]), np.sort(tr[perm[:n_val]]), nodes[len(train_rows) :])
    info = DatasetInfo(num_node_types, num_edge_types, target_type, num_classes, multilabel, directory.name)
    return Dataset(graph, labels, split, info)


def subgraph_stats(g: HeteroGraph) -> dict[str, int]:
    return {
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "num_node_types": g.num_node_types,
        "num_edge_types": g.num_edge_types,
    }


def permute_nodes(g: HeteroGraph, perm: Sequence[int]) -> HeteroGraph:
    """Relabel nodes so that old node ``v`` becomes ``perm[v]``."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.argsort(perm)
    node_type = g.node_type[inv]
    ft = g.features
    blocks = []
    for t, block in enumerate(ft.blocks):
        if block is None:
            blocks.append(None)
        else:
            old_members = inv[node_type == t]
            blocks.append(block[ft.type_index[old_members]])
    features = FeatureTable(tuple(blocks), _type_index(node_type, g.num_node_types), node_type)
    return HeteroGraph.from_edges(
        node_type, perm[g.edge_src], perm[g.edge_dst], g.edge_type,
        g.num_node_types, g.num_edge_types, features, node_ids=g.node_ids[inv],
    )
