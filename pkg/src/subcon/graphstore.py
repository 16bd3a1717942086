"""In-memory graph representation, class splits, synthetic generators and
the canonical GFB1 on-disk format.

A graph is undirected, unweighted and fully labeled. Adjacency is stored
once, symmetric, deduplicated and without self-loops (self-loops are added
downstream where a propagation rule needs them).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"GFB1"
_HEADER_BYTES = 4 + 4 * 8  # magic + M, E_directed, d, C as little-endian u64


class GraphFormatError(ValueError):
    """Malformed graph file; carries the byte offset of the offending field."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Graph:
    """Immutable sparse undirected attributed graph with labels.

    indptr/indices form a CSR adjacency storing each undirected edge in
    both directions. features is dense (M, d) float64, labels (M,) int64
    with every label < num_classes.
    """

    indptr: np.ndarray
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        for arr in (self.indptr, self.indices, self.features, self.labels):
            arr.setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.indptr.shape[0] - 1

    @property
    def num_edges(self) -> int:
        """Undirected edge count (each edge counted once)."""
        return self.indices.shape[0] // 2

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]


def _build_csr(num_nodes: int, rows: np.ndarray, cols: np.ndarray):
    """Canonical CSR from directed pairs: symmetrize, dedupe, strip loops,
    sort columns within each row."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    keep = rows != cols
    rows, cols = rows[keep], cols[keep]
    # both directions, then dedupe via linear codes
    r = np.concatenate([rows, cols])
    c = np.concatenate([cols, rows])
    codes = np.unique(r * np.int64(num_nodes) + c)
    r = codes // num_nodes
    c = codes % num_nodes
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, r + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, c.astype(np.int64)


def from_edges(num_nodes: int, edges: np.ndarray, features: np.ndarray,
               labels: np.ndarray, num_classes: int | None = None,
               class_names=None) -> Graph:
    """Construct a Graph from an (E, 2) undirected pair list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
        raise ValueError("edge endpoint out of range")
    features = np.ascontiguousarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.shape[0] != num_nodes or labels.shape[0] != num_nodes:
        raise ValueError("feature/label row count must equal num_nodes")
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature value")
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if num_nodes else 0
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label outside [0, num_classes)")
    indptr, indices = _build_csr(num_nodes, edges[:, 0], edges[:, 1])
    return Graph(indptr, indices, features, labels, int(num_classes),
                 tuple(class_names) if class_names else None)


def graph_hash(g: Graph) -> int:
    """Structural 64-bit hash of (M, indptr, indices); used to key caches."""
    h = hashlib.sha256()
    h.update(np.int64(g.num_nodes).tobytes())
    h.update(np.ascontiguousarray(g.indptr, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(g.indices, dtype="<i8").tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def average_degree(g: Graph) -> float:
    """2 |E| / M with |E| counting each undirected edge once."""
    if g.num_nodes == 0:
        raise ValueError("average degree undefined for empty graph")
    return g.indices.shape[0] / g.num_nodes


# ---------------------------------------------------------------------------
# GFB1 file format

def save_graph(g: Graph, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        header = np.array(
            [g.num_nodes, g.indices.shape[0], g.feature_dim, g.num_classes],
            dtype="<u8")
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(g.indptr, dtype="<u8").tobytes())
        f.write(np.ascontiguousarray(g.indices, dtype="<u8").tobytes())
        f.write(np.ascontiguousarray(g.features, dtype="<f4").tobytes())
        f.write(np.ascontiguousarray(g.labels, dtype="<u4").tobytes())


def load_graph(path) -> Graph:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < _HEADER_BYTES:
        raise GraphFormatError("truncated header", len(data))
    if data[:4] != MAGIC:
        raise GraphFormatError(f"bad magic {data[:4]!r}", 0)
    m, e_dir, d, c = (int(v) for v in np.frombuffer(data, "<u8", 4, 4))
    off_indptr = _HEADER_BYTES
    off_indices = off_indptr + 8 * (m + 1)
    off_feat = off_indices + 8 * e_dir
    off_labels = off_feat + 4 * m * d
    expected = off_labels + 4 * m
    if len(data) != expected:
        raise GraphFormatError(
            f"file size {len(data)} != expected {expected}", len(data))

    indptr = np.frombuffer(data, "<u8", m + 1, off_indptr).astype(np.int64)
    if indptr[0] != 0:
        raise GraphFormatError("row offsets must start at 0", off_indptr)
    steps = np.diff(indptr)
    if np.any(steps < 0):
        i = int(np.argmax(steps < 0)) + 1
        raise GraphFormatError("row offsets not monotone", off_indptr + 8 * i)
    if indptr[-1] != e_dir:
        raise GraphFormatError(
            f"last row offset {int(indptr[-1])} != edge count {e_dir}",
            off_indptr + 8 * m)

    indices = np.frombuffer(data, "<u8", e_dir, off_indices).astype(np.int64)
    bad = indices >= m
    if np.any(bad):
        i = int(np.argmax(bad))
        raise GraphFormatError(
            f"column index {int(indices[i])} out of range for M={m}",
            off_indices + 8 * i)

    feats32 = np.frombuffer(data, "<f4", m * d, off_feat)
    finite = np.isfinite(feats32)
    if not finite.all():
        i = int(np.argmax(~finite))
        raise GraphFormatError("non-finite feature value", off_feat + 4 * i)
    features = feats32.astype(np.float64).reshape(m, d)

    labels = np.frombuffer(data, "<u4", m, off_labels).astype(np.int64)
    bad = labels >= c
    if np.any(bad):
        i = int(np.argmax(bad))
        raise GraphFormatError(
            f"label {int(labels[i])} >= class count {c}", off_labels + 4 * i)

    # canonicalize: strip self-loops, dedupe, symmetrize if one direction stored
    rows = np.repeat(np.arange(m, dtype=np.int64), steps)
    indptr, indices = _build_csr(m, rows, indices)
    return Graph(indptr, indices, features, labels, c)


# ---------------------------------------------------------------------------
# class splits

@dataclass(frozen=True)
class ClassSplit:
    base_classes: frozenset
    novel_classes: frozenset

    def __post_init__(self):
        if self.base_classes & self.novel_classes:
            raise ValueError("base and novel classes must be disjoint")

    def validate_cover(self, labels: np.ndarray) -> None:
        present = set(int(c) for c in np.unique(labels))
        missing = present - (self.base_classes | self.novel_classes)
        if missing:
            raise ValueError(f"classes {sorted(missing)} missing from split")


def save_split(split: ClassSplit, path) -> None:
    with open(path, "w") as f:
        json.dump({"base_classes": sorted(split.base_classes),
                   "novel_classes": sorted(split.novel_classes)}, f, indent=1)


def load_split(path) -> ClassSplit:
    with open(path) as f:
        doc = json.load(f)
    return ClassSplit(frozenset(doc["base_classes"]),
                      frozenset(doc["novel_classes"]))


def split_sidecar_path(graph_path) -> str:
    return str(graph_path) + ".split.json"


# ---------------------------------------------------------------------------
# synthetic graphs

@dataclass(frozen=True)
class SyntheticSpec:
    """Stochastic block model with one block per class and Gaussian features
    around separated per-class means."""

    blocks: tuple
    p_in: float
    p_out: float
    feature_dim: int
    noise_scale: float = 1.0
    separation: float = 1.0
    nuisance_dim: int = 0
    nuisance_scale: float = 0.0
    noise_smoothing: int = 0
    mean_rank: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if not self.blocks or any(b <= 0 for b in self.blocks):
            raise ValueError("every block must be non-empty")
        if not (0.0 <= self.p_out <= self.p_in <= 1.0):
            raise ValueError("require 0 <= p_out <= p_in <= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not (0 <= self.nuisance_dim <= self.feature_dim):
            raise ValueError("nuisance_dim must lie in [0, feature_dim]")
        if self.noise_smoothing < 0:
            raise ValueError("noise_smoothing must be >= 0")
        if self.mean_rank < 0:
            raise ValueError("mean_rank must be >= 0")

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticSpec":
        known = {"blocks", "p_in", "p_out", "feature_dim", "noise_scale",
                 "separation", "nuisance_dim", "nuisance_scale",
                 "noise_smoothing", "mean_rank", "seed"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown SyntheticSpec keys: {sorted(unknown)}")
        return cls(**doc)


_DENSE_PAIR_LIMIT = 4_000_000


def _sample_pairs_dense(rng, n_a, n_b, p, same_block):
    if same_block:
        i, j = np.triu_indices(n_a, k=1)
    else:
        i, j = np.meshgrid(np.arange(n_a), np.arange(n_b), indexing="ij")
        i, j = i.ravel(), j.ravel()
    keep = rng.random(i.shape[0]) < p
    return i[keep], j[keep]


def _sample_pairs_sparse(rng, n_a, n_b, p, same_block):
    """Edge-count-first sampling for large sparse blocks. Duplicate draws
    are discarded, which is negligible at the densities this path serves."""
    n_pairs = n_a * (n_a - 1) // 2 if same_block else n_a * n_b
    count = int(rng.binomial(n_pairs, p))
    if count == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    if same_block:
        i_parts, j_parts, have = [], [], 0
        while have < count:
            draw = 2 * (count - have) + 16
            ii = rng.integers(0, n_a, draw)
            jj = rng.integers(0, n_a, draw)
            lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
            keep = lo < hi
            i_parts.append(lo[keep])
            j_parts.append(hi[keep])
            have += int(keep.sum())
        i = np.concatenate(i_parts)
        j = np.concatenate(j_parts)
        codes = np.unique(i * np.int64(n_a) + j)[:count]
        return codes // n_a, codes % n_a
    lin = np.unique(rng.integers(0, n_pairs, count + count // 8 + 16))[:count]
    return lin // n_b, lin % n_b


def generate_sbm(spec: SyntheticSpec) -> Graph:
    """Stochastic block model graph, deterministic given spec.seed."""
    rng = np.random.default_rng(spec.seed)
    blocks = np.asarray(spec.blocks, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(blocks)])
    m = int(starts[-1])
    c = len(blocks)
    labels = np.repeat(np.arange(c, dtype=np.int64), blocks)

    if spec.mean_rank:
        # class means confined to a shared low-dimensional subspace
        basis = rng.standard_normal((spec.mean_rank, spec.feature_dim))
        coef = rng.standard_normal((c, spec.mean_rank))
        means = spec.separation / np.sqrt(spec.mean_rank) * (coef @ basis)
    else:
        means = spec.separation * rng.standard_normal((c, spec.feature_dim))
    noise = rng.standard_normal((m, spec.feature_dim))
    nuisance = None
    if spec.nuisance_dim:
        nuisance = spec.nuisance_scale * rng.standard_normal(
            (m, spec.nuisance_dim))

    edge_rows, edge_cols = [], []
    for a in range(c):
        for b in range(a, c):
            p = spec.p_in if a == b else spec.p_out
            if p == 0.0:
                continue
            n_a, n_b = int(blocks[a]), int(blocks[b])
            n_pairs = n_a * (n_a - 1) // 2 if a == b else n_a * n_b
            if n_pairs <= _DENSE_PAIR_LIMIT:
                i, j = _sample_pairs_dense(rng, n_a, n_b, p, a == b)
            else:
                i, j = _sample_pairs_sparse(rng, n_a, n_b, p, a == b)
            edge_rows.append(i + starts[a])
            edge_cols.append(j + starts[b])

    if edge_rows:
        edges = np.stack([np.concatenate(edge_rows),
                          np.concatenate(edge_cols)], axis=1)
    else:
        edges = np.empty((0, 2), dtype=np.int64)

    if spec.noise_smoothing:
        # spatially correlate the noise by repeated neighbor averaging,
        # rescaled each pass to keep its overall standard deviation
        indptr, indices = _build_csr(m, edges[:, 0], edges[:, 1])
        deg = np.diff(indptr).astype(np.float64)
        seg = np.repeat(np.arange(m), np.diff(indptr))
        for _ in range(spec.noise_smoothing):
            summed = np.zeros_like(noise)
            np.add.at(summed, seg, noise[indices])
            noise = (noise + summed) / (1.0 + deg)[:, None]
            noise *= 1.0 / max(noise.std(), 1e-12)

    features = means[labels] + spec.noise_scale * noise
    if nuisance is not None:
        features[:, :spec.nuisance_dim] += nuisance
    return from_edges(m, edges, features, labels, num_classes=c)
