#!/usr/bin/env python3
"""Convert public benchmark graphs into the canonical GFB1 binary format.

Supported source distributions:

  corafull    single npz archive (cora_full.npz style) holding a CSR
              adjacency (adj_*), CSR node attributes (attr_*) and labels
  reddit      reddit_data.npz (feature, label) + reddit_graph.npz
              (scipy CSR archive)
  ogbn-arxiv  raw/ directory of csv.gz files (edge, node-feat, node-label)

Output is a GFB1 graph file, a .split.json sidecar assigning every class
to the base or novel side, and a .manifest.json recording the source
checksum, the verified counts and the split seed.

Usage:
    python3 convert.py --dataset corafull --src <dir> --out <path> --seed 0
"""
import argparse
import csv
import dataclasses
import gzip
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MAGIC = b"GFB1"

# Published statistics for the supported datasets: nodes, undirected
# edges, feature dim, classes, and base/novel class counts.
EXPECTED = {
    "corafull": (19793, 126842, 8710, 70, 42, 28),
    "reddit": (232965, 11606919, 602, 41, 24, 17),
    "ogbn-arxiv": (169343, 1166243, 128, 40, 24, 16),
}


class ConversionError(Exception):
    """Base class for conversion failures."""


class SchemaError(ConversionError):
    """Source files do not match the expected native schema."""


class ChecksumError(ConversionError):
    """Source checksum differs from the expected digest."""


class CountMismatchError(ConversionError):
    """Converted counts differ from the published statistics."""


@dataclasses.dataclass(frozen=True)
class ConversionManifest:
    dataset: str
    source_checksum: str
    num_nodes: int
    num_edges: int
    feature_dim: int
    num_classes: int
    base_classes: tuple
    novel_classes: tuple
    split_seed: int
    counts_verified: bool

    def to_json(self) -> str:
        doc = dataclasses.asdict(self)
        doc["base_classes"] = list(self.base_classes)
        doc["novel_classes"] = list(self.novel_classes)
        return json.dumps(doc, indent=1)


# ---------------------------------------------------------------------------
# source readers: each returns (adjacency as scipy CSR, features float array,
# integer labels)

def _npz_get(archive, key, path):
    if key not in archive:
        raise SchemaError(f"{path}: missing array {key!r}")
    return archive[key]


def read_corafull(src: Path):
    candidates = sorted(src.glob("*.npz"))
    if not candidates:
        raise SchemaError(f"no npz archive found in {src}")
    path = candidates[0]
    with np.load(path, allow_pickle=False) as z:
        adj = sp.csr_matrix(
            (_npz_get(z, "adj_data", path), _npz_get(z, "adj_indices", path),
             _npz_get(z, "adj_indptr", path)),
            shape=tuple(_npz_get(z, "adj_shape", path)))
        attr = sp.csr_matrix(
            (_npz_get(z, "attr_data", path),
             _npz_get(z, "attr_indices", path),
             _npz_get(z, "attr_indptr", path)),
            shape=tuple(_npz_get(z, "attr_shape", path)))
        labels = np.asarray(_npz_get(z, "labels", path))
    return adj, attr.toarray(), labels


def read_reddit(src: Path):
    data_path = src / "reddit_data.npz"
    graph_path = src / "reddit_graph.npz"
    for p in (data_path, graph_path):
        if not p.exists():
            raise SchemaError(f"missing source file {p}")
    with np.load(data_path, allow_pickle=False) as z:
        features = np.asarray(_npz_get(z, "feature", data_path))
        labels = np.asarray(_npz_get(z, "label", data_path))
    try:
        adj = sp.load_npz(graph_path).tocsr()
    except ValueError as exc:
        raise SchemaError(f"{graph_path}: not a sparse matrix archive "
                          f"({exc})") from exc
    return adj, features, labels


def _read_csv_gz(path: Path) -> np.ndarray:
    if not path.exists():
        raise SchemaError(f"missing source file {path}")
    with gzip.open(path, "rt", newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise SchemaError(f"{path}: empty table")
    try:
        return np.asarray(rows, dtype=np.float64)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric cell ({exc})") from exc


def read_ogbn_arxiv(src: Path):
    raw = src / "raw" if (src / "raw").is_dir() else src
    edges = _read_csv_gz(raw / "edge.csv.gz")
    features = _read_csv_gz(raw / "node-feat.csv.gz")
    labels = _read_csv_gz(raw / "node-label.csv.gz")
    if edges.ndim != 2 or edges.shape[1] != 2:
        raise SchemaError(f"{raw / 'edge.csv.gz'}: expected two columns")
    if labels.shape[1] != 1:
        raise SchemaError(f"{raw / 'node-label.csv.gz'}: expected one column")
    m = features.shape[0]
    src_ids = edges[:, 0].astype(np.int64)
    dst_ids = edges[:, 1].astype(np.int64)
    if src_ids.size and (src_ids.max() >= m or dst_ids.max() >= m):
        raise SchemaError("edge endpoint out of range for node table")
    adj = sp.csr_matrix((np.ones(src_ids.size), (src_ids, dst_ids)),
                        shape=(m, m))
    return adj, features, labels[:, 0].astype(np.int64)


READERS = {
    "corafull": read_corafull,
    "reddit": read_reddit,
    "ogbn-arxiv": read_ogbn_arxiv,
}


# ---------------------------------------------------------------------------
# normalization and output

def source_checksum(src: Path) -> str:
    """sha256 over every regular file under src, in sorted path order."""
    digest = hashlib.sha256()
    for path in sorted(p for p in src.rglob("*") if p.is_file()):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def symmetrize(adj: sp.csr_matrix) -> sp.csr_matrix:
    """Undirected simple adjacency: add reverse edges, drop self loops,
    collapse duplicates to 0/1 entries."""
    adj = (adj + adj.T).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    adj.data[:] = 1.0
    adj.sort_indices()
    return adj


def normalize_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Map raw label values onto 0..C-1 in sorted-value order."""
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    values, dense = np.unique(labels, return_inverse=True)
    return dense.astype(np.int64), int(values.size)


def class_split(num_classes: int, n_base: int, seed: int):
    """Seed-determined assignment of classes to base/novel sides."""
    perm = np.random.default_rng(seed).permutation(num_classes)
    base = sorted(int(c) for c in perm[:n_base])
    novel = sorted(int(c) for c in perm[n_base:])
    return tuple(base), tuple(novel)


def write_gfb1(path: Path, adj: sp.csr_matrix, features: np.ndarray,
               labels: np.ndarray, num_classes: int) -> None:
    m = adj.shape[0]
    header = np.array([m, adj.indices.size, features.shape[1], num_classes],
                      dtype="<u8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(header.tobytes())
    buf.write(np.ascontiguousarray(adj.indptr, dtype="<u8").tobytes())
    buf.write(np.ascontiguousarray(adj.indices, dtype="<u8").tobytes())
    buf.write(np.ascontiguousarray(features, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(labels, dtype="<u4").tobytes())
    path.write_bytes(buf.getvalue())


def convert(dataset: str, src, out, seed: int = 0, checksum: str = None,
            allow_count_mismatch: bool = False) -> ConversionManifest:
    src, out = Path(src), Path(out)
    if not src.is_dir():
        raise ConversionError(f"source directory {src} does not exist")
    observed_checksum = source_checksum(src)
    if checksum is not None and checksum.lower() != observed_checksum:
        raise ChecksumError(f"source checksum {observed_checksum} does not "
                            f"match expected {checksum.lower()}")

    adj, features, labels = READERS[dataset](src)
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise SchemaError("node features must form a 2-d table")
    if not np.all(np.isfinite(features)):
        raise SchemaError("non-finite feature value in source")
    m = features.shape[0]
    if adj.shape != (m, m):
        raise SchemaError(f"adjacency shape {adj.shape} does not match "
                          f"{m} feature rows")
    labels, num_classes = normalize_labels(labels)
    if labels.size != m:
        raise SchemaError(f"{labels.size} labels for {m} nodes")

    adj = symmetrize(adj)
    num_edges = adj.indices.size // 2

    exp_m, exp_e, exp_d, exp_c, exp_base, exp_novel = EXPECTED[dataset]
    observed = (m, num_edges, features.shape[1], num_classes)
    verified = observed == (exp_m, exp_e, exp_d, exp_c)
    if not verified and not allow_count_mismatch:
        raise CountMismatchError(
            f"{dataset}: observed nodes/edges/features/classes {observed} "
            f"differ from published {(exp_m, exp_e, exp_d, exp_c)}")

    n_base = exp_base if num_classes == exp_c else max(
        1, round(num_classes * exp_base / exp_c))
    base, novel = class_split(num_classes, n_base, seed)

    write_gfb1(out, adj, features, labels, num_classes)
    split_path = Path(str(out) + ".split.json")
    split_path.write_text(json.dumps(
        {"base_classes": list(base), "novel_classes": list(novel)}, indent=1))

    manifest = ConversionManifest(
        dataset=dataset, source_checksum=observed_checksum, num_nodes=m,
        num_edges=num_edges, feature_dim=features.shape[1],
        num_classes=num_classes, base_classes=base, novel_classes=novel,
        split_seed=seed, counts_verified=verified)
    Path(str(out) + ".manifest.json").write_text(manifest.to_json())
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Convert a benchmark graph distribution to GFB1.")
    parser.add_argument("--dataset", required=True, choices=sorted(READERS))
    parser.add_argument("--src", required=True,
                        help="directory holding the native distribution")
    parser.add_argument("--out", required=True, help="output GFB1 path")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for the base/novel class split")
    parser.add_argument("--checksum",
                        help="expected sha256 of the source directory")
    parser.add_argument("--allow-count-mismatch", action="store_true",
                        help="convert even if counts differ from the "
                             "published statistics")
    args = parser.parse_args(argv)
    try:
        manifest = convert(args.dataset, args.src, args.out, seed=args.seed,
                           checksum=args.checksum,
                           allow_count_mismatch=args.allow_count_mismatch)
    except ConversionError as exc:
        print(f"convert: error: {exc}", file=sys.stderr)
        return 1
    print(manifest.to_json())
    return 0


if __name__ == "__main__":
    sys.exit(main())
