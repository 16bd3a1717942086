"""Connectivity scores (value-diffusion NAD and personalized PageRank),
score-column finalization with a fixed self-score, top-rank selection and
subgraph view construction.

Score columns are computed lazily per node and never materialized as a
dense M x M matrix; per-node top entries can be cached in memory and in a
binary cache file.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .graphstore import Graph, graph_hash

DEFAULT_GAMMA = 0.3
DEFAULT_PHI = 0.15
DEFAULT_EPS = 0.01
DEFAULT_ETA = 0.5
DEFAULT_NAD_ITERATIONS = 50
DEFAULT_NAD_VECTORS = 5

CACHE_MAGIC = b"GSC1"
_METHOD_TAGS = {"nad": 0, "ppr": 1}


class ConvergenceError(RuntimeError):
    """Power iteration failed to reach tolerance; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class CacheMismatchError(ValueError):
    """Score cache file does not match the graph or score parameters."""


def nad_iterate(g: Graph, eta: float = DEFAULT_ETA,
                iterations: int = DEFAULT_NAD_ITERATIONS,
                seed: int = 0, isolated: str = "keep") -> np.ndarray:
    """Run the neighbor-averaging relaxation from a random (0,1) init.

    Each sweep replaces every node's value with a degree-normalized
    neighbor average, then relaxes toward it with mixing weight eta.
    Isolated nodes either keep their value ("keep") or raise ("error").
    """
    if not (0.0 < eta < 1.0):
        raise ValueError("eta must be in (0, 1)")
    if isolated not in ("keep", "error"):
        raise ValueError("isolated policy must be 'keep' or 'error'")
    if isolated == "error" and np.any(np.diff(g.indptr) == 0):
        raise ValueError("graph has isolated nodes and no fallback policy")
    rng = np.random.default_rng(seed)
    u0 = rng.uniform(0.0, 1.0, g.num_nodes)
    return _kernels.nad_sweep(g.indptr, g.indices, u0, eta, iterations)


@dataclass
class ScoreSource:
    """Lazily evaluated per-node connectivity score provider.

    For NAD the converged value vectors (n_vectors, M) are held; columns
    are derived from mean absolute value differences. For PPR columns are
    computed by power iteration on demand. Finalized columns always have
    the diagonal set to gamma and off-diagonal mass rescaled to 1 - gamma.
    """

    method: str
    gamma: float = DEFAULT_GAMMA
    eps: float = DEFAULT_EPS
    nad_u: np.ndarray | None = None
    phi: float = DEFAULT_PHI
    tol: float = 1e-12
    max_iter: int = 10_000
    literal_ppr: bool = False  # debug: score by the raw one-step form
    cache_width: int = 64
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.method not in ("nad", "ppr"):
            raise ValueError(f"unknown score method {self.method!r}")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")

    @classmethod
    def nad(cls, g: Graph, eta: float = DEFAULT_ETA,
            iterations: int = DEFAULT_NAD_ITERATIONS,
            n_vectors: int = DEFAULT_NAD_VECTORS, seed: int = 0,
            gamma: float = DEFAULT_GAMMA, eps: float = DEFAULT_EPS,
            cache_width: int = 64) -> "ScoreSource":
        u = np.stack([nad_iterate(g, eta, iterations, seed=seed + k)
                      for k in range(n_vectors)])
        return cls("nad", gamma=gamma, eps=eps, nad_u=u,
                   cache_width=cache_width)

    @classmethod
    def ppr(cls, gamma: float = DEFAULT_GAMMA, phi: float = DEFAULT_PHI,
            tol: float = 1e-12, max_iter: int = 10_000,
            literal: bool = False, cache_width: int = 64) -> "ScoreSource":
        if not (0.0 < phi < 1.0):
            raise ValueError("phi must be in (0, 1)")
        return cls("ppr", gamma=gamma, phi=phi, tol=tol, max_iter=max_iter,
                   literal_ppr=literal, cache_width=cache_width)


def finalize_column(raw: np.ndarray, j: int, gamma: float) -> np.ndarray:
    """Set the self-score to gamma and rescale the rest to sum to 1-gamma."""
    s = np.asarray(raw, dtype=np.float64).copy()
    s[j] = 0.0
    total = s.sum()
    if total > 0:
        s *= (1.0 - gamma) / total
    s[j] = gamma
    return s


def nad_raw_scores(source: ScoreSource, j: int) -> np.ndarray:
    """Reciprocal of the mean absolute value-vector difference to node j."""
    diffs = np.abs(source.nad_u - source.nad_u[:, j:j + 1]).mean(axis=0)
    return 1.0 / (diffs + source.eps)


def nad_scores(source: ScoreSource, j: int) -> np.ndarray:
    if source.method != "nad" or source.nad_u is None:
        raise ValueError("source is not a converged NAD score source")
    return finalize_column(nad_raw_scores(source, j), j, source.gamma)


def ppr_raw_scores(source: ScoreSource, g: Graph, j: int) -> np.ndarray:
    """Personalized PageRank distribution of node j (sums to 1)."""
    if g.indptr[j + 1] == g.indptr[j]:
        raise ValueError(f"node {j} has degree 0")
    s, _, resid = _kernels.ppr_power(g.indptr, g.indices, j, source.phi,
                                     source.tol, source.max_iter)
    if resid >= source.tol:
        raise ConvergenceError(
            f"PPR power iteration did not converge for node {j}", resid)
    return s


def ppr_literal_raw_scores(source: ScoreSource, g: Graph,
                           j: int) -> np.ndarray:
    """One-step teleport form without the resolvent, kept for comparison."""
    m = g.num_nodes
    s = np.zeros(m)
    s[j] = source.phi
    nbrs = g.neighbors(j)
    deg = g.indptr[j + 1] - g.indptr[j]
    if deg > 0:
        s[nbrs] -= source.phi * (1.0 - source.phi) / deg
    return s


def ppr_scores(source: ScoreSource, g: Graph, j: int) -> np.ndarray:
    if source.method != "ppr":
        raise ValueError("source is not a PPR score source")
    if source.literal_ppr:
        raw = ppr_literal_raw_scores(source, g, j)
    else:
        raw = ppr_raw_scores(source, g, j)
    return finalize_column(raw, j, source.gamma)


def score_column(source: ScoreSource, g: Graph, j: int) -> np.ndarray:
    """Finalized score column of node j (length M)."""
    if source.method == "nad":
        return nad_scores(source, j)
    return ppr_scores(source, g, j)


def top_rank(s: np.ndarray, alpha: int, exclude: int) -> np.ndarray:
    """Ids of the alpha highest-scoring nodes excluding `exclude`.

    Descending score, ties broken by ascending id; zero-score candidates
    pad the tail in ascending id order.
    """
    m = s.shape[0]
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    if alpha >= m:
        raise ValueError(f"alpha={alpha} must be < M={m}")
    s = np.asarray(s, dtype=np.float64)
    cand = np.arange(m)
    k = alpha + 1  # room for the excluded id
    if m > 4 * k and m > 4096:
        # narrow to everything at or above the k-th largest score so the
        # final ordering (and its tie-breaking) stays exact
        thresh = s[np.argpartition(-s, k - 1)[:k]].min()
        cand = np.flatnonzero(s >= thresh)
    order = cand[np.lexsort((cand, -s[cand]))]
    order = order[order != exclude]
    return order[:alpha].astype(np.int64)


def _topk_entries(source: ScoreSource, g: Graph, j: int):
    """Cached (ids, scores) of the top cache_width finalized off-diagonal
    entries of column j, in canonical top_rank order."""
    hit = source._cache.get(j)
    if hit is not None:
        return hit
    s = score_column(source, g, j)
    width = min(source.cache_width, g.num_nodes - 1)
    ids = top_rank(s, width, j)
    entry = (ids, s[ids].astype(np.float64))
    source._cache[j] = entry
    return entry


def _induced_adjacency(g: Graph, members: np.ndarray) -> np.ndarray:
    """Dense symmetric-normalized self-looped adjacency over `members`."""
    k = members.shape[0]
    order = np.argsort(members)
    sorted_members = members[order]
    adj = np.zeros((k, k))
    for local in range(k):
        nbrs = g.neighbors(int(members[local]))
        if nbrs.shape[0] == 0:
            continue
        pos = np.searchsorted(sorted_members, nbrs)
        pos = np.minimum(pos, k - 1)
        hit = sorted_members[pos] == nbrs
        adj[local, order[pos[hit]]] = 1.0
    adj[np.arange(k), np.arange(k)] = 1.0  # self-loops
    dhat = adj.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(dhat)
    return adj * np.outer(inv_sqrt, inv_sqrt)


@dataclass(frozen=True)
class SubgraphView:
    """A centric node plus its top-alpha neighbors by connectivity score:
    normalized induced adjacency, sliced features, normalized weights."""

    centric: int
    members: np.ndarray
    adj_norm: np.ndarray
    features: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if self.members[0] != self.centric:
            raise ValueError("centric node must be member 0")
        if len(set(self.members.tolist())) != self.members.shape[0]:
            raise ValueError("members must be distinct")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if not np.allclose(self.adj_norm, self.adj_norm.T):
            raise ValueError("induced adjacency must be symmetric")


def build_subgraph(g: Graph, source: ScoreSource, j: int,
                   alpha: int) -> SubgraphView:
    """Augmented view of node j: [j] + top-alpha scored nodes."""
    if alpha + 1 > g.num_nodes:
        raise ValueError(f"alpha+1={alpha + 1} exceeds M={g.num_nodes}")
    if alpha <= source.cache_width:
        ids, scores = _topk_entries(source, g, j)
        ids, scores = ids[:alpha], scores[:alpha]
    else:
        s = score_column(source, g, j)
        ids = top_rank(s, alpha, j)
        scores = s[ids]
    members = np.concatenate([[j], ids]).astype(np.int64)
    weights = np.concatenate([[source.gamma], scores])
    weights = weights / weights.sum()
    return SubgraphView(
        centric=int(j),
        members=members,
        adj_norm=_induced_adjacency(g, members),
        features=np.ascontiguousarray(g.features[members]),
        weights=weights,
    )


# ---------------------------------------------------------------------------
# score cache file

def write_score_cache(path, g: Graph, source: ScoreSource,
                      nodes=None) -> int:
    """Persist per-node top entries. Returns number of records written."""
    if nodes is None:
        nodes = range(g.num_nodes)
    nodes = np.asarray(list(nodes), dtype=np.int64)
    width = min(source.cache_width, g.num_nodes - 1)
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(np.uint64(graph_hash(g)).tobytes())
        f.write(np.uint8(_METHOD_TAGS[source.method]).tobytes())
        f.write(b"\x00\x00\x00")
        f.write(np.float32(source.gamma).tobytes())
        f.write(np.uint32(width).tobytes())
        f.write(np.uint64(nodes.shape[0]).tobytes())
        for j in nodes:
            ids, scores = _topk_entries(source, g, int(j))
            f.write(np.uint64(j).tobytes())
            f.write(ids[:width].astype("<u8").tobytes())
            f.write(scores[:width].astype("<f4").tobytes())
    return int(nodes.shape[0])


def load_score_cache(path, g: Graph, source: ScoreSource) -> int:
    """Populate the in-memory cache of `source` from a cache file.

    The file must match the graph hash, method and gamma. Cached scores
    are f32 on disk; they are used as stored. Returns records loaded.
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CACHE_MAGIC:
        raise CacheMismatchError("bad score cache magic")
    ghash = int(np.frombuffer(data, "<u8", 1, 4)[0])
    method_tag = data[12]
    gamma = float(np.frombuffer(data, "<f4", 1, 16)[0])
    width = int(np.frombuffer(data, "<u4", 1, 20)[0])
    count = int(np.frombuffer(data, "<u8", 1, 24)[0])
    if ghash != graph_hash(g):
        raise CacheMismatchError("cache was built for a different graph")
    if method_tag != _METHOD_TAGS[source.method]:
        raise CacheMismatchError("cache method does not match source")
    if abs(gamma - source.gamma) > 1e-6:
        raise CacheMismatchError("cache gamma does not match source")
    if width > source.cache_width:
        source.cache_width = width
    elif width < min(source.cache_width, g.num_nodes - 1):
        warnings.warn("score cache narrower than requested cache width; "
                      "using stored width", stacklevel=2)
        source.cache_width = width
    rec = 8 + 8 * width + 4 * width
    off = 32
    for _ in range(count):
        j = int(np.frombuffer(data, "<u8", 1, off)[0])
        ids = np.frombuffer(data, "<u8", width, off + 8).astype(np.int64)
        scores = np.frombuffer(data, "<f4", width,
                               off + 8 + 8 * width).astype(np.float64)
        source._cache[j] = (ids, scores)
        off += rec
    return count
