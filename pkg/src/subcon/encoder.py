"""Subgraph encoder: one graph-convolution layer with PReLU, row L2
normalization, and the score-weighted sigmoid readout."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import autodiff as ad
from .connectivity import SubgraphView

CHECKPOINT_VERSION = 1
DEFAULT_EMBED_DIM = 64
DEFAULT_PRELU_SLOPE = 0.25


@dataclass
class EncoderParams:
    """Learned encoder state: projection weight (d, F) and PReLU slope."""

    weight: ad.Value
    slope: ad.Value

    @property
    def input_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def init(cls, input_dim: int, embed_dim: int = DEFAULT_EMBED_DIM,
             seed=0) -> "EncoderParams":
        if embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / (input_dim + embed_dim))
        w = rng.uniform(-bound, bound, (input_dim, embed_dim))
        return cls(ad.parameter(w), ad.parameter(DEFAULT_PRELU_SLOPE))

    def parameters(self) -> dict:
        return {"weight": self.weight, "slope": self.slope}

    def checksum(self) -> int:
        return hash((self.weight.data.tobytes(), self.slope.data.tobytes()))

    def save(self, path, rng_state=None) -> None:
        np.savez(path,
                 version=np.int64(CHECKPOINT_VERSION),
                 weight=self.weight.data,
                 slope=self.slope.data,
                 rng_state=np.str_(json.dumps(rng_state)
                                   if rng_state is not None else "null"))

    @classmethod
    def load(cls, path) -> "EncoderParams":
        with np.load(path) as ckpt:
            version = int(ckpt["version"])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            return cls(ad.parameter(ckpt["weight"]),
                       ad.parameter(ckpt["slope"]))

    @staticmethod
    def load_rng_state(path):
        with np.load(path) as ckpt:
            return json.loads(str(ckpt["rng_state"]))


@dataclass
class DuoEmbedding:
    """Paired views of one node: its unit-norm embedding z (taken from the
    subgraph's node embedding matrix) and the subgraph readout z'."""

    z: ad.Value
    zprime: ad.Value
    label: int


def encode(params: EncoderParams, view: SubgraphView) -> ad.Value:
    """Node embedding matrix of a subgraph view, one unit-norm row per
    member: l2_normalize_rows(PReLU(A_norm @ X @ W))."""
    if view.features.shape[1] != params.input_dim:
        raise ad.ShapeError(
            f"view has {view.features.shape[1]} feature columns, "
            f"encoder expects {params.input_dim}")
    a = sparse.csr_matrix(view.adj_norm)
    x = ad.constant(view.features)
    h = ad.spmm(a, ad.matmul(x, params.weight))
    h = ad.prelu(h, params.slope)
    return ad.l2_normalize_rows(h)


def readout(z_mat: ad.Value, weights: np.ndarray) -> ad.Value:
    """Sigmoid of the score-weighted average of member embeddings."""
    if abs(float(np.sum(weights)) - 1.0) > 1e-9:
        raise ValueError("readout weights must sum to 1")
    return ad.sigmoid(ad.row_weighted_sum(weights, z_mat))


def embed_duo(params: EncoderParams, view: SubgraphView,
              label: int) -> DuoEmbedding:
    z_mat = encode(params, view)
    return DuoEmbedding(z=ad.row(z_mat, 0),
                        zprime=readout(z_mat, view.weights),
                        label=int(label))
