"""Balanced batch sampling, duo-viewed batch assembly and the pretraining
losses: supervised contrastive over all same-label pairs, a SimCLR-style
variant whose only positive is the paired view, and softmax cross-entropy.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphstore import Graph, ClassSplit, average_degree


@dataclass(frozen=True)
class BatchPlan:
    """Centric node ids for one batch with the per-class quota used."""

    nodes: np.ndarray
    quota: int


def balanced_sample(g: Graph, split: ClassSplit, batch_size: int,
                    rng) -> BatchPlan:
    """Exactly batch_size // n_base_classes nodes per base class, uniform
    within class. Classes smaller than the quota are sampled with
    replacement and a warning is emitted."""
    classes = sorted(split.base_classes)
    if not classes:
        raise ValueError("no base classes to sample from")
    quota = batch_size // len(classes)
    if quota < 1:
        raise ValueError(
            f"batch size {batch_size} below one node per base class")
    picks = []
    for c in classes:
        pool = np.flatnonzero(g.labels == c)
        if pool.size == 0:
            raise ValueError(f"base class {c} has no nodes")
        if pool.size < quota:
            warnings.warn(
                f"class {c} has {pool.size} nodes < quota {quota}; "
                "sampling with replacement", stacklevel=2)
            picks.append(rng.choice(pool, quota, replace=True))
        else:
            picks.append(rng.choice(pool, quota, replace=False))
    return BatchPlan(np.concatenate(picks).astype(np.int64), quota)


def uniform_sample(g: Graph, split: ClassSplit, batch_size: int,
                   rng) -> BatchPlan:
    """Label-agnostic sampling over base-class nodes (the no-BS setting)."""
    mask = np.isin(g.labels, sorted(split.base_classes))
    pool = np.flatnonzero(mask)
    if pool.size == 0:
        raise ValueError("no base-class nodes to sample from")
    replace = pool.size < batch_size
    return BatchPlan(rng.choice(pool, batch_size, replace=replace)
                     .astype(np.int64), quota=0)


def temperature(beta: float, g: Graph) -> float:
    """Degree-scaled contrastive temperature beta / sqrt(avg degree)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    avg = average_degree(g)
    if avg == 0:
        raise ValueError("temperature undefined for edgeless graph")
    return beta / np.sqrt(avg)


@dataclass
class DuoBatch:
    """2B paired representations [z'_1..z'_B, z_1..z_B] with duplicated
    labels; rows b and b+B are the two views of the same node."""

    h: ad.Value
    labels: np.ndarray
    tau: float

    def __post_init__(self):
        n = self.labels.shape[0]
        if n % 2 or self.h.shape[0] != n:
            raise ValueError("duo batch must hold 2B rows with 2B labels")
        if not np.array_equal(self.labels[:n // 2], self.labels[n // 2:]):
            raise ValueError("labels must be duplicated across the two halves")
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def pairs(self) -> int:
        return self.labels.shape[0] // 2


def assemble_duo_batch(duos, tau: float) -> DuoBatch:
    h = ad.vstack([d.zprime for d in duos] + [d.z for d in duos])
    labels = np.array([d.label for d in duos] * 2, dtype=np.int64)
    return DuoBatch(h=h, labels=labels, tau=float(tau))


def _contrastive(batch: DuoBatch, pos_mask: np.ndarray) -> ad.Value:
    """sum_b -1/|P(b)| sum_{p in P(b)} log softmax_p over all-but-b."""
    n = batch.labels.shape[0]
    logits = ad.scale(ad.dot_products_matrix(batch.h), 1.0 / batch.tau)
    off_diag = ~np.eye(n, dtype=bool)
    lse = ad.log_sum_exp(logits, off_diag)
    counts = pos_mask.sum(axis=1)
    pos_weights = pos_mask / counts[:, None]
    return ad.sub(ad.sum_all(lse), ad.weighted_sum(logits, pos_weights))


def gsupcon_loss(batch: DuoBatch) -> ad.Value:
    """Supervised contrastive loss: positives are every other row sharing
    the anchor's label (the paired view always qualifies)."""
    same = batch.labels[:, None] == batch.labels[None, :]
    np.fill_diagonal(same, False)
    return _contrastive(batch, same.astype(np.float64))


def simclr_loss(batch: DuoBatch) -> ad.Value:
    """Same form with a single positive per anchor: its paired view."""
    n = batch.labels.shape[0]
    b = n // 2
    partner = np.zeros((n, n))
    idx = np.arange(n)
    partner[idx, (idx + b) % n] = 1.0
    return _contrastive(batch, partner)


@dataclass
class ClassifierHead:
    """Linear softmax head over base classes, trained jointly with the
    encoder in the cross-entropy pretraining ablation."""

    weight: ad.Value
    bias: ad.Value

    @classmethod
    def init(cls, embed_dim: int, n_classes: int, seed=0) -> "ClassifierHead":
        rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / (embed_dim + n_classes))
        return cls(ad.parameter(rng.uniform(-bound, bound,
                                            (embed_dim, n_classes))),
                   ad.parameter(np.zeros(n_classes)))

    def parameters(self) -> dict:
        return {"head_weight": self.weight, "head_bias": self.bias}


def ce_pretrain_loss(z: ad.Value, class_idx: np.ndarray,
                     head: ClassifierHead) -> ad.Value:
    """Mean softmax cross-entropy of head(z) against class indices."""
    n, c = z.shape[0], head.bias.shape[0]
    class_idx = np.asarray(class_idx, dtype=np.int64)
    if class_idx.min() < 0 or class_idx.max() >= c:
        raise ValueError("label outside the classifier's class range")
    logits = ad.add_bias(ad.matmul(z, head.weight), head.bias)
    lse = ad.log_sum_exp(logits, np.ones((n, c), dtype=bool))
    onehot = np.zeros((n, c))
    onehot[np.arange(n), class_idx] = 1.0
    return ad.scale(ad.sub(ad.sum_all(lse), ad.weighted_sum(logits, onehot)),
                    1.0 / n)
