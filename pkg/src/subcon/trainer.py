"""Adam pretraining loop over balanced duo-view batches."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .connectivity import ScoreSource, build_subgraph
from .contrast import (ClassifierHead, assemble_duo_batch, balanced_sample,
                       ce_pretrain_loss, gsupcon_loss, simclr_loss,
                       temperature, uniform_sample)
from .encoder import EncoderParams, embed_duo
from .graphstore import Graph, ClassSplit

LOSS_KINDS = ("gsupcon", "simclr", "ce")


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 500
    epochs: int = 100
    temperature_beta: float = 1.0
    alpha: int = 19
    embed_dim: int = 64
    seed: int = 0
    loss: str = "gsupcon"
    balanced_sampling: bool = True
    patience: int = 10
    plateau_tol: float = 1e-4
    max_steps: int | None = None

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.alpha < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("alpha, batch_size and epochs must be >= 1")

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def init(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict, state: AdamState, config: TrainConfig) -> None:
    """Standard Adam with bias correction; weight decay enters as an L2
    term added to the gradient (non-decoupled)."""
    t = state.step + 1
    bc1 = 1.0 - config.beta1 ** t
    bc2 = 1.0 - config.beta2 ** t
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError(
                f"non-finite gradient for parameter {name!r}")
        grad = grad + config.weight_decay * p.data
        state.m[name] = config.beta1 * state.m[name] + \
            (1.0 - config.beta1) * grad
        state.v[name] = config.beta2 * state.v[name] + \
            (1.0 - config.beta2) * grad ** 2
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.data - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    state.step = t


@dataclass
class PretrainResult:
    params: EncoderParams
    trace: list = field(default_factory=list)  # (step, loss, wall_ms)
    head: ClassifierHead | None = None

    def save_trace_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("step,loss,wall_ms\n")
            for step, loss, wall in self.trace:
                f.write(f"{step},{loss:.10g},{wall:.3f}\n")


def pretrain(g: Graph, split: ClassSplit, source: ScoreSource,
             config: TrainConfig) -> PretrainResult:
    """Loop balanced sampling -> subgraph views -> duo embeddings -> loss ->
    backward -> Adam. Deterministic given config.seed; stops early when the
    epoch-mean loss plateaus."""
    if not split.base_classes:
        raise ValueError("pretraining needs non-empty base classes")
    base_classes = sorted(split.base_classes)
    class_to_idx = {c: i for i, c in enumerate(base_classes)}
    n_base_nodes = int(np.isin(g.labels, base_classes).sum())

    init_ss, head_ss, sample_ss = np.random.SeedSequence(config.seed).spawn(3)
    rng = np.random.default_rng(sample_ss)
    params = EncoderParams.init(g.feature_dim, config.embed_dim, seed=init_ss)
    all_params = params.parameters()
    head = None
    if config.loss == "ce":
        head = ClassifierHead.init(config.embed_dim, len(base_classes),
                                   seed=head_ss)
        all_params.update(head.parameters())
    state = AdamState.init(all_params)
    tau = temperature(config.temperature_beta, g)

    if config.balanced_sampling:
        effective_b = (config.batch_size // len(base_classes)) * \
            len(base_classes)
    else:
        effective_b = config.batch_size
    steps_per_epoch = max(1, math.ceil(n_base_nodes / max(effective_b, 1)))
    total_steps = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total_steps = min(total_steps, config.max_steps)

    result = PretrainResult(params=params, head=head)
    best = math.inf
    stale_epochs = 0
    epoch_losses: list[float] = []
    for step in range(total_steps):
        t0 = time.perf_counter()
        if config.balanced_sampling:
            plan = balanced_sample(g, split, config.batch_size, rng)
        else:
            plan = uniform_sample(g, split, config.batch_size, rng)
        views = [build_subgraph(g, source, int(n), config.alpha)
                 for n in plan.nodes]
        duos = [embed_duo(params, v, int(g.labels[v.centric]))
                for v in views]
        if config.loss == "ce":
            z = ad.vstack([d.z for d in duos])
            idx = np.array([class_to_idx[d.label] for d in duos])
            loss = ce_pretrain_loss(z, idx, head)
        else:
            batch = assemble_duo_batch(duos, tau)
            loss = gsupcon_loss(batch) if config.loss == "gsupcon" \
                else simclr_loss(batch)
        ad.backward(loss)
        adam_step(all_params, state, config)
        ad.zero_grads(all_params.values())
        wall_ms = (time.perf_counter() - t0) * 1e3
        loss_val = float(loss.data)
        result.trace.append((step, loss_val, wall_ms))
        epoch_losses.append(loss_val)

        if len(epoch_losses) == steps_per_epoch:
            epoch_mean = float(np.mean(epoch_losses))
            epoch_losses.clear()
            if epoch_mean < best - config.plateau_tol * abs(best):
                best = epoch_mean
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs >= config.patience:
                    warnings.warn(
                        f"loss plateaued for {stale_epochs} epochs; "
                        "stopping early", stacklevel=2)
                    break
    return result
