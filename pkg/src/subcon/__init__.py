"""Supervised graph contrastive pretraining for few-shot node
classification: connectivity-scored subgraph augmentation, a single-layer
graph-convolution encoder with weighted readout, multi-scale supervised
contrastive pretraining and an N-way K-shot evaluation harness."""

from ._kernels import backend
from .connectivity import (ScoreSource, SubgraphView, build_subgraph,
                           nad_iterate, nad_scores, ppr_scores, score_column,
                           top_rank)
from .contrast import (DuoBatch, assemble_duo_batch, balanced_sample,
                       ce_pretrain_loss, gsupcon_loss, simclr_loss,
                       temperature)
from .encoder import DuoEmbedding, EncoderParams, embed_duo, encode, readout
from .fewshot import (EvalProtocol, NodeEmbedder, cluster_metrics, evaluate,
                      finetune, sample_episodes)
from .graphstore import (ClassSplit, Graph, SyntheticSpec, average_degree,
                         from_edges, generate_sbm, load_graph, load_split,
                         save_graph, save_split)
from .trainer import AdamState, PretrainResult, TrainConfig, adam_step, \
    pretrain

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ClassSplit", "DuoBatch", "DuoEmbedding", "EncoderParams",
    "EvalProtocol", "Graph", "NodeEmbedder", "PretrainResult", "ScoreSource",
    "SubgraphView", "SyntheticSpec", "TrainConfig", "adam_step",
    "assemble_duo_batch", "average_degree", "backend", "balanced_sample",
    "build_subgraph", "ce_pretrain_loss", "cluster_metrics", "embed_duo",
    "encode", "evaluate", "finetune", "from_edges", "generate_sbm",
    "gsupcon_loss", "load_graph", "load_split", "nad_iterate", "nad_scores",
    "ppr_scores", "pretrain", "readout", "sample_episodes", "save_graph",
    "save_split", "score_column", "simclr_loss", "temperature", "top_rank",
]
