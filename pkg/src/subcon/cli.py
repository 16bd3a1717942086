"""Unified command line: graph tooling, score caches, pretraining,
episodic evaluation, clustering and sensitivity sweeps.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import connectivity as conn
from . import graphstore as gs
from .encoder import EncoderParams
from .fewshot import EvalProtocol, NodeEmbedder, cluster_metrics, evaluate
from .trainer import TrainConfig, pretrain

LOSS_SWEEP_ROWS = (  # the loss x balanced-sampling ablation matrix
    ("ce", False), ("ce", True),
    ("simclr", False), ("simclr", True),
    ("gsupcon", True),
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _check_keys(doc: dict, known: set, what: str) -> None:
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown {what} keys: {sorted(unknown)}")


def _load_json(path) -> dict:
    with open(path) as f:
        return json.load(f)


def _dump(doc, path=None, fmt: str = "json"):
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_split(graph_path, override) -> gs.ClassSplit:
    path = override or gs.split_sidecar_path(graph_path)
    if not Path(path).exists():
        raise FileNotFoundError(f"class split file not found: {path}")
    return gs.load_split(path)


@dataclass(frozen=True)
class ScoreOptions:
    method: str = "ppr"
    gamma: float = conn.DEFAULT_GAMMA
    eta: float = conn.DEFAULT_ETA
    iterations: int = conn.DEFAULT_NAD_ITERATIONS
    vectors: int = conn.DEFAULT_NAD_VECTORS
    phi: float = conn.DEFAULT_PHI
    seed: int = 0
    cache_width: int = 64

    @classmethod
    def from_json(cls, doc: dict) -> "ScoreOptions":
        _check_keys(doc, {"method", "gamma", "eta", "iterations", "vectors",
                          "phi", "seed", "cache_width"}, "score config")
        return cls(**doc)


def make_source(g: gs.Graph, opts: ScoreOptions) -> conn.ScoreSource:
    if opts.method == "nad":
        return conn.ScoreSource.nad(
            g, eta=opts.eta, iterations=opts.iterations,
            n_vectors=opts.vectors, seed=opts.seed, gamma=opts.gamma,
            cache_width=opts.cache_width)
    if opts.method == "ppr":
        return conn.ScoreSource.ppr(gamma=opts.gamma, phi=opts.phi,
                                    cache_width=opts.cache_width)
    raise ValueError(f"unknown score method {opts.method!r}")


def _source_from_args(g, args) -> conn.ScoreSource:
    opts = ScoreOptions(method=args.method, gamma=args.gamma, eta=args.eta,
                        iterations=args.iterations, vectors=args.vectors,
                        phi=args.phi, seed=args.seed or 0,
                        cache_width=args.alpha_max)
    return make_source(g, opts)


# ---------------------------------------------------------------------------
# commands

def _cmd_graph_info(args) -> int:
    g = gs.load_graph(args.path)
    info = {"num_nodes": g.num_nodes, "num_edges": g.num_edges,
            "feature_dim": g.feature_dim, "num_classes": g.num_classes,
            "average_degree": gs.average_degree(g)}
    sidecar = Path(gs.split_sidecar_path(args.path))
    if sidecar.exists():
        split = gs.load_split(sidecar)
        info["base_classes"] = sorted(split.base_classes)
        info["novel_classes"] = sorted(split.novel_classes)
    if args.format == "csv":
        w = csv.writer(sys.stdout)
        w.writerow(info.keys())
        w.writerow(info.values())
    else:
        _dump(info)
    return 0


def _cmd_graph_synth(args) -> int:
    doc = _load_json(args.spec)
    split_doc = doc.pop("split", None)
    spec = gs.SyntheticSpec.from_json(doc)
    g = gs.generate_sbm(spec)
    gs.save_graph(g, args.output)
    if split_doc is not None:
        _check_keys(split_doc, {"base_classes", "novel_classes"}, "split")
        split = gs.ClassSplit(frozenset(split_doc["base_classes"]),
                              frozenset(split_doc["novel_classes"]))
        split.validate_cover(g.labels)
        gs.save_split(split, gs.split_sidecar_path(args.output))
    return 0


def _cmd_scores(args) -> int:
    g = gs.load_graph(args.graph)
    source = _source_from_args(g, args)
    n = conn.write_score_cache(args.output, g, source)
    print(f"wrote {n} score records to {args.output}", file=sys.stderr)
    return 0


def _load_source_with_cache(g, args) -> conn.ScoreSource:
    source = _source_from_args(g, args)
    if args.scores:
        conn.load_score_cache(args.scores, g, source)
    return source


def _cmd_pretrain(args) -> int:
    g = gs.load_graph(args.graph)
    split = _load_split(args.graph, args.split)
    config = TrainConfig.from_json(_load_json(args.config))
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    source = _load_source_with_cache(g, args)
    result = pretrain(g, split, source, config)
    result.params.save(args.output)
    if args.trace:
        result.save_trace_csv(args.trace)
    return 0


def _cmd_eval(args) -> int:
    g = gs.load_graph(args.graph)
    split = _load_split(args.graph, args.split)
    params = EncoderParams.load(args.ckpt)
    source = _load_source_with_cache(g, args)
    base_seed = args.seed or 0
    protocol = EvalProtocol(n_way=args.nway, k_shot=args.kshot,
                            q_size=args.qsize, episodes=args.episodes,
                            seeds=tuple(range(base_seed,
                                              base_seed + args.seeds)),
                            alpha=args.alpha)
    results = evaluate(g, split, params, source, protocol)
    _dump(results, args.output)
    return 0


def _cmd_cluster(args) -> int:
    g = gs.load_graph(args.graph)
    split = _load_split(args.graph, args.split)
    params = EncoderParams.load(args.ckpt)
    source = _load_source_with_cache(g, args)
    classes = sorted(split.novel_classes if args.classes == "novel"
                     else split.base_classes if args.classes == "base"
                     else range(g.num_classes))
    ids = np.flatnonzero(np.isin(g.labels, classes))
    embedder = NodeEmbedder(g, source, params, args.alpha)
    metrics = cluster_metrics(embedder.embed(ids), g.labels[ids],
                              k=len(classes), seed=args.seed or 0)
    metrics["classes"] = [int(c) for c in classes]
    metrics["n_points"] = int(ids.size)
    _dump(metrics, args.output)
    return 0


# ---------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class ExperimentConfig:
    graph: str
    scores: ScoreOptions
    train: TrainConfig
    eval_protocol: EvalProtocol
    split: str | None = None

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        _check_keys(doc, {"graph", "split", "scores", "train", "eval"},
                    "experiment config")
        ev = dict(doc.get("eval", {}))
        _check_keys(ev, {"n_way", "k_shot", "q_size", "episodes", "seeds",
                         "alpha"}, "eval config")
        if "seeds" in ev:
            ev["seeds"] = tuple(ev["seeds"])
        return cls(graph=doc["graph"],
                   scores=ScoreOptions.from_json(doc.get("scores", {})),
                   train=TrainConfig.from_json(doc.get("train", {})),
                   eval_protocol=EvalProtocol(**ev),
                   split=doc.get("split"))


def run_sweep(config: ExperimentConfig, axis: str, grid=None) -> list:
    """One pretrain + eval per grid point. Per-point failures are recorded
    and the sweep continues. Returns rows of dicts."""
    g = gs.load_graph(config.graph)
    split = _load_split(config.graph, config.split)
    source = make_source(g, config.scores)

    if axis == "beta":
        points = [("beta", float(v), {"temperature_beta": float(v)})
                  for v in (grid or (0.5, 1.0, 2.0))]
    elif axis == "batch":
        points = [("batch", int(v), {"batch_size": int(v)})
                  for v in (grid or (100, 250, 500))]
    elif axis == "loss":
        points = [("loss", f"{loss}+{'BS' if bs else 'noBS'}",
                   {"loss": loss, "balanced_sampling": bs})
                  for loss, bs in LOSS_SWEEP_ROWS]
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")

    rows = []
    for name, value, overrides in points:
        row = {"axis": name, "value": value}
        try:
            train_cfg = replace(config.train, **overrides)
            result = pretrain(g, split, source, train_cfg)
            stats = evaluate(g, split, result.params, source,
                             config.eval_protocol)
            row.update(mean_accuracy=stats["mean_accuracy"],
                       ci95=stats["ci95"], error="")
        except Exception as exc:  # record and continue
            row.update(mean_accuracy=float("nan"), ci95=float("nan"),
                       error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def _cmd_sweep(args) -> int:
    config = ExperimentConfig.from_json(_load_json(args.config))
    if args.seed is not None:
        config = replace(config, train=replace(config.train, seed=args.seed))
    rows = run_sweep(config, args.axis, args.grid)
    out = sys.stdout if not args.output else open(args.output, "w")
    try:
        if args.format == "json":
            json.dump(rows, out, indent=1, sort_keys=True)
            out.write("\n")
        else:
            w = csv.DictWriter(out, fieldnames=["axis", "value",
                                                "mean_accuracy", "ci95",
                                                "error"])
            w.writeheader()
            w.writerows(rows)
    finally:
        if args.output:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_score_args(p, with_cache=True):
    p.add_argument("--method", choices=("nad", "ppr"), default="ppr")
    p.add_argument("--gamma", type=float, default=conn.DEFAULT_GAMMA)
    p.add_argument("--eta", type=float, default=conn.DEFAULT_ETA)
    p.add_argument("--iterations", type=int,
                   default=conn.DEFAULT_NAD_ITERATIONS)
    p.add_argument("--vectors", type=int, default=conn.DEFAULT_NAD_VECTORS)
    p.add_argument("--phi", type=float, default=conn.DEFAULT_PHI)
    p.add_argument("--alpha-max", type=int, default=64,
                   help="stored entries per cached score column")
    if with_cache:
        p.add_argument("--scores", help="score cache file to preload")


def build_parser() -> _Parser:
    parser = _Parser(prog="subcon")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--format", choices=("json", "csv"), default="json")
    sub = parser.add_subparsers(dest="command", required=True)

    p_graph = sub.add_parser("graph")
    gsub = p_graph.add_subparsers(dest="graph_command", required=True)
    p_info = gsub.add_parser("info")
    p_info.add_argument("path")
    p_info.set_defaults(func=_cmd_graph_info)
    p_synth = gsub.add_parser("synth")
    p_synth.add_argument("--spec", required=True)
    p_synth.add_argument("-o", "--output", required=True)
    p_synth.set_defaults(func=_cmd_graph_synth)

    p_scores = sub.add_parser("scores")
    p_scores.add_argument("--graph", required=True)
    p_scores.add_argument("-o", "--output", required=True)
    _add_score_args(p_scores, with_cache=False)
    p_scores.set_defaults(func=_cmd_scores)

    p_pre = sub.add_parser("pretrain")
    p_pre.add_argument("--graph", required=True)
    p_pre.add_argument("--config", required=True)
    p_pre.add_argument("--split")
    p_pre.add_argument("--trace", help="loss trace CSV path")
    p_pre.add_argument("-o", "--output", required=True)
    _add_score_args(p_pre)
    p_pre.set_defaults(func=_cmd_pretrain)

    p_eval = sub.add_parser("eval")
    p_eval.add_argument("--graph", required=True)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--split")
    p_eval.add_argument("--nway", type=int, default=5)
    p_eval.add_argument("--kshot", type=int, default=5)
    p_eval.add_argument("--qsize", type=int, default=10)
    p_eval.add_argument("--episodes", type=int, default=50)
    p_eval.add_argument("--seeds", type=int, default=10)
    p_eval.add_argument("--alpha", type=int, default=19)
    p_eval.add_argument("-o", "--output")
    _add_score_args(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_cluster = sub.add_parser("cluster")
    p_cluster.add_argument("--graph", required=True)
    p_cluster.add_argument("--ckpt", required=True)
    p_cluster.add_argument("--split")
    p_cluster.add_argument("--classes", choices=("novel", "base", "all"),
                           default="novel")
    p_cluster.add_argument("--alpha", type=int, default=19)
    p_cluster.add_argument("-o", "--output")
    _add_score_args(p_cluster)
    p_cluster.set_defaults(func=_cmd_cluster)

    p_sweep = sub.add_parser("sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", choices=("beta", "batch", "loss"),
                         required=True)
    p_sweep.add_argument("--grid", type=float, nargs="*")
    p_sweep.add_argument("-o", "--output")
    p_sweep.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        from . import _kernels
        if _kernels.backend() == "numba":
            import numba
            numba.set_num_threads(max(1, args.threads))
    try:
        return args.func(args)
    except Exception as exc:
        print(f"subcon: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
