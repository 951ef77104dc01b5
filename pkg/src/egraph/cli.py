"""Command-line entry point.

Subcommands: train, eval, export-graph, gradcheck, gen-synthetic.  Every run
is driven by a JSON config plus flag overrides (flags win), and the effective
config is echoed into every output so results are self-describing.

Exit codes: 0 success, 1 usage/config error, 2 data/format error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .autodiff import Tape

from .checkpoint import (
    checkpoint_dict,
    dump_json,
    full_graph_from_checkpoint,
    graph_to_dict,
    load_checkpoint,
    load_semantic_graph,
    losses_to_csv,
    snapshot_from_checkpoint,
    write_text,
)
from .config import RunConfig
from .datasets import (
    EpisodeSpec,
    SyntheticSpec,
    generate_synthetic,
    load_features,
    save_features,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DegenerateVectorError,
    DimensionError,
    EGraphError,
    GraphError,
    NumericError,
    ParameterError,
    StateError,
)
from .estimators import make_head
from .evaluation import (
    cross_domain_eval,
    fewshot_eval,
    open_set_eval,
    zero_shot_eval,
)
from .knowledge import (
    build_global_graph,
    graph_export_dot,
    graph_export_json,
    load_embeddings,
    symmetric_affinity,
)
from .layer import LayerConfig, full_layer_gradcheck, layer_forward
from .prototypes import PrototypeBank, local_adjacency

GRADCHECK_SEEDS = 5
GRADCHECK_TOL = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _stage(name, fn, *args, **kwargs):
    """Run one pipeline stage; failures name the stage on stderr."""
    try:
        return fn(*args, **kwargs)
    except EGraphError as e:
        raise type(e)(f"[{name}] {e}") from None


CONFIG_FLAGS = [
    ("--head", str, "head"),
    ("--sigma-local", float, "sigma_local"),
    ("--sigma-global", float, "sigma_global"),
    ("--beta", float, "beta"),
    ("--alpha1", float, "alpha1"),
    ("--alpha2", float, "alpha2"),
    ("--gcn-layers", int, "gcn_layers"),
    ("--activation", str, "activation"),
    ("--adjacency-loss", str, "adjacency_loss"),
    ("--regularizer", str, "regularizer"),
    ("--amend-mode", str, "amend_mode"),
    ("--lr", float, "lr"),
    ("--steps", int, "steps"),
    ("--batch-size", int, "batch_size"),
    ("--seed", int, "seed"),
    ("--open-set-threshold", float, "open_set_threshold"),
    ("--embedding-dim", int, "embedding_dim"),
    ("--dataset-profile", str, "dataset_profile"),
]


def _add_config_flags(p):
    p.add_argument("--config", help="JSON config file")
    for flag, typ, dest in CONFIG_FLAGS:
        p.add_argument(flag, type=typ, dest=dest, default=argparse.SUPPRESS)


def _effective_config(args) -> RunConfig:
    overrides = {dest: getattr(args, dest) for _, _, dest in CONFIG_FLAGS
                 if hasattr(args, dest)}
    return RunConfig.load(getattr(args, "config", None), overrides)


def build_parser() -> _Parser:
    p = _Parser(prog="egraph", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a head on a feature CSV")
    _add_config_flags(t)
    t.add_argument("--features", required=True, help="training feature CSV")
    t.add_argument("--manifest", help="optional class manifest fixing index order")
    src = t.add_mutually_exclusive_group(required=False)
    src.add_argument("--embeddings", help="word-vector text file for the global graph")
    src.add_argument("--graph", help="semantic graph JSON for the global graph")
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--out-losses", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint under one protocol")
    _add_config_flags(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--protocol", required=True,
                   choices=["fewshot", "crossdomain", "zeroshot", "openset"])
    e.add_argument("--data", required=True, help="evaluation feature CSV")
    e.add_argument("--out", required=True, help="results JSON path")
    e.add_argument("--n-way", type=int, default=5)
    e.add_argument("--k-shot", type=int, default=argparse.SUPPRESS)
    e.add_argument("--q-query", type=int, default=15)
    e.add_argument("--episodes", type=int, default=600)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("export-graph", help="export a graph's top-k edges")
    _add_config_flags(g)
    g.add_argument("--source", required=True, choices=["global", "local", "enhanced"])
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--top-k", type=int, default=argparse.SUPPRESS)
    g.add_argument("--out-json", required=True)
    g.add_argument("--out-dot")
    g.set_defaults(func=cmd_export_graph)

    c = sub.add_parser("gradcheck", help="finite-difference check of the full layer")
    _add_config_flags(c)
    c.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("gen-synthetic", help="write synthetic feature CSVs and graph")
    s.add_argument("--spec", required=True, help="synthetic spec JSON")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_gen_synthetic)
    return p


# ---------------------------------------------------------------------------
# Commands


def cmd_train(args) -> int:
    config = _effective_config(args)
    split = _stage("load-features", load_features, args.features, args.manifest)

    graph = None
    if config.head in ("eglayer", "lplayer"):
        if args.graph:
            graph = _stage("load-graph", load_semantic_graph, args.graph)
        elif args.embeddings:
            def from_embeddings():
                _, z = load_embeddings(args.embeddings, split.class_names)
                return build_global_graph(split.class_names, z, config.sigma_global)

            graph = _stage("load-embeddings", from_embeddings)
        else:
            raise ConfigError(
                f"head '{config.head}' needs --embeddings or --graph"
            )

    est = make_head(config, global_graph=graph)
    _stage("train", est.fit, split.features, split.label_names())

    ckpt = dump_json(checkpoint_dict(est, config, graph))
    losses = losses_to_csv(est.loss_history_)
    write_text(args.out_checkpoint, ckpt)
    write_text(args.out_losses, losses)
    print(f"wrote {args.out_checkpoint} and {args.out_losses} "
          f"({len(est.loss_history_)} recorded steps)")
    return 0


def cmd_eval(args) -> int:
    config = _effective_config(args)
    ckpt = _stage("load-checkpoint", load_checkpoint, args.checkpoint)
    snapshot = _stage("load-checkpoint", snapshot_from_checkpoint, ckpt)
    split = _stage("load-data", load_features, args.data)

    k_shot = getattr(args, "k_shot", None)
    result = {"protocol": args.protocol, "episodes": 0, "ci95": 0.0,
              "config": config.to_dict()}
    if args.protocol == "fewshot":
        spec = EpisodeSpec(n_way=args.n_way, k_shot=1 if k_shot is None else k_shot,
                           q_query=args.q_query, episodes=args.episodes,
                           seed=config.seed)
        acc, ci = _stage("fewshot", fewshot_eval, snapshot, split, spec)
        result.update(accuracy=acc, ci95=ci, episodes=spec.episodes)
    elif args.protocol == "zeroshot":
        if k_shot is not None and k_shot != 0:
            print("warning: --k-shot is ignored for the zeroshot protocol "
                  "(treated as 0)", file=sys.stderr)
        graph = _stage("load-checkpoint", full_graph_from_checkpoint, ckpt)
        acc = _stage("zeroshot", zero_shot_eval, snapshot, graph, split)
        result.update(accuracy=acc)
    elif args.protocol == "crossdomain":
        acc = _stage("crossdomain", cross_domain_eval, snapshot, split)
        result.update(accuracy=acc)
    else:
        acc = _stage("openset", open_set_eval, snapshot, split,
                     config.open_set_threshold)
        result.update(accuracy=acc)

    write_text(args.out, dump_json(result))
    print(f"{args.protocol} accuracy: {result['accuracy']:.4f}")
    return 0


def cmd_export_graph(args) -> int:
    config = _effective_config(args)
    ckpt = _stage("load-checkpoint", load_checkpoint, args.checkpoint)

    if args.source == "global":
        graph = _stage("load-checkpoint", full_graph_from_checkpoint, ckpt)
        names, adjacency = graph.class_names, graph.A
    else:
        if ckpt.get("head") != "eglayer" or "bank" not in ckpt:
            raise DataError(f"source '{args.source}' needs an eglayer checkpoint "
                            "with a prototype bank")
        bank = _stage("load-checkpoint", PrototypeBank.from_dict, ckpt["bank"])
        if args.source == "local":
            names, adjacency = bank.class_names, local_adjacency(bank)
        else:
            # Enhanced view: affinity between prototypes after one aggregation
            # pass, taken at the bank's kernel width in the projected space.
            snapshot = _stage("load-checkpoint", snapshot_from_checkpoint, ckpt)
            fwd = layer_forward(Tape(), snapshot.params, bank,
                                np.empty((0, bank.feature_dim)),
                                amend_mode=snapshot.amend_mode,
                                activation=snapshot.activation)
            names = bank.class_names
            adjacency = symmetric_affinity(fwd.s_prime.value, bank.sigma_local)

    k = config.export_top_k(getattr(args, "top_k", None), len(names))
    payload = dump_json(graph_export_json(names, adjacency, k))
    write_text(args.out_json, payload)
    if args.out_dot:
        write_text(args.out_dot, graph_export_dot(names, adjacency, k))
    print(f"exported {k} edges from the {args.source} graph")
    return 0


def cmd_gradcheck(args) -> int:
    config = _effective_config(args)
    layer_cfg = LayerConfig(alpha1=config.alpha1, alpha2=config.alpha2,
                            adjacency_loss=config.adjacency_loss,
                            regularizer=config.regularizer,
                            amend_mode=config.amend_mode,
                            activation=config.activation, lr=config.lr)
    worst = 0.0
    tol = GRADCHECK_TOL
    ok = True
    for seed in range(GRADCHECK_SEEDS):
        report = full_layer_gradcheck(seed=seed, gcn_layers=config.gcn_layers,
                                      tol=tol, config=layer_cfg)
        for name, err in sorted(report.per_param.items()):
            print(f"seed {seed} {name}: max rel err {err:.3e}")
        worst = max(worst, report.max_rel_err)
        ok = ok and report.passed
    print(f"{'PASS' if ok else 'FAIL'}: max rel err {worst:.3e} (tol {tol:.0e})")
    if not ok:
        raise NumericError(f"gradient check failed with max rel err {worst:.3e}")
    return 0


def cmd_gen_synthetic(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ParameterError(f"cannot read spec file {args.spec}: {e}") from None
    spec = _stage("parse-spec", SyntheticSpec.from_dict, raw)
    train, novel, graph = _stage("generate", generate_synthetic, spec)

    os.makedirs(args.out_dir, exist_ok=True)
    save_features(train, os.path.join(args.out_dir, "train.csv"))
    save_features(novel, os.path.join(args.out_dir, "novel.csv"))
    write_text(os.path.join(args.out_dir, "graph.json"),
               dump_json(graph_to_dict(graph)))
    print(f"wrote train.csv ({train.n_samples} rows), novel.csv "
          f"({novel.n_samples} rows), graph.json ({graph.n} nodes) to {args.out_dir}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ParameterError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, DimensionError, StateError, ContractError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (NumericError, DegenerateVectorError, GraphError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
