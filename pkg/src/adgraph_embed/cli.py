"""``adgraph-embed`` command line: synth, ingest, build-graph, pretrain, embed, baseline, eval.

Stages talk to each other only through files. Exit codes: 0 success,
1 I/O or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .baselines import ngb_emb, rnd_emb
from .ctr import HeadConfig, SyntheticConfig, gen_synthetic, infer_k, load_dataset, metrics_rows, save_dataset, save_metrics
from .encoder import SOURCES, EmbeddingTable, EncoderParams, embed, load_embeddings, save_embeddings
from .experiment import graph_from_items
from .graph import GraphConfig, load_graph, save_graph
from .items import build_page_profiles, load_items, save_items
from .numeric import load_params, save_params
from .trainer import OPTIMIZERS, TrainConfig, train


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _items(path: str, k: int | None):
    return load_items(path, k if k is not None else infer_k(path))


# --------------------------------------------------------------------------
# commands

def cmd_synth(args: argparse.Namespace) -> int:
    config = SyntheticConfig(
        n_items=args.n_items, n_users=args.n_users, n_pages=args.n_pages, n_clusters=args.n_clusters,
        n_impressions=args.n_impressions, cold_fraction=args.cold_fraction, seed=args.seed, k=args.k,
    )
    ds = gen_synthetic(config)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    save_dataset(args.out_dir, ds)
    print(f"wrote {len(ds.items)} items, {len(ds.train)} train / {len(ds.test)} test impressions to {args.out_dir}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    items = _items(args.items, args.k)
    profiles = build_page_profiles(items)
    if args.out:
        save_items(args.out, items)
    n_new = sum(r.is_new for r in items)
    print(f"{len(items)} items ({n_new} new) on {len(profiles)} pages, k={len(items[0].semantic_vec)}")
    return 0


def cmd_build_graph(args: argparse.Namespace) -> int:
    items = _items(args.items, args.k)
    graph = graph_from_items(items, GraphConfig(args.top_k, args.min_weight))
    save_graph(args.out, graph)
    print(f"graph: {graph.n} nodes, {graph.m} edges")
    return 0


def cmd_pretrain(args: argparse.Namespace) -> int:
    graph = load_graph(args.graph)
    config = TrainConfig(
        epochs=args.epochs, lr=args.lr, optimizer=args.optimizer, kl_weight=args.kl_weight, seed=args.seed,
        eps=args.eps, hidden_dim=args.hidden, dim=args.dim, subtract_prior=args.subtract_prior,
    )
    report = train(graph, config)
    save_params(args.out, report.params.as_dict())
    if args.history:
        report.save_history(args.history)
    if config.epochs:
        print(f"final loss {report.history[-1, 0]:.6g} after {config.epochs} epochs")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    graph = load_graph(args.graph)
    params = EncoderParams.from_dict(load_params(args.checkpoint))
    if params.in_dim != graph.features.F:
        raise ValueError(f"checkpoint expects {params.in_dim} input features, graph has {graph.features.F}")
    vectors = embed(graph, params, sample=args.sample, seed=args.seed)
    save_embeddings(args.out, EmbeddingTable(graph.features.ordering, vectors, "gace"))
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    graph = load_graph(args.graph)
    if args.kind == "ngb":
        table = ngb_emb(graph, args.dim)
    else:
        table = rnd_emb(graph.n, args.dim, args.seed, graph.features.ordering)
    save_embeddings(args.out, table)
    return 0


def _named_path(text: str) -> tuple[str, str]:
    name, sep, path = text.partition("=")
    if not sep or not name or not path or "," in name:
        raise argparse.ArgumentTypeError(f"expected NAME=PATH, got {text!r}")
    return name, path


def cmd_eval(args: argparse.Namespace) -> int:
    ds = load_dataset(args.data_dir)
    tables = [(name, load_embeddings(path, name if name in SOURCES else "gace")) for name, path in args.embeddings]
    rows = metrics_rows(ds, tables, HeadConfig(args.head_epochs, args.head_lr, args.seed), seed=args.seed)
    save_metrics(args.out, rows)
    for r in rows:
        print(f"{r['embed_model']:>10} {r['scope']:>9} auc={r['auc']:.4f} loss={r['loss']:.4f}")
    return 0


# --------------------------------------------------------------------------
# parser

def _graph_flags(p: argparse.ArgumentParser) -> None:
    defaults = GraphConfig()
    p.add_argument("--top-k", type=_positive_int, default=defaults.top_k)
    p.add_argument("--min-weight", type=float, default=defaults.min_weight)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adgraph-embed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic click dataset")
    p.add_argument("out_dir")
    synth = SyntheticConfig()
    p.add_argument("--n-items", type=_positive_int, default=synth.n_items)
    p.add_argument("--n-users", type=_positive_int, default=synth.n_users)
    p.add_argument("--n-pages", type=_positive_int, default=synth.n_pages)
    p.add_argument("--n-clusters", type=_positive_int, default=synth.n_clusters)
    p.add_argument("--n-impressions", type=_positive_int, default=synth.n_impressions)
    p.add_argument("--cold-fraction", type=float, default=synth.cold_fraction)
    p.add_argument("--k", type=_positive_int, default=synth.k, help="semantic vector width")
    p.add_argument("--seed", type=int, default=synth.seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate an items file and summarize it")
    p.add_argument("items")
    p.add_argument("--k", type=_positive_int, help="semantic width (inferred by default)")
    p.add_argument("--out", help="write the canonicalized items here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", help="build the weighted item graph")
    p.add_argument("items")
    p.add_argument("out")
    p.add_argument("--k", type=_positive_int, help="semantic width (inferred by default)")
    _graph_flags(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("pretrain", help="train the encoder and write a checkpoint")
    p.add_argument("graph")
    p.add_argument("out")
    tc = TrainConfig()
    p.add_argument("--epochs", type=int, default=tc.epochs)
    p.add_argument("--lr", type=float, default=tc.lr)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default=tc.optimizer)
    p.add_argument("--kl-weight", type=float, default=tc.kl_weight)
    p.add_argument("--seed", type=int, default=tc.seed)
    p.add_argument("--eps", type=float, default=tc.eps)
    p.add_argument("--dim", type=_positive_int, default=tc.dim)
    p.add_argument("--hidden", type=_positive_int, default=tc.hidden_dim)
    p.add_argument("--subtract-prior", action="store_true", help="subtract the prior term instead of adding it")
    p.add_argument("--history", help="write per-epoch losses as CSV")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", help="write embeddings for every graph node")
    p.add_argument("graph")
    p.add_argument("checkpoint")
    p.add_argument("out")
    p.add_argument("--sample", action="store_true", help="draw z instead of returning the mean")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("baseline", help="write a reference embedding table")
    p.add_argument("graph")
    p.add_argument("out")
    p.add_argument("--kind", choices=("rnd", "ngb"), required=True)
    p.add_argument("--dim", type=_positive_int, default=tc.dim)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="fit a CTR probe per embedding table and write metrics")
    p.add_argument("data_dir")
    p.add_argument("out")
    p.add_argument("embeddings", nargs="+", type=_named_path, metavar="NAME=PATH")
    head = HeadConfig()
    p.add_argument("--head-epochs", type=int, default=head.epochs)
    p.add_argument("--head-lr", type=float, default=head.lr)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors exit 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"adgraph-embed {args.command}: error: {' '.join(str(message).split())}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
