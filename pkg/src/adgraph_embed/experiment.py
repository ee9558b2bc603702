"""In-process pipeline: items -> graph -> pre-training -> embedding tables -> CTR metrics."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from .baselines import ngb_emb, rnd_emb
from .ctr import HeadConfig, SyntheticConfig, SyntheticDataset, gen_synthetic, metrics_rows
from .encoder import EmbeddingTable, embed
from .graph import GraphConfig, WeightedGraph, build_graph
from .items import AdRecord, assemble_node_features, build_page_profiles
from .trainer import TrainConfig, TrainReport, train


@dataclass
class PipelineResult:
    graph: WeightedGraph
    report: TrainReport
    tables: dict[str, EmbeddingTable]


def graph_from_items(items: Sequence[AdRecord], config: GraphConfig = GraphConfig()) -> WeightedGraph:
    profiles = build_page_profiles(items)
    return build_graph(assemble_node_features(items, profiles), config)


def embed_items(
    items: Sequence[AdRecord],
    graph_config: GraphConfig = GraphConfig(),
    train_config: TrainConfig = TrainConfig(),
) -> PipelineResult:
    graph = graph_from_items(items, graph_config)
    report = train(graph, train_config)
    ids = graph.features.ordering
    D = train_config.dim
    tables = {
        "gace": EmbeddingTable(ids, embed(graph, report.params), "gace"),
        "ngb": ngb_emb(graph, D),
        "rnd": rnd_emb(graph.n, D, train_config.seed, ids),
    }
    return PipelineResult(graph, report, tables)


def run_experiment(
    synthetic: SyntheticConfig = SyntheticConfig(),
    graph_config: GraphConfig = GraphConfig(),
    train_config: TrainConfig = TrainConfig(),
    head_config: HeadConfig = HeadConfig(),
) -> tuple[SyntheticDataset, PipelineResult, list[dict]]:
    """One seeded comparison of the three embedding sources on synthetic clicks."""
    ds = gen_synthetic(synthetic)
    result = embed_items(ds.items, graph_config, replace(train_config, seed=synthetic.seed))
    rows = metrics_rows(ds, list(result.tables.items()), head_config, seed=synthetic.seed)
    return ds, result, rows
