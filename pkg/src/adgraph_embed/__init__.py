"""Cross-page ad embedding pre-training on a weighted item graph."""

from .baselines import ngb_emb, rnd_emb
from .ctr import SyntheticConfig, auc, cross_entropy, evaluate, gen_synthetic
from .encoder import EmbeddingTable, EncoderParams, embed, encode
from .graph import GraphConfig, WeightedGraph, build_graph, insert_node
from .items import AdRecord, ItemFormatError, load_items
from .trainer import TrainConfig, train

__all__ = [
    "AdRecord",
    "EmbeddingTable",
    "EncoderParams",
    "GraphConfig",
    "ItemFormatError",
    "SyntheticConfig",
    "TrainConfig",
    "WeightedGraph",
    "auc",
    "build_graph",
    "cross_entropy",
    "embed",
    "encode",
    "evaluate",
    "gen_synthetic",
    "insert_node",
    "load_items",
    "ngb_emb",
    "rnd_emb",
    "train",
]
