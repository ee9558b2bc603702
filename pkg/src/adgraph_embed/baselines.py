"""Reference embedding generators: uniform random and neighbor-sum."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .encoder import EmbeddingTable
from .graph import WeightedGraph

RND_RANGE = 0.1


def rnd_emb(n: int, D: int, seed: int, ordering: Sequence[str] | None = None) -> EmbeddingTable:
    """I.i.d. uniform entries in [-0.1, 0.1]."""
    if n < 1 or D < 1:
        raise ValueError("n and D must be >= 1")
    ids = tuple(ordering) if ordering is not None else tuple(str(i) for i in range(n))
    if len(ids) != n:
        raise ValueError("ordering length does not match n")
    vectors = np.random.default_rng(seed).uniform(-RND_RANGE, RND_RANGE, size=(n, D))
    return EmbeddingTable(ids, vectors, "rnd")


def fit_width(M: np.ndarray, D: int) -> np.ndarray:
    """Truncate or zero-pad columns to width D."""
    if M.shape[1] >= D:
        return M[:, :D].copy()
    return np.hstack([M, np.zeros((M.shape[0], D - M.shape[1]))])


def ngb_emb(graph: WeightedGraph, D: int = 15) -> EmbeddingTable:
    """Own feature row plus the unweighted sum of neighbor rows, fitted to width D."""
    X = graph.features.X
    pattern = graph.adjacency.copy()
    pattern.data[:] = 1.0
    summed = X + pattern @ X
    return EmbeddingTable(graph.features.ordering, fit_width(summed, D), "ngb")
