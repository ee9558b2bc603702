"""Weighted undirected ad graph from semantic and page similarity."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from ._fileio import atomic_write, fmt
from .items import PAGE_DIM, AdRecord, NodeFeatures, PageProfile, feature_row

SELF_WEIGHT = 1.0


@dataclass(frozen=True)
class GraphConfig:
    top_k: int = 16
    min_weight: float = 1e-6
    block_size: int = 512

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError("top_k must be positive")
        if self.min_weight < 0:
            raise ValueError("min_weight must be non-negative")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Node features plus a symmetric CSR adjacency without self-edges.

    Neighbor lists (CSR rows) are sorted by node index.
    """

    features: NodeFeatures
    adjacency: sp.csr_matrix = field(repr=False)

    def __post_init__(self) -> None:
        A = sp.csr_matrix(self.adjacency, dtype=np.float64)
        A.eliminate_zeros()
        A.sum_duplicates()
        A.sort_indices()
        n = self.features.n
        if A.shape != (n, n):
            raise ValueError(f"adjacency shape {A.shape} does not match {n} nodes")
        if A.nnz and (A.data.min() <= 0 or not np.all(np.isfinite(A.data))):
            raise ValueError("edge weights must be finite and strictly positive")
        if A.diagonal().any():
            raise ValueError("self-edges are not allowed")
        if (A != A.T).nnz:
            raise ValueError("adjacency is not symmetric")
        object.__setattr__(self, "adjacency", A)

    @property
    def n(self) -> int:
        return self.features.n

    @property
    def m(self) -> int:
        """Number of undirected edges."""
        return self.adjacency.nnz // 2

    @property
    def semantic(self) -> np.ndarray:
        return self.features.semantic

    @property
    def pages(self) -> np.ndarray:
        return self.features.pages

    def neighbors(self, i: int) -> np.ndarray:
        A = self.adjacency
        return A.indices[A.indptr[i] : A.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        A = self.adjacency
        return A.data[A.indptr[i] : A.indptr[i + 1]]

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Undirected edge list ``(i, j, w)`` with ``i < j``, lexicographically sorted."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]

    @cached_property
    def augmented(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Directed ``(src, dst, weight)`` over N(i) ∪ {i}, sorted by (src, dst).

        The self entry carries ``SELF_WEIGHT``.
        """
        A = (self.adjacency + SELF_WEIGHT * sp.identity(self.n, format="csr")).tocsr()
        A.sort_indices()
        src = np.repeat(np.arange(self.n), np.diff(A.indptr))
        return src, A.indices.astype(np.int64), A.data.copy()


def edge_weight(s_i, s_j, p_i, p_j) -> float:
    """``ReLU(s_i · s_j) * ReLU(p_i · p_j)``."""
    s_i, s_j, p_i, p_j = (np.asarray(v, dtype=np.float64) for v in (s_i, s_j, p_i, p_j))
    if s_i.shape != s_j.shape or s_i.ndim != 1:
        raise ValueError(f"semantic vectors differ in shape: {s_i.shape} vs {s_j.shape}")
    if p_i.shape != p_j.shape or p_i.ndim != 1:
        raise ValueError(f"page vectors differ in shape: {p_i.shape} vs {p_j.shape}")
    return max(0.0, float(s_i @ s_j)) * max(0.0, float(p_i @ p_j))


def _pair_weights(S: np.ndarray, P: np.ndarray, i: np.ndarray, j: np.ndarray) -> np.ndarray:
    alpha = np.einsum("ij,ij->i", S[i], S[j])
    beta = np.einsum("ij,ij->i", P[i], P[j])
    return np.maximum(alpha, 0.0) * np.maximum(beta, 0.0)


def _select(W: np.ndarray, config: GraphConfig) -> np.ndarray:
    """Per-row candidate mask: positive, >= min_weight, and not lighter than the k-th heaviest.

    Ties at the k-th weight are all kept, so the rule does not depend on node order.
    """
    cand = (W > 0) & (W >= config.min_weight)
    if W.shape[1] <= config.top_k:
        return cand
    masked = np.where(cand, W, 0.0)
    kth = -np.partition(-masked, config.top_k - 1, axis=1)[:, config.top_k - 1]
    return cand & (W >= kth[:, None])


def _assemble(features: NodeFeatures, lo: np.ndarray, hi: np.ndarray, config: GraphConfig) -> WeightedGraph:
    n = features.n
    if lo.size:
        key = np.unique(lo * n + hi)
        lo, hi = key // n, key % n
    w = _pair_weights(features.semantic, features.pages, lo, hi)
    keep = (w > 0) & (w >= config.min_weight)
    lo, hi, w = lo[keep], hi[keep], w[keep]
    A = sp.csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))), shape=(n, n)
    )
    return WeightedGraph(features, A)


def build_graph(features: NodeFeatures, config: GraphConfig = GraphConfig()) -> WeightedGraph:
    """Sparsified similarity graph using the union top-k rule.

    Pairwise weights are computed a row block at a time, so peak memory is
    ``O(block_size * n)``.
    """
    S, P = features.semantic, features.pages
    n = features.n
    rows, cols = [], []
    for r0 in range(0, n, config.block_size):
        r1 = min(n, r0 + config.block_size)
        W = np.maximum(S[r0:r1] @ S.T, 0.0) * np.maximum(P[r0:r1] @ P.T, 0.0)
        W[np.arange(r1 - r0), np.arange(r0, r1)] = 0.0
        i, j = np.nonzero(_select(W, config))
        rows.append(i + r0)
        cols.append(j)
    i = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    j = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    return _assemble(features, np.minimum(i, j), np.maximum(i, j), config)


def insert_node(
    graph: WeightedGraph,
    record: AdRecord,
    profiles: Mapping[str, PageProfile],
    config: GraphConfig = GraphConfig(),
) -> tuple[WeightedGraph, int]:
    """Append ``record`` as a new node, keeping every existing edge.

    Edges to the new node follow the same union top-k rule as
    :func:`build_graph`, with the new node counted among each existing
    node's candidates.
    """
    feats = graph.features
    if record.ad_id in feats.index:
        raise ValueError(f"ad_id {record.ad_id!r} already in graph")
    if len(record.semantic_vec) != feats.k:
        raise ValueError(f"semantic_vec has {len(record.semantic_vec)} entries, expected {feats.k}")
    if feats.interaction_min is None and not record.is_new:
        raise ValueError("graph features carry no interaction scaler; only new items can be inserted")
    lo = feats.interaction_min if feats.interaction_min is not None else np.zeros(4)
    hi = feats.interaction_max if feats.interaction_max is not None else np.zeros(4)
    row = feature_row(record, profiles, lo, hi)
    new_feats = NodeFeatures(
        feats.ordering + (record.ad_id,), np.vstack([feats.X, row]), feats.k,
        feats.interaction_min, feats.interaction_max,
    )
    n = feats.n
    S, P = new_feats.semantic, new_feats.pages
    w_new = np.maximum(S[:n] @ S[n], 0.0) * np.maximum(P[:n] @ P[n], 0.0)
    mine = _select(w_new[None, :], config)[0]
    theirs = np.zeros(n, dtype=bool)
    cand = np.flatnonzero((w_new > 0) & (w_new >= config.min_weight))
    for r0 in range(0, cand.size, config.block_size):
        js = cand[r0 : r0 + config.block_size]
        W = np.maximum(S[js] @ S.T, 0.0) * np.maximum(P[js] @ P.T, 0.0)
        W[np.arange(js.size), js] = 0.0
        theirs[js] = _select(W, config)[:, n]
    linked = np.flatnonzero(mine | theirs)
    w = _pair_weights(S, P, linked, np.full(linked.size, n))
    keep = (w > 0) & (w >= config.min_weight)
    linked, w = linked[keep], w[keep]
    old = graph.adjacency.tocoo()
    new = np.full(linked.size, n)
    A = sp.csr_matrix(
        (
            np.concatenate([old.data, w, w]),
            (np.concatenate([old.row, linked, new]), np.concatenate([old.col, new, linked])),
        ),
        shape=(n + 1, n + 1),
    )
    return WeightedGraph(new_feats, A), n


# --------------------------------------------------------------------------
# graph file

def save_graph(path: str | Path, graph: WeightedGraph) -> None:
    """Header ``n m k d F``, then ``i j weight`` edges (i < j), then ``ad_id x_1 .. x_F`` rows."""
    i, j, w = graph.edges()
    feats = graph.features
    with atomic_write(path) as fh:
        fh.write(f"{graph.n} {i.size} {feats.k} {PAGE_DIM} {feats.F}\n")
        for a, b, v in zip(i.tolist(), j.tolist(), w.tolist()):
            fh.write(f"{a} {b} {fmt(v)}\n")
        for ad_id, row in zip(feats.ordering, feats.X.tolist()):
            fh.write(ad_id + " " + " ".join(fmt(v) for v in row) + "\n")


def load_graph(path: str | Path) -> WeightedGraph:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    try:
        n, m, k, d, F = (int(t) for t in lines[0].split())
    except (IndexError, ValueError):
        raise ValueError(f"{path}: bad graph header") from None
    if d != PAGE_DIM:
        raise ValueError(f"{path}: page dimension {d} != {PAGE_DIM}")
    if len(lines) != 1 + m + n:
        raise ValueError(f"{path}: expected {1 + m + n} lines, found {len(lines)}")
    rows = np.empty(m, np.int64)
    cols = np.empty(m, np.int64)
    vals = np.empty(m)
    for e, line in enumerate(lines[1 : 1 + m]):
        a, b, v = line.split()
        rows[e], cols[e], vals[e] = int(a), int(b), float(v)
    ids, X = [], np.empty((n, F))
    for r, line in enumerate(lines[1 + m :]):
        parts = line.split(" ")
        if len(parts) != F + 1:
            raise ValueError(f"{path}: line {2 + m + r}: expected {F + 1} fields")
        ids.append(parts[0])
        X[r] = [float(v) for v in parts[1:]]
    A = sp.csr_matrix(
        (np.concatenate([vals, vals]), (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    return WeightedGraph(NodeFeatures(tuple(ids), X, k), A)
