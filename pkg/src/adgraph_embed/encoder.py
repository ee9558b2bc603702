"""Variational graph-attention encoder with edge-weight-biased attention.

Each layer attends over N(i) ∪ {i}. The attention logit for a pair is the
usual content score ``LeakyReLU(a · [W x_i || W x_j])`` plus the row-softmax
of the stored edge weights (the self entry uses ``SELF_WEIGHT``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._fileio import atomic_write, fmt
from .graph import WeightedGraph
from .numeric import (
    Tensor,
    clamp,
    getitem,
    leaky_relu,
    matmul,
    relu,
    reshape,
    segment_softmax,
    spmm,
    transpose,
)

LOG_SIGMA_BOUND = 10.0
PARAM_NAMES = ("W_h", "a_h", "W_mu", "a_mu", "W_sig", "a_sig")


@dataclass(frozen=True, eq=False)
class EncoderParams:
    W_h: np.ndarray
    a_h: np.ndarray
    W_mu: np.ndarray
    a_mu: np.ndarray
    W_sig: np.ndarray
    a_sig: np.ndarray
    negative_slope: float = 0.2

    def __post_init__(self) -> None:
        hidden, F = np.shape(self.W_h)
        D = np.shape(self.W_mu)[0]
        expected = {
            "W_h": (hidden, F), "a_h": (2 * hidden,),
            "W_mu": (D, hidden), "a_mu": (2 * D,),
            "W_sig": (D, hidden), "a_sig": (2 * D,),
        }
        for name, shape in expected.items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if min(F, hidden, D) < 1:
            raise ValueError("all layer widths must be >= 1")

    @property
    def in_dim(self) -> int:
        return self.W_h.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_h.shape[0]

    @property
    def dim(self) -> int:
        return self.W_mu.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, arrays: Mapping[str, np.ndarray], negative_slope: float = 0.2) -> "EncoderParams":
        missing = set(PARAM_NAMES) - set(arrays)
        if missing:
            raise ValueError(f"missing encoder tensors: {sorted(missing)}")
        return cls(**{name: arrays[name] for name in PARAM_NAMES}, negative_slope=negative_slope)

    @classmethod
    def init(cls, in_dim: int, hidden_dim: int = 64, dim: int = 15, seed: int = 0,
             negative_slope: float = 0.2) -> "EncoderParams":
        """Glorot-uniform weight matrices, attention vectors at zero."""
        rng = np.random.default_rng(seed)

        def glorot(rows: int, cols: int) -> np.ndarray:
            bound = np.sqrt(6.0 / (rows + cols))
            return rng.uniform(-bound, bound, size=(rows, cols))

        return cls(
            W_h=glorot(hidden_dim, in_dim), a_h=np.zeros(2 * hidden_dim),
            W_mu=glorot(dim, hidden_dim), a_mu=np.zeros(2 * dim),
            W_sig=glorot(dim, hidden_dim), a_sig=np.zeros(2 * dim),
            negative_slope=negative_slope,
        )


@dataclass(frozen=True, eq=False)
class LatentState:
    mu: np.ndarray
    log_sigma: np.ndarray
    Z: np.ndarray | None = None

    def __post_init__(self) -> None:
        if np.shape(self.mu) != np.shape(self.log_sigma):
            raise ValueError("mu and log_sigma shapes differ")
        if self.Z is not None and np.shape(self.Z) != np.shape(self.mu):
            raise ValueError("Z shape differs from mu")
        if np.any(np.abs(self.log_sigma) > LOG_SIGMA_BOUND):
            raise ValueError("log_sigma outside the clamp range")


@dataclass(frozen=True, eq=False)
class AttentionStructure:
    """Augmented edge lists of a graph with the edge-weight softmax precomputed."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    theta: np.ndarray

    @classmethod
    def from_graph(cls, graph: WeightedGraph) -> "AttentionStructure":
        src, dst, w = graph.augmented
        n = graph.n
        peak = np.full(n, -np.inf)
        np.maximum.at(peak, src, w)
        e = np.exp(w - peak[src])
        theta = e / np.bincount(src, weights=e, minlength=n)[src]
        return cls(n, src, dst, theta)

    def row(self, i: int) -> slice:
        lo, hi = np.searchsorted(self.src, [i, i + 1])
        return slice(int(lo), int(hi))


def _structure(graph) -> AttentionStructure:
    return graph if isinstance(graph, AttentionStructure) else AttentionStructure.from_graph(graph)


# --------------------------------------------------------------------------
# tape-level layers

def attention_weights(s: AttentionStructure, XW: Tensor, a: Tensor, slope: float) -> Tensor:
    """gamma over augmented edges; ``XW`` holds the transformed node features."""
    Fp = XW.shape[1]
    scores = matmul(XW, transpose(reshape(a, (2, Fp))))
    content = getitem(scores, (s.src, 0)) + getitem(scores, (s.dst, 1))
    return segment_softmax(leaky_relu(content, slope) + s.theta, s.src, s.n)


def gat_tensor(s: AttentionStructure, X: Tensor, W: Tensor, a: Tensor, slope: float) -> Tensor:
    if X.ndim != 2 or W.ndim != 2 or X.shape[1] != W.shape[1]:
        raise ValueError(f"feature width {X.shape} does not match weight matrix {W.shape}")
    if a.shape != (2 * W.shape[0],):
        raise ValueError(f"attention vector shape {a.shape}, expected {(2 * W.shape[0],)}")
    XW = matmul(X, transpose(W))
    gam = attention_weights(s, XW, a, slope)
    return spmm(gam, s.src, s.dst, XW, s.n)


def encode_tensors(s: AttentionStructure, X: Tensor, p: Mapping[str, Tensor], slope: float) -> tuple[Tensor, Tensor]:
    H = relu(gat_tensor(s, X, p["W_h"], p["a_h"], slope))
    mu = gat_tensor(s, H, p["W_mu"], p["a_mu"], slope)
    log_sigma = clamp(gat_tensor(s, H, p["W_sig"], p["a_sig"], slope), -LOG_SIGMA_BOUND, LOG_SIGMA_BOUND)
    return mu, log_sigma


# --------------------------------------------------------------------------
# array-level API

def theta_row(graph, i: int) -> tuple[np.ndarray, np.ndarray]:
    """``(nodes, weights)`` of the edge-weight softmax over N(i) ∪ {i}, sorted by node."""
    s = _structure(graph)
    r = s.row(i)
    return s.dst[r].copy(), s.theta[r].copy()


def gamma(graph, i: int, X, W, a, slope: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """``(nodes, weights)`` of the attention distribution of node ``i``."""
    s = _structure(graph)
    X, W, a = (Tensor(v) for v in (X, W, a))
    if X.shape[1] != W.shape[1] or a.shape != (2 * W.shape[0],):
        raise ValueError("gamma: shape mismatch between X, W and a")
    gam = attention_weights(s, matmul(X, transpose(W)), a, slope)
    r = s.row(i)
    return s.dst[r].copy(), gam.data[r].copy()


def gat_layer(graph, X, W, a, slope: float = 0.2) -> np.ndarray:
    return gat_tensor(_structure(graph), Tensor(X), Tensor(W), Tensor(a), slope).data


def encode(graph: WeightedGraph, params: EncoderParams) -> LatentState:
    if graph.features.F != params.in_dim:
        raise ValueError(f"graph feature width {graph.features.F} != encoder input width {params.in_dim}")
    tensors = {k: Tensor(v) for k, v in params.as_dict().items()}
    mu, log_sigma = encode_tensors(_structure(graph), Tensor(graph.features.X), tensors, params.negative_slope)
    return LatentState(mu.data, log_sigma.data)


def reparameterize(latent: LatentState, rng_seed: int | np.random.Generator) -> np.ndarray:
    """``Z = mu + exp(log_sigma) * eps`` with standard-normal ``eps`` from the seeded generator."""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    eps = rng.standard_normal(latent.mu.shape)
    return latent.mu + np.exp(latent.log_sigma) * eps


def embed(graph: WeightedGraph, params: EncoderParams, sample: bool = False, seed: int = 0) -> np.ndarray:
    """Exported embeddings: the posterior mean, or one seeded sample when ``sample``."""
    latent = encode(graph, params)
    return reparameterize(latent, seed) if sample else latent.mu


# --------------------------------------------------------------------------
# embedding tables

SOURCES = ("rnd", "ngb", "gace")


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    ordering: tuple[str, ...]
    vectors: np.ndarray
    source: str

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.ordering):
            raise ValueError("one vector per id required")
        if len(set(self.ordering)) != len(self.ordering):
            raise ValueError("duplicate ids in embedding table")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("non-finite embedding entries")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source tag {self.source!r}")
        object.__setattr__(self, "ordering", tuple(self.ordering))
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, ids: Sequence[str]) -> np.ndarray:
        index = {ad_id: i for i, ad_id in enumerate(self.ordering)}
        missing = [a for a in ids if a not in index]
        if missing:
            raise KeyError(f"no embedding for {len(missing)} ids, e.g. {missing[0]!r}")
        return self.vectors[[index[a] for a in ids]]


def save_embeddings(path: str | Path, table: EmbeddingTable) -> None:
    """One line per node: ``ad_id v1 ... vD``."""
    with atomic_write(path) as fh:
        for ad_id, row in zip(table.ordering, table.vectors.tolist()):
            fh.write(ad_id + " " + " ".join(fmt(v) for v in row) + "\n")


def load_embeddings(path: str | Path, source: str = "gace") -> EmbeddingTable:
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad embedding value") from None
            ids.append(parts[0])
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError(f"{path}: empty table or ragged rows")
    return EmbeddingTable(tuple(ids), np.array(rows), source)
