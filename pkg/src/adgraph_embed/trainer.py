"""Decoder, reconstruction/prior losses and the full-batch pre-training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._fileio import atomic_write, fmt
from .encoder import AttentionStructure, EncoderParams, encode_tensors
from .graph import SELF_WEIGHT, WeightedGraph
from .numeric import (
    Tape,
    Tensor,
    adamw_step,
    as_tensor,
    backward,
    exp,
    expm1,
    gd_step,
    getitem,
    log,
    matmul,
    reduce_sum,
    relu,
    segment_sum,
    transpose,
)

log_ = logging.getLogger(__name__)

OPTIMIZERS = ("gd", "adamw")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-2
    optimizer: str = "adamw"
    kl_weight: float = 1.0
    seed: int = 0
    eps: float = 1e-8
    hidden_dim: int = 64
    dim: int = 15
    weight_decay: float = 0.01
    negative_slope: float = 0.2
    subtract_prior: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr <= 0 or self.eps <= 0:
            raise ValueError("lr and eps must be positive")
        if self.kl_weight < 0 or self.weight_decay < 0:
            raise ValueError("kl_weight and weight_decay must be non-negative")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.hidden_dim < 1 or self.dim < 1:
            raise ValueError("layer widths must be positive")


@dataclass
class TrainReport:
    history: np.ndarray  # epochs x (total, recon, prior)
    params: EncoderParams
    initial_params: EncoderParams
    wall_clock: float = 0.0

    def save_history(self, path: str | Path) -> None:
        with atomic_write(path) as fh:
            fh.write("epoch,total,recon,prior\n")
            for epoch, (total, recon, prior) in enumerate(self.history.tolist()):
                fh.write(f"{epoch},{fmt(total)},{fmt(recon)},{fmt(prior)}\n")


@dataclass
class LossTerms:
    total: Tensor
    recon: Tensor
    prior: Tensor
    tape: Tape
    params: dict[str, Tensor] = field(repr=False)

    def grads(self) -> dict[str, np.ndarray]:
        backward(self.total, self.tape, wrt=self.params.values())
        return {name: t.grad for name, t in self.params.items()}


# --------------------------------------------------------------------------
# decoder and losses

def decode(Z):
    """``ReLU(Z Zᵀ)``; returns a Tensor for Tensor input, else an array."""
    if isinstance(Z, Tensor):
        return relu(matmul(Z, transpose(Z)))
    Z = np.asarray(Z, dtype=np.float64)
    return np.maximum(Z @ Z.T, 0.0)


def decode_edges(Z: Tensor, src: np.ndarray, dst: np.ndarray) -> Tensor:
    """Entries of ``ReLU(Z Zᵀ)`` at ``(src, dst)`` without forming the dense matrix."""
    return relu(reduce_sum(getitem(Z, src) * getitem(Z, dst), axis=1))


def _target_edges(target) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(target, WeightedGraph):
        src, dst, w = target.augmented
        return target.n, src, dst, w
    A = np.asarray(target, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("target adjacency must be square")
    n = A.shape[0]
    W = A.copy()
    np.fill_diagonal(W, SELF_WEIGHT)
    src, dst = np.nonzero((W > 0))
    return n, src, dst, W[src, dst]


def row_kl(pred: Tensor, target: np.ndarray, src: np.ndarray, n: int, eps: float) -> Tensor:
    """Sum over rows of KL(p_pred || p_target), both rows eps-smoothed and normalized."""
    t = pred + eps
    log_p = log(t) - getitem(log(segment_sum(t, src, n)), src)
    q = target + eps
    log_q = np.log(q) - np.log(np.bincount(src, weights=q, minlength=n))[src]
    return reduce_sum(exp(log_p) * (log_p - log_q))


def recon_loss(ahat, target, eps: float = 1e-8):
    """Row-distribution KL between a predicted and a target adjacency.

    ``target`` is a :class:`WeightedGraph` or a dense adjacency matrix. Each row
    is restricted to N(i) ∪ {i}, with the self entry set to ``SELF_WEIGHT``.
    Returns a Tensor when ``ahat`` is a Tensor, else a float.
    """
    n, src, dst, w = _target_edges(target)
    if np.shape(ahat) != (n, n):
        raise ValueError(f"prediction shape {np.shape(ahat)} != target shape {(n, n)}")
    if isinstance(ahat, Tensor):
        return row_kl(getitem(ahat, (src, dst)), w, src, n, eps)
    return row_kl(Tensor(np.asarray(ahat, dtype=np.float64)[src, dst]), w, src, n, eps).item()


def prior_kl(mu, log_sigma):
    """Closed-form KL(N(mu, sigma²) || N(0, 1)) summed over nodes and dimensions."""
    if isinstance(mu, Tensor) or isinstance(log_sigma, Tensor):
        mu, log_sigma = as_tensor(mu), as_tensor(log_sigma)
        if mu.shape != log_sigma.shape:
            raise ValueError("mu and log_sigma shapes differ")
        terms = mu * mu + expm1(log_sigma * 2.0) - log_sigma * 2.0
        return reduce_sum(terms) * 0.5
    mu = np.asarray(mu, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    if mu.shape != log_sigma.shape:
        raise ValueError("mu and log_sigma shapes differ")
    return float(0.5 * np.sum(mu**2 + np.expm1(2 * log_sigma) - 2 * log_sigma))


def total_loss(
    graph: WeightedGraph,
    params: EncoderParams,
    config: TrainConfig,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
    structure: AttentionStructure | None = None,
) -> LossTerms:
    """Encode, sample, decode and score on a fresh tape.

    ``noise`` freezes the reparameterization draw; otherwise it comes from ``rng``.
    """
    s = structure or AttentionStructure.from_graph(graph)
    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        noise = rng.standard_normal((graph.n, params.dim))
    if np.shape(noise) != (graph.n, params.dim):
        raise ValueError(f"noise shape {np.shape(noise)} != {(graph.n, params.dim)}")
    _, _, w = graph.augmented
    tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.as_dict().items()}
    with Tape() as tape:
        mu, log_sigma = encode_tensors(s, Tensor(graph.features.X), tensors, params.negative_slope)
        Z = mu + exp(log_sigma) * noise
        recon = row_kl(decode_edges(Z, s.src, s.dst), w, s.src, s.n, config.eps)
        prior = prior_kl(mu, log_sigma)
        sign = -1.0 if config.subtract_prior else 1.0
        total = recon + prior * (sign * config.kl_weight)
    return LossTerms(total, recon, prior, tape, tensors)


def train(graph: WeightedGraph, config: TrainConfig = TrainConfig(), params: EncoderParams | None = None) -> TrainReport:
    """Full-batch training with a fresh noise draw per epoch; deterministic given the seed."""
    if graph.n < 2:
        raise ValueError("training needs at least two nodes")
    init_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(2)
    if params is None:
        params = EncoderParams.init(
            graph.features.F, config.hidden_dim, config.dim,
            seed=int(init_seq.generate_state(1)[0]), negative_slope=config.negative_slope,
        )
    rng = np.random.default_rng(noise_seq)
    structure = AttentionStructure.from_graph(graph)
    initial = params
    arrays = params.as_dict()
    state = None
    history = np.zeros((config.epochs, 3))
    start = time.perf_counter()
    for epoch in range(config.epochs):
        current = EncoderParams.from_dict(arrays, params.negative_slope)
        terms = total_loss(graph, current, config, rng=rng, structure=structure)
        history[epoch] = terms.total.item(), terms.recon.item(), terms.prior.item()
        if not np.all(np.isfinite(history[epoch])):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}: {history[epoch].tolist()}")
        grads = terms.grads()
        if config.optimizer == "adamw":
            arrays, state = adamw_step(arrays, grads, state, config.lr, config.weight_decay)
        else:
            arrays = gd_step(arrays, grads, config.lr)
        if epoch % 50 == 0:
            log_.debug("epoch %d total %.6g recon %.6g prior %.6g", epoch, *history[epoch])
    final = EncoderParams.from_dict(arrays, params.negative_slope)
    return TrainReport(history, final, initial, time.perf_counter() - start)


def with_overrides(config: TrainConfig, **kwargs) -> TrainConfig:
    return replace(config, **{k: v for k, v in kwargs.items() if v is not None})
