"""Full-batch parameter updates on dicts of named arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class AdamWState:
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def _check(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    if params.keys() != grads.keys():
        raise ValueError(f"parameter/gradient names differ: {sorted(params)} vs {sorted(grads)}")
    for name, p in params.items():
        if np.shape(p) != np.shape(grads[name]):
            raise ValueError(f"{name}: parameter shape {np.shape(p)} != gradient shape {np.shape(grads[name])}")


def gd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    _check(params, grads)
    return {name: np.asarray(p) - lr * np.asarray(grads[name]) for name, p in params.items()}


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamWState | None,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One AdamW update with bias correction and decoupled weight decay.

    Returns new arrays and a new state; the inputs are not modified.
    """
    _check(params, grads)
    state = state or AdamWState()
    beta1, beta2 = betas
    step = state.step + 1
    bc1 = 1.0 - beta1**step
    bc2 = 1.0 - beta2**step
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.exp_avg.get(name, np.zeros_like(p))
        v = state.exp_avg_sq.get(name, np.zeros_like(p))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        p = p * (1.0 - lr * weight_decay)
        new_params[name] = p - (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamWState(step, m_new, v_new)
