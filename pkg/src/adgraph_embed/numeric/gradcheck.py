"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward

# Gradient entries below GRAD_FLOOR * max(1, |loss|) sit at finite-difference
# round-off level, so that value floors the relative-error denominator.
GRAD_FLOOR = 1e-6


def error_floor(loss: float) -> float:
    return GRAD_FLOOR * max(1.0, abs(loss))


def numeric_gradient(value: Callable[[], float], arrays: Mapping[str, np.ndarray], eps: float = 1e-4) -> dict[str, np.ndarray]:
    """Central differences of ``value()`` w.r.t. every entry of ``arrays``.

    Entries are perturbed in place and restored; ``value`` must read them.
    """
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = value()
            arr[idx] = orig - eps
            down = value()
            arr[idx] = orig
            g[idx] = (up - down) / (2.0 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor: float = GRAD_FLOOR) -> float:
    """``max |a - n| / max(floor, |a| + |n|)`` over all entries of paired arrays."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
        if a.shape != n.shape:
            raise ValueError(f"gradient shapes differ: {a.shape} vs {n.shape}")
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(floor, np.abs(a) + np.abs(n)))))
    return worst


def grad_check(
    f: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    floor: float | None = None,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``floor`` defaults to :func:`error_floor` of the loss value. ``f`` is re-evaluated outside any tape for the finite differences, and
    ``params`` are restored to their original values afterwards.
    """
    params = list(params)
    for p in params:
        p.requires_grad = True
    with Tape() as tape:
        loss = f(params)
    backward(loss, tape, wrt=params)
    analytic = [p.grad.copy() for p in params]
    arrays = {str(i): p.data for i, p in enumerate(params)}
    numeric = numeric_gradient(lambda: f(params).item(), arrays, eps)
    floor = error_floor(loss.item()) if floor is None else floor
    return max_relative_error(analytic, numeric.values(), floor)
