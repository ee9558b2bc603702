"""Reverse-mode differentiation substrate: tensors, tape, primitives, optimizers."""

from .checkpoint import load_params, save_params
from .gradcheck import GRAD_FLOOR, error_floor, grad_check, max_relative_error, numeric_gradient
from .optim import AdamWState, adamw_step, gd_step
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    concat_rows,
    elementwise_mul,
    exp,
    expm1,
    getitem,
    leaky_relu,
    log,
    masked_softmax,
    matmul,
    mean,
    mul,
    reduce_sum,
    relu,
    reshape,
    scale,
    segment_softmax,
    segment_sum,
    spmm,
    sub,
    transpose,
)

__all__ = [
    "AdamWState", "Tape", "Tensor", "add", "adamw_step", "as_tensor", "backward", "clamp",
    "concat", "concat_rows", "elementwise_mul", "exp", "expm1", "gd_step", "getitem", "grad_check", "GRAD_FLOOR", "error_floor", "max_relative_error", "numeric_gradient",
    "leaky_relu", "load_params", "log", "masked_softmax", "matmul", "mean", "mul",
    "reduce_sum", "relu", "reshape", "save_params", "scale", "segment_softmax",
    "segment_sum", "spmm", "sub", "transpose",
]
