"""Reverse-mode autodiff over numpy arrays."""
from .tensor import Record, Tape, Tensor, active_tape, backward, grad, no_record
from .ops import (
    add,
    as_tensor,
    broadcast_to,
    concat,
    constant,
    conv2d,
    conv_transpose2d,
    div,
    flip,
    horizontal_flip,
    instance_norm,
    leaky_relu,
    matmul,
    mean,
    mul,
    neg,
    pad_axis,
    relu,
    reshape,
    row_norm,
    sigmoid,
    slice_axis,
    sqrt,
    square,
    sub,
    sum,
    sum_to,
    tanh,
    transpose,
)
from .grad_norm import second_order_grad_norm

__all__ = [
    "Record", "Tape", "Tensor", "active_tape", "backward", "grad", "no_record",
    "add", "as_tensor", "broadcast_to", "concat", "constant", "conv2d", "conv_transpose2d",
    "div", "flip", "horizontal_flip", "instance_norm", "leaky_relu", "matmul", "mean", "mul",
    "neg", "pad_axis", "relu", "reshape", "row_norm", "sigmoid", "slice_axis", "sqrt", "square",
    "sub", "sum", "sum_to", "tanh", "transpose", "second_order_grad_norm",
]
