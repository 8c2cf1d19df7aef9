"""Minimal float64 tensor core: tape autodiff, FAWN's layer ops, losses, Adam."""

from .gradcheck import activation_pattern, finite_diff_grad, relative_error
from .graph import ContractError, Graph, ShapeError, Var, backward
from .ops import (
    add,
    as_var,
    bce_logits,
    conv2d,
    cross_entropy_logits,
    flatten,
    linear,
    matmul,
    maxpool2d,
    mean_all,
    mul,
    relu,
    reshape,
    scale,
    sigmoid_array,
    softmax,
    softmax_array,
    stack,
    sum_all,
    swap_last,
)
from .optim import AdamState, adam_step
from .rng import Rng, splitmix64

__all__ = [
    "AdamState",
    "ContractError",
    "Graph",
    "Rng",
    "ShapeError",
    "Var",
    "adam_step",
    "activation_pattern",
    "add",
    "as_var",
    "backward",
    "bce_logits",
    "conv2d",
    "cross_entropy_logits",
    "finite_diff_grad",
    "flatten",
    "linear",
    "matmul",
    "maxpool2d",
    "mean_all",
    "mul",
    "relative_error",
    "relu",
    "reshape",
    "scale",
    "sigmoid_array",
    "softmax",
    "softmax_array",
    "splitmix64",
    "stack",
    "sum_all",
    "swap_last",
]
