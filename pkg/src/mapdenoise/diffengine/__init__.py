"""Minimal reverse-mode autodiff over float64 tensors, plus Adam."""

from .. import _core
from .ops import (
    add,
    conv1d,
    conv_output_length,
    conv_transpose1d,
    conv_transpose_output_length,
    crop,
    exp,
    flatten,
    leaky_relu,
    linear,
    mean,
    mul,
    neg,
    reshape,
    square,
    sub,
    sum,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor

BACKEND = _core.BACKEND

__all__ = [
    "Adam", "AdamState", "BACKEND", "Tensor", "adam_step", "add", "as_tensor",
    "conv1d", "conv_output_length", "conv_transpose1d", "conv_transpose_output_length",
    "crop", "exp", "flatten", "leaky_relu", "linear", "mean", "mul", "neg",
    "reshape", "square", "sub", "sum",
]
