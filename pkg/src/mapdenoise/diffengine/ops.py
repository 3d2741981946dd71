"""Differentiable operators.

Each op computes its forward value with numpy (or the compiled kernels for
convolutions) and registers a closure returning one gradient per input.
Only same-shape operands and python scalars are accepted by the
elementwise ops; there is no general broadcasting.
"""

from __future__ import annotations

import numpy as np

from .. import _core
from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_result


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data + c, (a,), lambda g: (g,), "add")
    a = as_tensor(a)
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    a = as_tensor(a)
    _same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return make_result(a.data * c, (a,), lambda g: (g * c,), "mul")
    a = as_tensor(a)
    _same_shape(a, b, "mul")
    return make_result(
        a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul"
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def square(a: Tensor) -> Tensor:
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    axes = _norm_axis(axis, a.ndim)
    shape = a.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return make_result(np.sum(a.data, axis=axes), (a,), backward, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axes), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return make_result(out, (a,), lambda g: (g.reshape(old),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(a, (a.shape[0], -1))


def crop(a: Tensor, length: int) -> Tensor:
    """Keep the first ``length`` entries of the last axis."""
    full = a.shape
    if not 1 <= length <= full[-1]:
        raise ShapeError(f"crop: length {length} outside [1, {full[-1]}]")

    def backward(g):
        out = np.zeros(full)
        out[..., :length] = g
        return (out,)

    return make_result(a.data[..., :length].copy(), (a,), backward, "crop")


def leaky_relu(a: Tensor, alpha: float = 0.01) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, alpha * a.data)
    return make_result(out, (a,), lambda g: (np.where(pos, g, alpha * g),), "leaky_relu")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with x (B, in), weight (out, in), bias (out,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "linear")


def conv_output_length(length: int, kernel_size: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel_size) // stride + 1


def conv_transpose_output_length(length: int, kernel_size: int, stride: int, padding: int) -> int:
    return (length - 1) * stride - 2 * padding + kernel_size


def _check_conv(x, weight, bias, name):
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"{name}: expected 3-d input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[0 if name == "conv_transpose1d" else 1]:
        raise ShapeError(f"{name}: input {x.shape} channel count does not match weight {weight.shape}")
    n_out = weight.shape[1 if name == "conv_transpose1d" else 0]
    if bias is not None and bias.shape != (n_out,):
        raise ShapeError(f"{name}: bias {bias.shape} does not match weight {weight.shape}")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (B, Cin, L) with weight (Cout, Cin, K)."""
    _check_conv(x, weight, bias, "conv1d")
    length, k = x.shape[2], weight.shape[2]
    if conv_output_length(length, k, stride, padding) < 1:
        raise ShapeError(f"conv1d: input {x.shape} too short for weight {weight.shape}")
    out = _core.conv1d_forward(x.data, weight.data, stride, padding)
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        g = np.ascontiguousarray(g)
        grads = [
            _core.conv1d_backward_input(g, weight.data, stride, padding, length)
            if x.requires_grad else None,
            _core.conv1d_backward_weight(x.data, g, stride, padding, k),
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv1d")


def conv_transpose1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution: x (B, Cin, L), weight (Cin, Cout, K).

    This is the input-gradient of :func:`conv1d` with the same weight,
    giving output length ``(L - 1) * stride - 2 * padding + K``.
    """
    _check_conv(x, weight, bias, "conv_transpose1d")
    length, k = x.shape[2], weight.shape[2]
    out_len = conv_transpose_output_length(length, k, stride, padding)
    if out_len < 1:
        raise ShapeError(f"conv_transpose1d: output length {out_len} < 1 for input {x.shape}")
    out = _core.conv1d_backward_input(x.data, weight.data, stride, padding, out_len)
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        g = np.ascontiguousarray(g)
        grads = [
            _core.conv1d_forward(g, weight.data, stride, padding) if x.requires_grad else None,
            _core.conv1d_backward_weight(g, x.data, stride, padding, k),
        ]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv_transpose1d")
