"""Normalisation layers with hand-derived backward passes.

All variants share one normalisation core: subtract the mean and divide by
the square root of the population variance plus ``eps``, computed over an
operation-specific reduction set, then apply a per-channel affine map.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, make_result

__all__ = ["group_norm", "layer_norm", "batch_norm", "instance_norm", "EPS"]

EPS = 1e-5


def _norm_backward(g_hat, x_hat, inv, axes):
    """Gradient of ``x_hat = (x - mean) * inv`` w.r.t. ``x`` over reduction ``axes``."""
    m = 1
    for a in axes:
        m *= x_hat.shape[a]
    mean_g = g_hat.sum(axis=axes, keepdims=True) / m
    mean_gx = (g_hat * x_hat).sum(axis=axes, keepdims=True) / m
    return inv * (g_hat - mean_g - x_hat * mean_gx)


def group_norm(x, num_groups: int, weight, bias, eps: float = EPS) -> Tensor:
    """Group normalisation over ``(batch, channels, *spatial)`` input."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    n, c = x.shape[0], x.shape[1]
    if c % num_groups:
        raise DimensionError(f"channels {c} not divisible by groups {num_groups}")
    if weight.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"affine parameters must have shape ({c},)")
    spatial = x.shape[2:]
    grouped_shape = (n, num_groups, (c // num_groups) * int(np.prod(spatial or (1,))))

    xg = x.data.reshape(grouped_shape)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    x_hat = ((xg - mean) * inv).reshape(x.shape)
    cshape = (1, c) + (1,) * len(spatial)
    out_data = x_hat * weight.data.reshape(cshape) + bias.data.reshape(cshape)

    def apply(g):
        if weight.requires_grad:
            weight.accumulate_grad((g * x_hat).sum(axis=(0,) + tuple(range(2, x.ndim))))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0,) + tuple(range(2, x.ndim))))
        if x.requires_grad:
            g_hat = (g * weight.data.reshape(cshape)).reshape(grouped_shape)
            gx = _norm_backward(g_hat, x_hat.reshape(grouped_shape), inv, (2,))
            x.accumulate_grad(gx.reshape(x.shape))

    return make_result(out_data, (x, weight, bias), apply, "group_norm")


def instance_norm(x, weight, bias, eps: float = EPS) -> Tensor:
    """Instance normalisation: one group per channel."""
    return group_norm(x, x.shape[1], weight, bias, eps)


def layer_norm(x, weight, bias, eps: float = EPS) -> Tensor:
    """Layer normalisation over the last axis of ``x``."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    c = x.shape[-1]
    if weight.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"affine parameters must have shape ({c},)")

    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv
    out_data = x_hat * weight.data + bias.data
    lead = tuple(range(x.ndim - 1))

    def apply(g):
        if weight.requires_grad:
            weight.accumulate_grad((g * x_hat).sum(axis=lead))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=lead))
        if x.requires_grad:
            x.accumulate_grad(_norm_backward(g * weight.data, x_hat, inv, (x.ndim - 1,)))

    return make_result(out_data, (x, weight, bias), apply, "layer_norm")


def batch_norm(
    x,
    weight,
    bias,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = EPS,
) -> Tensor:
    """Batch normalisation over ``(batch, channels, *spatial)`` input.

    In training mode the batch statistics normalise the activations and the
    running buffers are updated in place (``(1 - momentum) * old + momentum *
    new``, unbiased variance for the running estimate). In eval mode the
    running buffers normalise.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    c = x.shape[1]
    if weight.shape != (c,) or bias.shape != (c,):
        raise DimensionError(f"affine parameters must have shape ({c},)")
    axes = (0,) + tuple(range(2, x.ndim))
    cshape = (1, c) + (1,) * (x.ndim - 2)
    m = x.size // c

    if training:
        if m < 2:
            raise DimensionError("batch_norm in training mode needs at least 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv = (1.0 / np.sqrt(var + eps)).reshape(cshape)
    x_hat = (x.data - mean.reshape(cshape)) * inv
    out_data = x_hat * weight.data.reshape(cshape) + bias.data.reshape(cshape)

    def apply(g):
        if weight.requires_grad:
            weight.accumulate_grad((g * x_hat).sum(axis=axes))
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=axes))
        if x.requires_grad:
            g_hat = g * weight.data.reshape(cshape)
            if training:
                x.accumulate_grad(_norm_backward(g_hat, x_hat, inv, axes))
            else:
                x.accumulate_grad(g_hat * inv)

    return make_result(out_data, (x, weight, bias), apply, "batch_norm")
