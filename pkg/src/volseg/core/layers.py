"""Thin Module wrappers over the functional kernels.

Initialisation policy: He-style normal for convolution weights, truncated
normal (std 0.02) for linear/attention weights, zeros for biases and shifts,
ones for scales. Every constructor draws from the caller's generator, so a
fixed seed yields bit-identical parameters.
"""

from __future__ import annotations

import numpy as np

from . import conv as F_conv
from . import norms as F_norms
from . import tensor as F
from .module import Module, Parameter, he_normal, trunc_normal

__all__ = [
    "Conv3d",
    "ConvTranspose3d",
    "Linear",
    "LayerNorm",
    "GroupNorm",
    "InstanceNorm3d",
    "BatchNorm3d",
    "Dropout",
]


class Conv3d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0, bias=True):
        super().__init__()
        k = kernel_size
        fan_in = in_channels * k**3
        self.weight = Parameter(he_normal(rng, (out_channels, in_channels, k, k, k), fan_in))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F_conv.conv3d(x, self.weight, self.bias, self.stride, self.padding)

    __call__ = forward


class ConvTranspose3d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=2, bias=True):
        super().__init__()
        k = kernel_size
        fan_in = in_channels * k**3
        self.weight = Parameter(he_normal(rng, (in_channels, out_channels, k, k, k), fan_in))
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32)) if bias else None
        self.stride = stride

    def forward(self, x):
        return F_conv.conv_transpose3d(x, self.weight, self.stride, self.bias)

    __call__ = forward


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.weight = Parameter(trunc_normal(rng, (in_features, out_features)))
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)

    __call__ = forward


class LayerNorm(Module):
    def __init__(self, dim, eps=F_norms.EPS):
        super().__init__()
        self.weight = Parameter(np.ones(dim, dtype=np.float32))
        self.bias = Parameter(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def forward(self, x):
        return F_norms.layer_norm(x, self.weight, self.bias, self.eps)

    __call__ = forward


class GroupNorm(Module):
    def __init__(self, num_groups, channels, eps=F_norms.EPS):
        super().__init__()
        self.num_groups = num_groups
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.eps = eps

    def forward(self, x):
        return F_norms.group_norm(x, self.num_groups, self.weight, self.bias, self.eps)

    __call__ = forward


class InstanceNorm3d(Module):
    def __init__(self, channels, eps=F_norms.EPS):
        super().__init__()
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.eps = eps

    def forward(self, x):
        return F_norms.instance_norm(x, self.weight, self.bias, self.eps)

    __call__ = forward


class BatchNorm3d(Module):
    def __init__(self, channels, momentum=0.1, eps=F_norms.EPS):
        super().__init__()
        self.weight = Parameter(np.ones(channels, dtype=np.float32))
        self.bias = Parameter(np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float32))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float32))
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return F_norms.batch_norm(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            self.training,
            self.momentum,
            self.eps,
        )

    __call__ = forward


class Dropout(Module):
    def __init__(self, p, rng):
        super().__init__()
        self.p = p
        self._rng = np.random.default_rng(int(rng.integers(2**63)))

    def forward(self, x):
        return F.dropout(x, self.p, self.training, self._rng)

    __call__ = forward
