"""Shared building blocks for the segmentation architectures."""

from __future__ import annotations

import math

from ..core import tensor as F
from ..core.layers import BatchNorm3d, Conv3d, ConvTranspose3d, GroupNorm, InstanceNorm3d, Linear
from ..core.module import Module
from ..errors import ConfigurationError

__all__ = [
    "ConvBnRelu",
    "UpConvBnRelu",
    "ResidualUnit",
    "ResBlock",
    "Mlp",
    "to_tokens",
    "from_tokens",
    "record",
]


def record(trace, name: str, t):
    """Append ``(name, shape)`` to an optional trace list and pass ``t`` through."""
    if trace is not None:
        trace.append((name, tuple(t.shape)))
    return t


def to_tokens(x):
    """``(N, C, H, W, D)`` -> ``(N, H*W*D, C)`` plus the spatial extents."""
    n, c = x.shape[0], x.shape[1]
    spatial = x.shape[2:]
    tokens = F.reshape(F.permute(x, (0, 2, 3, 4, 1)), (n, math.prod(spatial), c))
    return tokens, spatial


def from_tokens(tokens, spatial):
    """Inverse of :func:`to_tokens`."""
    n, _, c = tokens.shape
    x = F.reshape(tokens, (n,) + tuple(spatial) + (c,))
    return F.permute(x, (0, 4, 1, 2, 3))


class ConvBnRelu(Module):
    """3x3x3 convolution, batch norm, ReLU."""

    def __init__(self, in_channels, out_channels, rng, stride=1):
        super().__init__()
        self.conv = Conv3d(in_channels, out_channels, 3, rng, stride=stride, padding=1)
        self.norm = BatchNorm3d(out_channels)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))

    __call__ = forward


class UpConvBnRelu(Module):
    """2x2x2 stride-2 transposed convolution followed by :class:`ConvBnRelu`."""

    def __init__(self, in_channels, out_channels, rng):
        super().__init__()
        self.up = ConvTranspose3d(in_channels, out_channels, 2, rng, stride=2)
        self.block = ConvBnRelu(out_channels, out_channels, rng)

    def forward(self, x):
        return self.block(self.up(x))

    __call__ = forward


class ResidualUnit(Module):
    """Pre-activation residual unit: GN, ReLU, conv3, GN, ReLU, conv3, skip."""

    def __init__(self, channels, groups, rng):
        super().__init__()
        if channels % groups:
            raise ConfigurationError(
                f"residual unit width {channels} is not divisible by {groups} norm groups"
            )
        self.norm1 = GroupNorm(groups, channels)
        self.conv1 = Conv3d(channels, channels, 3, rng, padding=1)
        self.norm2 = GroupNorm(groups, channels)
        self.conv2 = Conv3d(channels, channels, 3, rng, padding=1)

    def forward(self, x):
        h = self.conv1(F.relu(self.norm1(x)))
        h = self.conv2(F.relu(self.norm2(h)))
        return x + h

    __call__ = forward


class ResBlock(Module):
    """Two-convolution residual block with a projected skip when widths differ."""

    def __init__(self, in_channels, out_channels, rng, norm="instance"):
        super().__init__()

        def make_norm(ch):
            return BatchNorm3d(ch) if norm == "batch" else InstanceNorm3d(ch)

        self.conv1 = Conv3d(in_channels, out_channels, 3, rng, padding=1)
        self.norm1 = make_norm(out_channels)
        self.conv2 = Conv3d(out_channels, out_channels, 3, rng, padding=1)
        self.norm2 = make_norm(out_channels)
        self.skip = (
            Conv3d(in_channels, out_channels, 1, rng, bias=False)
            if in_channels != out_channels
            else None
        )

    def forward(self, x):
        h = F.leaky_relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        s = self.skip(x) if self.skip is not None else x
        return F.leaky_relu(h + s)

    __call__ = forward


class Mlp(Module):
    """Transformer feed-forward: linear, GELU, linear."""

    def __init__(self, dim, hidden, rng):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))

    __call__ = forward
