"""SegResNet: an asymmetric residual CNN encoder-decoder.

The encoder stacks pre-activation residual units (group norm, ReLU, two 3x3x3
convolutions, identity skip) with stride-2 convolutional downsampling between
scales; the decoder reduces channels with a 1x1x1 convolution, upsizes
trilinearly, adds the encoder skip, and applies one residual unit per scale.
The variational-autoencoder regulariser of the original design is omitted.
"""

from __future__ import annotations

from ..core.conv import trilinear_upsample
from ..core.layers import Conv3d, Dropout
from ..core.module import Module, ModuleList
from ..errors import DimensionError
from .blocks import ResidualUnit, record

__all__ = ["SegResNet", "segresnet_shape_table"]


class SegResNet(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        f, g = cfg.init_filters, cfg.groups
        widths = [f * 2**i for i in range(4)]

        self.stem = Conv3d(cfg.in_channels, f, 3, rng, padding=1)
        self.drop = Dropout(cfg.dropout, rng)
        self.downs = ModuleList(
            Conv3d(widths[i], widths[i + 1], 3, rng, stride=2, padding=1) for i in range(3)
        )
        self.enc = ModuleList(
            ModuleList(ResidualUnit(widths[i], g, rng) for _ in range(n))
            for i, n in enumerate(cfg.enc_blocks)
        )
        self.reduces = ModuleList(
            Conv3d(widths[i + 1], widths[i], 1, rng) for i in reversed(range(3))
        )
        self.dec = ModuleList(
            ModuleList(ResidualUnit(widths[i], g, rng) for _ in range(n))
            for i, n in zip(reversed(range(3)), cfg.dec_blocks)
        )
        self.head = Conv3d(f, cfg.out_classes, 1, rng)

    def forward(self, x, trace=None):
        cfg = self.cfg
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise DimensionError(
                f"segresnet expects (N, {cfg.in_channels}, E, E, E) input, got {tuple(x.shape)}"
            )
        if any(e % 8 for e in x.shape[2:]):
            raise DimensionError(
                f"segresnet input extents must be divisible by 8 (three downsamplings), "
                f"got {tuple(x.shape[2:])}"
            )

        h = record(trace, "stem", self.drop(self.stem(x)))
        skips = []
        for i, stage in enumerate(self.enc):
            if i:
                h = self.downs[i - 1](h)
            for unit in stage:
                h = unit(h)
            record(trace, "bottleneck" if i == len(self.enc) - 1 else f"enc{i + 1}", h)
            skips.append(h)

        h = skips.pop()
        for i, (reduce, stage) in enumerate(zip(self.reduces, self.dec)):
            h = trilinear_upsample(reduce(h), 2) + skips.pop()
            for unit in stage:
                h = unit(h)
            record(trace, f"dec{len(self.reduces) - i}", h)
        return record(trace, "logits", self.head(h))

    __call__ = forward


def segresnet_shape_table(cfg, extent: int, batch: int = 1):
    """Expected ``(stage, shape)`` pairs for a cubic input of ``extent``."""
    f = cfg.init_filters

    def cube(ch, div):
        return (batch, ch) + (extent // div,) * 3

    return [
        ("stem", cube(f, 1)),
        ("enc1", cube(f, 1)),
        ("enc2", cube(2 * f, 2)),
        ("enc3", cube(4 * f, 4)),
        ("bottleneck", cube(8 * f, 8)),
        ("dec3", cube(4 * f, 4)),
        ("dec2", cube(2 * f, 2)),
        ("dec1", cube(f, 1)),
        ("logits", cube(cfg.out_classes, 1)),
    ]
