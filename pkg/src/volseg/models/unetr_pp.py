"""UNETR++: hierarchical encoder-decoder built from efficient paired attention.

Each stage first downsamples (a stride-4 patch embedding, then stride-2
convolutions) and then applies EPA blocks. An EPA block computes two
attentions over the token matrix: a spatial branch in which every token
attends to a small learned projection of the key/value tokens, and a channel
branch in which L2-normalised channel profiles attend to each other under a
learned temperature. Both branches read the same shared query/key
projections; their outputs are linearly projected and fused by summation.
The decoder mirrors the encoder with deconvolution + concatenation + one EPA
block per scale, and a full-resolution convolutional path from the raw input
joins before the final 1x1x1 head.
"""

from __future__ import annotations

import math

import numpy as np

from ..core import tensor as F
from ..core.layers import BatchNorm3d, Conv3d, ConvTranspose3d, Dropout, GroupNorm, LayerNorm, Linear
from ..core.module import Module, ModuleList, Parameter
from ..errors import DimensionError
from .blocks import ConvBnRelu, ResBlock, from_tokens, record, to_tokens

__all__ = ["UNETRpp", "unetrpp_shape_table"]


def _l2_normalize(x, axis=-1, eps=1e-12):
    return x * ((x * x).sum(axis=axis, keepdims=True) + eps) ** -0.5


class EPA(Module):
    """Efficient paired attention over a ``(N, tokens, C)`` sequence."""

    def __init__(self, dim, heads, tokens, proj_tokens, rng):
        super().__init__()
        self.qkvv = Linear(dim, 4 * dim, rng, bias=False)
        self.token_proj = Linear(tokens, min(proj_tokens, tokens), rng, bias=False)
        self.temperature = Parameter(np.ones((heads, 1, 1), dtype=np.float32))
        self.out_spatial = Linear(dim, dim, rng)
        self.out_channel = Linear(dim, dim, rng)
        self.dim = dim
        self.heads = heads

    def forward(self, x):
        n, t, c = x.shape
        h, ch = self.heads, c // self.heads
        parts = self.qkvv(x)  # (N, T, 4C)
        # -> four (N, heads, ch, T) stacks: rows are per-head channel profiles.
        parts = F.permute(F.reshape(parts, (n, t, 4, h, ch)), (2, 0, 3, 4, 1))
        q, k, v_channel, v_spatial = parts[0], parts[1], parts[2], parts[3]

        k_proj = self.token_proj(k)  # (N, heads, ch, p)
        v_proj = self.token_proj(v_spatial)
        qn = _l2_normalize(q)
        kn = _l2_normalize(k)

        attn_c = F.softmax(F.matmul(qn, F.permute(kn, (0, 1, 3, 2))) * self.temperature, axis=-1)
        out_c = F.matmul(attn_c, v_channel)  # (N, heads, ch, T)
        out_c = F.reshape(F.permute(out_c, (0, 3, 1, 2)), (n, t, c))

        scale = 1.0 / math.sqrt(ch)
        attn_s = F.softmax(F.matmul(F.permute(qn, (0, 1, 3, 2)), k_proj) * scale, axis=-1)
        out_s = F.matmul(attn_s, F.permute(v_proj, (0, 1, 3, 2)))  # (N, heads, T, ch)
        out_s = F.reshape(F.permute(out_s, (0, 2, 1, 3)), (n, t, c))

        return self.out_spatial(out_s) + self.out_channel(out_c)

    __call__ = forward


class EPABlock(Module):
    """Residual EPA over tokens followed by a residual convolutional mixer."""

    def __init__(self, dim, heads, tokens, proj_tokens, rng):
        super().__init__()
        self.norm = LayerNorm(dim)
        self.gamma = Parameter(np.full(dim, 1e-6, dtype=np.float32))
        self.epa = EPA(dim, heads, tokens, proj_tokens, rng)
        self.mixer = ResBlock(dim, dim, rng, norm="batch")
        self.drop = Dropout(0.1, rng)
        self.proj = Conv3d(dim, dim, 1, rng)

    def forward(self, x):
        tokens, spatial = to_tokens(x)
        tokens = tokens + self.gamma * self.epa(self.norm(tokens))
        y = from_tokens(tokens, spatial)
        return y + self.proj(self.drop(self.mixer(y)))

    __call__ = forward


class Downsample(Module):
    """Strided convolution followed by a single-group group norm."""

    def __init__(self, in_channels, out_channels, kernel, rng):
        super().__init__()
        self.conv = Conv3d(in_channels, out_channels, kernel, rng, stride=kernel)
        self.norm = GroupNorm(1, out_channels)

    def forward(self, x):
        return self.norm(self.conv(x))

    __call__ = forward


class UNETRpp(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        chans = cfg.channels
        feat = chans[0] // 2
        base = cfg.img_size // 4

        def epa_stack(dim, extent, count):
            tokens = extent**3
            return ModuleList(
                EPABlock(dim, cfg.epa_heads, tokens, cfg.proj_tokens, rng)
                for _ in range(count)
            )

        self.downs = ModuleList(
            [Downsample(cfg.in_channels, chans[0], 4, rng)]
            + [Downsample(chans[i], chans[i + 1], 2, rng) for i in range(3)]
        )
        self.enc = ModuleList(
            epa_stack(chans[i], base // 2**i, cfg.epa_blocks) for i in range(4)
        )
        self.up_bottom = ConvTranspose3d(chans[3], chans[2], 2, rng, stride=2)
        self.dec = ModuleList(
            epa_stack(2 * chans[i], base // 2**i, 1) for i in reversed(range(3))
        )
        self.ups = ModuleList(
            [
                ConvTranspose3d(2 * chans[2], chans[1], 2, rng, stride=2),
                ConvTranspose3d(2 * chans[1], chans[0], 2, rng, stride=2),
            ]
        )
        self.up_final = ConvTranspose3d(2 * chans[0], feat, 4, rng, stride=4)
        self.input_conv = ConvBnRelu(cfg.in_channels, feat, rng)
        self.post_conv = ConvBnRelu(2 * feat, feat, rng)
        self.head = Conv3d(feat, cfg.out_classes, 1, rng)

    def forward(self, x, trace=None):
        cfg = self.cfg
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise DimensionError(
                f"unetrpp expects (N, {cfg.in_channels}, E, E, E) input, got {tuple(x.shape)}"
            )
        if tuple(x.shape[2:]) != (cfg.img_size,) * 3:
            raise DimensionError(
                f"unetrpp was built for {cfg.img_size}^3 inputs (its token projections are "
                f"size-bound), got extents {tuple(x.shape[2:])}"
            )

        skips = []
        h = x
        for i, (down, stack) in enumerate(zip(self.downs, self.enc), start=1):
            h = down(h)
            for block in stack:
                h = block(h)
            record(trace, f"stage{i}", h)
            skips.append(h)

        h = record(trace, "up_bottom", self.up_bottom(skips.pop()))
        for i, stack in enumerate(self.dec):
            h = F.concat([h, skips.pop()], axis=1)
            for block in stack:
                h = block(h)
            if i < len(self.ups):
                h = record(trace, f"up{2 - i}", self.ups[i](h))
        h = record(trace, "up_final", self.up_final(h))

        raw = record(trace, "input_conv", self.input_conv(x))
        h = self.post_conv(F.concat([h, raw], axis=1))
        return record(trace, "logits", self.head(h))

    __call__ = forward


def unetrpp_shape_table(cfg, extent: int, batch: int = 1):
    """Expected ``(stage, shape)`` pairs for a cubic input of ``extent``."""
    chans = cfg.channels
    feat = chans[0] // 2

    def cube(ch, div):
        return (batch, ch) + (extent // div,) * 3

    return [
        ("stage1", cube(chans[0], 4)),
        ("stage2", cube(chans[1], 8)),
        ("stage3", cube(chans[2], 16)),
        ("stage4", cube(chans[3], 32)),
        ("up_bottom", cube(chans[2], 16)),
        ("up2", cube(chans[1], 8)),
        ("up1", cube(chans[0], 4)),
        ("up_final", cube(feat, 1)),
        ("input_conv", cube(feat, 1)),
        ("logits", cube(cfg.out_classes, 1)),
    ]
